import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragspec import lm
from ragspec.exceptions import InputDomainError
from ragspec.fixtures import table_pair
from ragspec.lm import ContextOracleLM, NGramLM, TableLM, Vocab
from ragspec.sampling import softmax_t


def test_vocab_rejects_tiny():
    with pytest.raises(InputDomainError):
        Vocab(1)


def test_table_fallback_uniform():
    m = TableLM(3, 1, {(0,): [0.2, 0.3, 0.5]}, [1 / 3, 1 / 3, 1 / 3])
    z = m.logits([2])
    assert np.all(z == z[0])


def test_table_round_trip():
    table = {(0,): [0.2, 0.3, 0.5], (1,): [0.0, 1.0, 0.0]}
    m = TableLM(3, 1, table, [1 / 3, 1 / 3, 1 / 3])
    for key, p in table.items():
        np.testing.assert_allclose(softmax_t(m.logits([2, *key]), 1.0), p, rtol=0, atol=1e-12)


def test_ngram_add_k():
    m = NGramLM(3, 1, {(0,): [2, 0, 0]}, smoothing=1.0)
    np.testing.assert_allclose(softmax_t(m.logits([0]), 1.0), [3 / 5, 1 / 5, 1 / 5], atol=1e-15)


def test_ngram_unseen_window_uniform():
    m = NGramLM(4, 2, {(0, 1): [1, 2, 3, 4]}, smoothing=0.5)
    np.testing.assert_allclose(m.probs([3, 3]), [0.25] * 4, atol=1e-15)


@given(st.lists(st.lists(st.integers(0, 3), min_size=3, max_size=12), min_size=1, max_size=6),
       st.floats(0.01, 5.0), st.integers(0, 2))
@settings(max_examples=40)
def test_ngram_normalized(corpus, k, order):
    m = NGramLM.from_sequences(4, order, corpus, smoothing=k)
    for key in m.counts:
        assert abs(m.probs(list(key)).sum() - 1) <= 1e-12
        np.testing.assert_allclose(
            np.exp(m.logits(list(key))), (m.counts[key] + k) / (m.counts[key].sum() + 4 * k), rtol=1e-12
        )


def test_context_oracle_example():
    m = ContextOracleLM(8, [((7, 7), 2, 0.9)], np.full(8, 1 / 8))
    # confidence on the answer, the rest proportional to the base distribution
    m3 = ContextOracleLM(3, [((1, 1), 2, 0.9)], [1 / 3] * 3)
    np.testing.assert_allclose(m3.probs([0, 1, 1, 0]), [0.05, 0.05, 0.9], atol=1e-15)
    np.testing.assert_allclose(m.probs([7, 7]), [0.1 / 7] * 2 + [0.9] + [0.1 / 7] * 5, atol=1e-15)
    np.testing.assert_allclose(m.probs([7, 0, 7]), np.full(8, 1 / 8), atol=1e-15)


def test_context_window_truncates_oldest():
    m = ContextOracleLM(5, [((1, 2), 3, 0.8)], [0.2] * 5, context_window=3)
    assert m.probs([1, 2, 0])[3] == pytest.approx(0.8)
    assert m.probs([1, 2, 0, 0])[3] == pytest.approx(0.2)


def test_unknown_token_rejected():
    m = TableLM.point_mass(3, 1)
    with pytest.raises(InputDomainError):
        m.logits([0, 3])
    with pytest.raises(InputDomainError):
        m.logits_batch([0], [])


def test_logits_deterministic_and_finite():
    target, _ = table_pair(seed=1, vocab=4, order=2)
    a, b = target.logits([0, 1, 2]), target.logits([0, 1, 2])
    assert a.tobytes() == b.tobytes()
    assert np.all(np.isfinite(TableLM.point_mass(4, 2).logits([1])))


def test_returned_logits_do_not_alias_backend_state():
    m = TableLM.point_mass(3, 0)
    z = m.logits([])
    z[:] = 0
    assert m.probs([])[0] == 1.0


def test_batch_examples():
    m = TableLM(3, 1, {(1,): [0.2, 0.3, 0.5], (2,): [0.6, 0.2, 0.2]}, [1 / 3] * 3)
    out = m.logits_batch([1], [2, 0])
    np.testing.assert_array_equal(out[0], m.logits([1]))
    np.testing.assert_array_equal(out[1], m.logits([1, 2]))
    single = m.logits_batch([1], [2])
    assert len(single) == 1
    np.testing.assert_array_equal(single[0], m.logits([1]))


def _backends(V, m):
    rng = np.random.default_rng(V * 10 + m)
    windows = list(itertools.product(range(V), repeat=m))
    yield TableLM(V, m, {w: rng.dirichlet(np.ones(V)) for w in windows[::2]}, rng.dirichlet(np.ones(V)))
    yield NGramLM(V, m, {w: rng.integers(0, 5, V) for w in windows}, smoothing=0.5)
    yield NGramLM(V, m, {w: rng.integers(0, 5, V) for w in windows}, smoothing=0.5, context_window=2)
    trig = tuple(int(t) for t in rng.integers(0, V, 2))
    yield ContextOracleLM(V, [(trig, 0, 0.7), ((V - 1,), 1, 0.6)], rng.dirichlet(np.ones(V)))
    yield ContextOracleLM(V, [(trig, 0, 0.7)], rng.dirichlet(np.ones(V)), context_window=3)


@pytest.mark.parametrize("V,m", [(v, m) for v in (2, 3, 4) for m in (0, 1, 2)])
def test_batch_equals_loop_exhaustive(V, m):
    seqs = [s for n in range(0, 4) for s in itertools.product(range(V), repeat=n)]
    for backend in _backends(V, m):
        for prefix in seqs[:: max(1, len(seqs) // 20)]:
            for cand in itertools.product(range(V), repeat=2):
                batch = backend.logits_batch(prefix, cand)
                loop = [backend.logits(list(prefix) + list(cand[:k])) for k in range(len(cand))]
                for a, b in zip(batch, loop):
                    np.testing.assert_array_equal(a, b)


@given(st.lists(st.integers(0, 3), max_size=10), st.lists(st.integers(0, 3), min_size=1, max_size=6))
def test_batch_equals_loop_property(prefix, cand):
    for backend in _backends(4, 2):
        for k, z in enumerate(backend.logits_batch(prefix, cand)):
            np.testing.assert_array_equal(z, backend.logits(prefix + cand[:k]))


@pytest.mark.parametrize("backend", list(_backends(4, 2)) + [TableLM.point_mass(5, 3, context_window=7)])
def test_serialization_round_trip(backend, tmp_path):
    text = lm.dumps(backend)
    again = lm.loads(text)
    assert lm.dumps(again) == text
    assert again == backend
    for ctx in ([], [0], [1, 2], [3, 3, 0, 1]):
        np.testing.assert_array_equal(again.logits(ctx), backend.logits(ctx))
    lm.save(backend, tmp_path / "m.txt")
    assert lm.load(tmp_path / "m.txt") == backend


def test_table_serialization_exact_decimals():
    p = [0.1, 0.2, 0.7000000000000001]
    m = lm.loads(lm.dumps(TableLM(3, 1, {(2,): p}, [1 / 3, 1 / 3, 1 / 3])))
    assert m.table[(2,)].tolist() == p
    assert m.fallback.tolist() == [1 / 3, 1 / 3, 1 / 3]


def test_serialization_format():
    m = NGramLM(3, 1, {(0,): [2, 0, 0]}, smoothing=1.0)
    assert lm.dumps(m) == "ngram 3 1 1.0\n0 | 2.0 0.0 0.0\n"


@pytest.mark.parametrize("text", ["", "table 3 1\n", "table 3 1 0\n0 | 1 0 0\n", "blob 3 1 0\n", "table 3 1 0 foo=1\n"])
def test_loads_rejects_malformed(text):
    with pytest.raises(InputDomainError):
        lm.loads(text)
