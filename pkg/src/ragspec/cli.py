"""Command-line entry point: ``ragspec {verify,simulate,sweep,cost}``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import clone

from . import __version__, checks, cost, fixtures
from . import lm as lm_mod
from .config import ExperimentConfig, load_config
from .engine import RapidDecoder, retrieval_augmented_target
from .exceptions import ConfigurationError, InputDomainError, InvariantBreach
from .oracle import eta_divergence_curve, exact_step_distribution, write_divergence_csv
from .retrieval import ChunkRetriever, read_corpus, write_retrieval_trace
from .sampling import RNG_ALGORITHM, softmax_t
from .serialization import write_json, write_jsonl

log = logging.getLogger("ragspec")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3
SWEEP_COLUMNS = ("eta", "acceptance_rate", "task_success", "oracle_beta", "oracle_success", "oracle_tv")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment file")
    common.add_argument("--seed", type=int)
    common.add_argument("--gamma", type=int)
    common.add_argument("--eta", type=float)
    common.add_argument("--temperature", type=float)
    common.add_argument("--bonus-token", action="store_true", default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--fixture", help="built-in scenario: needle, unrelated or self")
    common.add_argument("--repetitions", type=int)
    common.add_argument("--max-tokens", type=int)
    common.add_argument("--eta-grid", help="comma-separated transfer strengths for sweep")
    common.add_argument("--lengths", help="comma-separated context lengths for cost")
    common.add_argument("--full", action="store_true", default=None, help="verify at full sample sizes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ragspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="mode", required=True)
    sub.add_parser("verify", parents=[common], help="run the built-in invariant suites")
    sub.add_parser("simulate", parents=[common], help="generate with a target/drafter pair")
    sub.add_parser("sweep", parents=[common], help="sweep the transfer strength")
    sub.add_parser("cost", parents=[common], help="FLOPs model speedup curve")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.mode = args.mode
    for name in ("seed", "gamma", "eta", "temperature", "bonus_token", "out", "fixture",
                 "repetitions", "max_tokens", "full"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
            cfg.explicit.add(name)
    try:
        if args.eta_grid is not None:
            cfg.eta_grid = tuple(float(v) for v in args.eta_grid.replace(",", " ").split())
        if args.lengths is not None:
            cfg.lengths = tuple(float(v) for v in args.lengths.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if cfg.out is None:
        cfg.out = f"ragspec_out/{cfg.mode}"
    cfg.validate()
    return cfg


@dataclass
class Setup:
    target: lm_mod.LMBackend
    drafter: lm_mod.LMBackend
    context: np.ndarray
    query: np.ndarray
    retrieved: np.ndarray
    trace: list
    gold: int | None


def _setup(cfg: ExperimentConfig) -> Setup:
    if cfg.fixture is not None:
        sc = {
            "needle": fixtures.needle_scenario,
            "unrelated": fixtures.unrelated_scenario,
            "self": fixtures.self_speculation_scenario,
        }[cfg.fixture]()
        rcfg = sc.retrieval
        overrides = {k: getattr(cfg, k) for k in ("chunk_size", "sim_threshold", "min_budget", "divisor", "embed_dim")
                     if k in cfg.explicit}
        if overrides:
            rcfg = replace(rcfg, **overrides)
        target, drafter, context, source = sc.target, sc.drafter, sc.context, sc.drafter_corpus
        query = np.asarray(cfg.query) if "query" in cfg.explicit else sc.query
        gold = cfg.gold if "gold" in cfg.explicit else sc.gold
    else:
        try:
            target = lm_mod.load(cfg.target)
            drafter = lm_mod.load(cfg.drafter)
            docs = read_corpus(cfg.corpus)
        except (InputDomainError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc
        src_idx = cfg.document if cfg.retrieval_document is None else cfg.retrieval_document
        if not docs or max(cfg.document, src_idx) >= len(docs):
            raise ConfigurationError("document index out of range for corpus")
        context, source = docs[cfg.document], docs[src_idx]
        rcfg = cfg.retrieval_config()
        query = np.asarray(cfg.query, dtype=np.int64)
        gold = cfg.gold
    if target.vocab != drafter.vocab:
        raise ConfigurationError("target and drafter vocabularies differ")
    retriever = ChunkRetriever.from_config(rcfg).fit(source)
    retrieved = retriever.transform([query])[0]
    return Setup(target, drafter, context, query, retrieved, retriever.last_trace_, gold)


def _first_position_oracle(setup: Setup, eta: float, cfg: ExperimentConfig):
    """Exact output distribution of the first generated token."""
    z = setup.target.logits(np.concatenate([setup.context, setup.query]))
    q = softmax_t(setup.drafter.logits(np.concatenate([setup.retrieved, setup.query])), cfg.temperature)
    p, p_hat = retrieval_augmented_target(z, q, eta, cfg.temperature, cfg.tail_factor)
    return z, q, exact_step_distribution(p, p_hat, q)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, cfg: ExperimentConfig, seeds, files, started: float) -> None:
    manifest = {
        "artifact": "ragspec",
        "version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "config": cfg.snapshot(),
        "seeds": list(seeds),
        "outputs": {str(f.relative_to(out)): _sha256(f) for f in files},
        "wall_time_s": time.time() - started,
    }
    write_json(manifest, out / "manifest.json")


def _decoder(setup: Setup, cfg: ExperimentConfig) -> RapidDecoder:
    ec = cfg.engine_config()
    return RapidDecoder(
        setup.target, setup.drafter, gamma=ec.gamma, eta=ec.eta, temperature=ec.temperature,
        tail_factor=ec.tail_factor, max_tokens=ec.max_tokens, seed=ec.seed, bonus_token=ec.bonus_token,
    )


def _run_many(decoder: RapidDecoder, setup: Setup, seeds):
    runs = []
    for s in seeds:
        tokens = decoder.generate(setup.context, setup.query, retrieved=setup.retrieved, seed=s)
        runs.append((s, tokens, decoder.stats_, decoder.traces_))
    return runs


def _aggregate(runs, gold):
    drafted = sum(st.total_drafted for _, _, st, _ in runs)
    accepted = sum(st.total_accepted for _, _, st, _ in runs)
    out = {
        "runs": len(runs),
        "total_drafted": drafted,
        "total_accepted": accepted,
        "acceptance_rate": accepted / drafted if drafted else 0.0,
    }
    if gold is not None:
        hits = sum(1 for _, toks, _, _ in runs if toks and toks[0] == gold)
        out["task_success"] = hits / len(runs)
    return out


def cmd_simulate(cfg: ExperimentConfig) -> int:
    started = time.time()
    setup = _setup(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(cfg.repetitions)]
    runs = _run_many(_decoder(setup, cfg), setup, seeds)
    files = [out / "retrieval.csv"]
    write_retrieval_trace(setup.trace, files[0])
    for i, (seed, tokens, stats, traces) in enumerate(runs):
        if sum(t.accepted_count for t in traces) != stats.total_accepted:
            raise InvariantBreach("stats disagree with traces")
        run_dir = out if cfg.repetitions == 1 else out / f"run_{i:03d}"
        run_dir.mkdir(exist_ok=True)
        record = {"seed": seed, "tokens": tokens, **stats.to_dict()}
        if setup.gold is not None:
            record["task_success"] = bool(tokens and tokens[0] == setup.gold)
        write_jsonl([t.to_dict() for t in traces], run_dir / "traces.jsonl")
        write_json(record, run_dir / "stats.json")
        files += [run_dir / "traces.jsonl", run_dir / "stats.json"]
    summary = _aggregate(runs, setup.gold)
    _, _, rep = _first_position_oracle(setup, cfg.eta, cfg)
    summary["oracle"] = {"beta": rep.beta, "tv_output_vs_p": rep.tv_distance}
    if setup.gold is not None:
        summary["oracle"]["task_success"] = float(rep.exact_output[setup.gold])
    write_json(summary, out / "summary.json")
    files.append(out / "summary.json")
    _write_manifest(out, cfg, seeds, files, started)
    print(f"simulate: {summary['runs']} run(s), acceptance rate {summary['acceptance_rate']:.4f}"
          + (f", task success {summary['task_success']:.3f}" if "task_success" in summary else "")
          + f" -> {out}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    started = time.time()
    setup = _setup(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(cfg.repetitions)]
    base = _decoder(setup, cfg)
    rows = []
    for eta in cfg.eta_grid:
        decoder = clone(base).set_params(eta=float(eta))
        agg = _aggregate(_run_many(decoder, setup, seeds), setup.gold)
        _, _, rep = _first_position_oracle(setup, float(eta), cfg)
        rows.append((
            float(eta),
            agg["acceptance_rate"],
            agg.get("task_success", float("nan")),
            rep.beta,
            float(rep.exact_output[setup.gold]) if setup.gold is not None else float("nan"),
            rep.tv_distance,
        ))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([format(v, ".17g") for v in row])
    files = [out / "sweep.csv"]
    grid = sorted(set([0.0, *map(float, cfg.eta_grid)]))
    z, q, _ = _first_position_oracle(setup, 0.0, cfg)
    write_divergence_csv(eta_divergence_curve(z, q, cfg.temperature, grid, cfg.tail_factor), out / "divergence.csv")
    files.append(out / "divergence.csv")
    _write_manifest(out, cfg, seeds, files, started)
    for row in rows:
        print("sweep: eta={:g} acceptance={:.4f} success={:.3f} oracle_beta={:.4f} oracle_tv={:.4f}".format(
            row[0], row[1], row[2], row[3], row[5]))
    return EXIT_OK


def cmd_cost(cfg: ExperimentConfig) -> int:
    started = time.time()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.cost_params()
    try:
        rows = cost.speedup_curve(params, cfg.lengths)
    except InputDomainError as exc:
        raise ConfigurationError(str(exc)) from exc
    cost.write_cost_csv(rows, out / "cost.csv")
    cross = cost.crossover_length(params, cfg.lengths, cfg.threshold)
    write_json({"threshold": cfg.threshold, "crossover_length": cross}, out / "crossover.json")
    _write_manifest(out, cfg, [], [out / "cost.csv", out / "crossover.json"], started)
    print(f"cost: {len(rows)} lengths, crossover at {cross if cross is not None else 'none'} -> {out}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig) -> int:
    results = checks.run_suites(seed=cfg.seed, quick=not cfg.full)
    report = {"passed": all(r.passed for r in results), "suites": []}
    for r in results:
        worst = r.minimized()
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.cases} cases, {len(r.failures)} failures")
        if worst is not None:
            print(f"    smallest failing case: {worst.case}\n    {worst.detail}")
        report["suites"].append({
            "name": r.name,
            "passed": r.passed,
            "cases": r.cases,
            "failures": len(r.failures),
            "minimized": None if worst is None else {"case": worst.case, "detail": worst.detail},
        })
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(report, out / "verify_report.json")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


COMMANDS = {"verify": cmd_verify, "simulate": cmd_simulate, "sweep": cmd_sweep, "cost": cmd_cost}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.mode](cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantBreach as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
