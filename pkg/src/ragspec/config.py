"""Experiment configuration: a flat ``key = value`` text file.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored. Lists (``query``, ``eta_grid``, ``lengths``) are whitespace- or
comma-separated. Relative paths resolve against the config file's directory.
Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .cost import DEFAULT_LENGTHS, CostParams
from .engine import ETA_GRID, EngineConfig
from .exceptions import ConfigurationError, InputDomainError
from .retrieval import RetrievalConfig

__all__ = ["ExperimentConfig", "parse_config", "load_config", "MODES", "FIXTURES"]

MODES = ("verify", "simulate", "sweep", "cost")
FIXTURES = ("needle", "unrelated", "self")

_PATH_KEYS = ("target", "drafter", "corpus", "out")
_LIST_INT = ("query",)
_LIST_FLOAT = ("eta_grid", "lengths")


@dataclass
class ExperimentConfig:
    mode: str = "simulate"
    fixture: str | None = None
    target: str | None = None
    drafter: str | None = None
    corpus: str | None = None
    document: int = 0
    retrieval_document: int | None = None
    query: tuple = ()
    gold: int | None = None
    out: str | None = None
    repetitions: int = 1
    seed: int = 0
    # engine
    gamma: int = 10
    eta: float = 0.0
    temperature: float = 1.0
    tail_factor: float = 0.1
    max_tokens: int = 32
    bonus_token: bool = False
    # retrieval
    chunk_size: int = 512
    sim_threshold: float = 0.3
    min_budget: int = 4096
    divisor: float = 24.0
    embed_dim: int = 64
    # sweep
    eta_grid: tuple = ETA_GRID
    # cost
    target_params: float = 8e9
    drafter_params: float = 8e9
    retrieval_len: float = 4096
    beta_sd: float = 0.6
    beta_rapid: float = 0.8
    lengths: tuple = DEFAULT_LENGTHS
    threshold: float = 1.0
    # verify
    full: bool = False
    explicit: set = field(default_factory=set, repr=False, compare=False)

    def engine_config(self, seed: int | None = None) -> EngineConfig:
        try:
            return EngineConfig(
                gamma=self.gamma,
                eta=self.eta,
                temperature=self.temperature,
                tail_factor=self.tail_factor,
                max_tokens=self.max_tokens,
                seed=self.seed if seed is None else seed,
                bonus_token=self.bonus_token,
            )
        except InputDomainError as exc:
            raise ConfigurationError(str(exc)) from exc

    def retrieval_config(self) -> RetrievalConfig:
        try:
            return RetrievalConfig(
                chunk_size=self.chunk_size,
                sim_threshold=self.sim_threshold,
                min_budget=self.min_budget,
                divisor=self.divisor,
                embed_dim=self.embed_dim,
            )
        except InputDomainError as exc:
            raise ConfigurationError(str(exc)) from exc

    def cost_params(self) -> CostParams:
        try:
            return CostParams(
                target_params=self.target_params,
                drafter_params=self.drafter_params,
                context_len=self.lengths[0] if self.lengths else 1,
                retrieval_len=self.retrieval_len,
                gamma=self.gamma,
                beta_sd=self.beta_sd,
                beta_rapid=self.beta_rapid,
            )
        except InputDomainError as exc:
            raise ConfigurationError(str(exc)) from exc

    def snapshot(self) -> dict:
        d = asdict(self)
        d.pop("explicit")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.fixture is not None and self.fixture not in FIXTURES:
            raise ConfigurationError(f"fixture must be one of {FIXTURES}")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.mode in ("simulate", "sweep") and self.fixture is None:
            missing = [k for k in ("target", "drafter", "corpus") if getattr(self, k) is None]
            if missing:
                raise ConfigurationError(f"{self.mode} needs a fixture or: {', '.join(missing)}")
            for k in ("target", "drafter", "corpus"):
                if not Path(getattr(self, k)).is_file():
                    raise ConfigurationError(f"{k} file not found: {getattr(self, k)}")
        if self.mode == "sweep" and not self.eta_grid:
            raise ConfigurationError("eta_grid must be non-empty")
        self.engine_config()
        self.retrieval_config()
        if self.mode == "cost":
            if not self.lengths:
                raise ConfigurationError("lengths must be non-empty")
            self.cost_params()


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key: str, value: str):
    value = value.strip()
    if key in _LIST_INT:
        return tuple(int(v) for v in value.replace(",", " ").split())
    if key in _LIST_FLOAT:
        return tuple(float(v) for v in value.replace(",", " ").split())
    kind = _TYPES[key]
    if value.lower() in ("none", "") and "None" in kind:
        return None
    if kind.startswith("bool"):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return value


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _TYPES or key == "explicit":
            raise ConfigurationError(f"line {lineno}: expected 'key = value' with a known key, got {line!r}")
        try:
            val = _convert(key, value)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: {exc}") from exc
        if key in _PATH_KEYS and val is not None and base_dir is not None:
            val = str((base_dir / val).resolve()) if not Path(val).is_absolute() else val
        setattr(cfg, key, val)
        cfg.explicit.add(key)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent)
