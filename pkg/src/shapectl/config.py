"""Run configuration: one strict JSON document covering env, agent, data and analysis."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field

import numpy as np

from .dataset import DEFAULT_CORPUS_SIZE, DEFAULT_WALK_STEP
from .surrogate.env import DESK_ENV, EnvConfig
from .tqc import TQCConfig

SCHEMA_VERSION = 1
ENV_PROFILES = {"full": EnvConfig(), "desk": DESK_ENV}
# set at the top level of the run config, never inside the "tqc" section
TOP_LEVEL_AGENT_KEYS = ("dropout_p", "no_aux", "no_privileged")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class DatasetSpec:
    path: str | None = None  # load this file instead of generating
    corpus_size: int = DEFAULT_CORPUS_SIZE
    corpus_seed: int = 0
    threshold: float = 0.08
    walk_step: float = DEFAULT_WALK_STEP
    basis: str = "envelope"  # "envelope" or "reachable" (walk in the env's actuator-reachable subspace)

    def __post_init__(self):
        if self.corpus_size < 1:
            raise ValueError("corpus_size must be positive")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if not self.walk_step > 0:
            raise ValueError("walk_step must be positive")
        if self.basis not in ("envelope", "reachable"):
            raise ValueError("basis must be 'envelope' or 'reachable'")


@dataclass(frozen=True)
class EvalSpec:
    episodes_per_shape: int = 1
    episode_len: int | None = None  # default: one target hold (the env resample period)
    workers: int = 1
    n_disabled: int = 33  # fixed deployment mask size

    def __post_init__(self):
        if self.episodes_per_shape < 1 or self.workers < 1:
            raise ValueError("episodes_per_shape and workers must be positive")
        if self.episode_len is not None and self.episode_len < 1:
            raise ValueError("episode_len must be positive")
        if not 0 <= self.n_disabled <= 114:
            raise ValueError("n_disabled must lie in [0, 114]")


@dataclass(frozen=True)
class AnalysisSpec:
    sensitivity_states: int = 10_000
    sweep_k: tuple = (11, 23, 37, 58, 80, 114)
    n_random: int = 5
    top_subset: int = 60

    def __post_init__(self):
        object.__setattr__(self, "sweep_k", tuple(int(k) for k in self.sweep_k))
        if self.sensitivity_states < 1 or self.n_random < 1 or not 1 <= self.top_subset <= 146:
            raise ValueError("sensitivity_states, n_random and top_subset must be positive (top_subset <= 146)")
        if any(not 1 <= k <= 114 for k in self.sweep_k):
            raise ValueError("sweep_k entries must lie in [1, 114]")


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    env_profile: str = "full"
    env: EnvConfig = field(default_factory=EnvConfig)
    tqc: TQCConfig = field(default_factory=TQCConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    dropout_p: float = 0.3
    no_aux: bool = False
    no_privileged: bool = False
    eval: EvalSpec = field(default_factory=EvalSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version, "seed": self.seed, "output_dir": self.output_dir,
            "env_profile": self.env_profile, "env": self.env.to_dict(),
            "tqc": {k: v for k, v in self.tqc.to_dict().items() if k not in TOP_LEVEL_AGENT_KEYS},
            "dataset": dataclasses.asdict(self.dataset), "dropout_p": self.dropout_p,
            "no_aux": self.no_aux, "no_privileged": self.no_privileged,
            "eval": dataclasses.asdict(self.eval),
            "analysis": {**dataclasses.asdict(self.analysis), "sweep_k": list(self.analysis.sweep_k)},
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- parsing -------------------------------------------------------------------------

def _line_of(text: str, key: str) -> str:
    """Best-effort line number of a key in the source document."""
    needle = json.dumps(key) + ":"
    compact = needle.replace(":", "")
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.replace(" ", "")
        if needle in stripped or stripped.startswith(compact):
            return f" (line {n})"
    return ""


def _check_type(path: str, value, hint, text: str):
    """Validate a JSON value against a dataclass field annotation."""
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        if value is None:
            return value
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    where = path.rsplit(".", 1)[-1]
    bad = ConfigError(f"{path}: expected {getattr(hint, '__name__', hint)}, got {json.dumps(value)}"
                      f"{_line_of(text, where)}")
    if hint is bool:
        if not isinstance(value, bool):
            raise bad
    elif hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad
    elif hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad
        value = float(value)
    elif hint is str:
        if not isinstance(value, str):
            raise bad
    elif hint is tuple:
        if not isinstance(value, list):
            raise bad
        value = tuple(value)
    return value


def _build(cls, data, section: str, text: str, source: str, base=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: {section}: expected an object{_line_of(text, section)}")
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{source}: {section}.{key}: unknown key{_line_of(text, key)}")
        kwargs[key] = _check_type(f"{source}: {section}.{key}", value, hints[key], text)
    if cls is EnvConfig and kwargs.get("patch_matrix") is not None:
        kwargs["patch_matrix"] = tuple(tuple(float(x) for x in r) for r in kwargs["patch_matrix"])
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{source}: {section}: {e}") from None


def parse_config(text: str, source: str = "config") -> RunConfig:
    """Validate a JSON run configuration in full; raise ConfigError on the first problem."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be an object")
    if "schema_version" not in doc:
        raise ConfigError(f"{source}: schema_version: required field missing")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in doc:
        if key not in top:
            raise ConfigError(f"{source}: {key}: unknown key{_line_of(text, key)}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{source}: schema_version: unsupported value {json.dumps(doc['schema_version'])}, "
                          f"expected {SCHEMA_VERSION}{_line_of(text, 'schema_version')}")
    scalars = {}
    hints = typing.get_type_hints(RunConfig)
    for key in ("seed", "output_dir", "env_profile", "dropout_p", "no_aux", "no_privileged"):
        if key in doc:
            scalars[key] = _check_type(f"{source}: {key}", doc[key], hints[key], text)
    profile = scalars.get("env_profile", "full")
    if profile not in ENV_PROFILES:
        raise ConfigError(f"{source}: env_profile: must be one of {sorted(ENV_PROFILES)}{_line_of(text, 'env_profile')}")
    if scalars.get("seed", 0) < 0:
        raise ConfigError(f"{source}: seed: must be non-negative{_line_of(text, 'seed')}")
    tqc_doc = doc.get("tqc", {})
    if isinstance(tqc_doc, dict):
        for key in TOP_LEVEL_AGENT_KEYS:
            if key in tqc_doc:
                raise ConfigError(f"{source}: tqc.{key}: set this at the top level{_line_of(text, key)}")
    env = _build(EnvConfig, doc.get("env", {}), "env", text, source, base=ENV_PROFILES[profile])
    agent_flags = {k: scalars[k] for k in TOP_LEVEL_AGENT_KEYS if k in scalars}
    tqc = _build(TQCConfig, {**tqc_doc, **agent_flags} if isinstance(tqc_doc, dict) else tqc_doc, "tqc", text, source)
    return RunConfig(
        seed=scalars.get("seed", 0), output_dir=scalars.get("output_dir", "runs/default"), env_profile=profile,
        env=env, tqc=tqc, dataset=_build(DatasetSpec, doc.get("dataset", {}), "dataset", text, source),
        dropout_p=tqc.dropout_p, no_aux=tqc.no_aux, no_privileged=tqc.no_privileged,
        eval=_build(EvalSpec, doc.get("eval", {}), "eval", text, source),
        analysis=_build(AnalysisSpec, doc.get("analysis", {}), "analysis", text, source),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e.strerror}") from None
    return parse_config(text, str(path))


def stream_seed(root: int, name: str) -> int:
    """Independent integer seed for a named sub-stream of the root seed."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence(root, spawn_key=(key,)).generate_state(1, dtype=np.uint32)[0])
