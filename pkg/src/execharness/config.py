"""Run configuration: retrieval/memory/verifier constants, fault rates, profiles.

RunConfig serializes to a flat key=value text file. Unknown keys are a hard
error so a typo in a sweep script fails loudly instead of silently running the
default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import ConfigurationError


@dataclass(frozen=True)
class FaultModelConfig:
    """Per-step fault rates for the scripted policy.

    p_fm: chance of re-attempting a subgoal completed outside the history
        window (suppressed when the memory context holds its success record).
    p_fv: chance of proposing an infeasible or wrong-object action.
    cascade_multiplier: factor applied to p_fv while the last failure is
        uncorrected.
    decompose_corruption: chance the scripted decomposer returns a corrupted
        subgoal list (one dropped or two swapped).
    """

    p_fm: float = 0.35
    p_fv: float = 0.08
    cascade_multiplier: float = 3.0
    history_window_H: int = 8
    decompose_corruption: float = 0.043

    def violations(self) -> list[str]:
        out = []
        for name in ("p_fm", "p_fv", "decompose_corruption"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name} outside [0,1]")
        if self.cascade_multiplier < 1.0:
            out.append("cascade_multiplier must be >= 1")
        if self.history_window_H < 1:
            out.append("history_window_H must be >= 1")
        return out

    def zeroed(self) -> "FaultModelConfig":
        return replace(self, p_fm=0.0, p_fv=0.0, decompose_corruption=0.0)


@dataclass(frozen=True)
class RunConfig:
    k_retrieve: int = 3
    delta_c: int = 20
    n_max: int = 50
    r_max: int = 3
    theta_v: float = 0.65
    label_horizon: int = 5
    history_window_H: int = 8
    embedding_dim_D: int = 512
    action_dim_A: int = 8
    seeds: tuple[int, ...] = (1, 2, 3)
    fault_rates: FaultModelConfig = field(default_factory=FaultModelConfig)
    # artifact plumbing beyond the paper constants
    subgoal_dim_Dg: int = 256
    grid_size: int = 6
    completion_threshold: float = 0.5
    completion_horizon: int = 1
    mlp_hidden_preset: str = "appendix"
    dropout_rate: float = 0.1


def validate_config(cfg: RunConfig) -> list[str]:
    """Return every invariant violation; an empty list means the config is valid."""
    out = []
    if cfg.k_retrieve < 1:
        out.append("k must be ≥ 1")
    if cfg.delta_c < 1:
        out.append("delta_c must be ≥ 1")
    if cfg.n_max < 1:
        out.append("n_max must be ≥ 1")
    if cfg.r_max < 0:
        out.append("r_max must be ≥ 0")
    if not 0.0 <= cfg.theta_v <= 1.0:
        out.append("theta_v outside [0,1]")
    if cfg.label_horizon < 1:
        out.append("label_horizon must be ≥ 1")
    if cfg.completion_horizon < 1:
        out.append("completion_horizon must be ≥ 1")
    if cfg.history_window_H < 1:
        out.append("history_window_H must be ≥ 1")
    if cfg.embedding_dim_D < 2:
        out.append("embedding_dim_D must be ≥ 2")
    if cfg.action_dim_A < 8:
        out.append("action_dim_A must be ≥ 8")
    if cfg.subgoal_dim_Dg < 2:
        out.append("subgoal_dim_Dg must be ≥ 2")
    if cfg.grid_size < 4:
        out.append("grid_size must be ≥ 4")
    if not 0.0 <= cfg.completion_threshold <= 1.0:
        out.append("completion_threshold outside [0,1]")
    if not 0.0 <= cfg.dropout_rate < 1.0:
        out.append("dropout_rate outside [0,1)")
    if len(cfg.seeds) == 0:
        out.append("seeds must be non-empty")
    out.extend(cfg.fault_rates.violations())
    return out


def test_profile() -> RunConfig:
    """Small dimensions so property tests and benchmarks run in seconds."""
    return RunConfig(embedding_dim_D=32, subgoal_dim_Dg=16, mlp_hidden_preset="test")


def full_profile() -> RunConfig:
    return RunConfig()


PROFILES = {"full": full_profile, "test": test_profile}


def profile(name: str) -> RunConfig:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")


# --- key=value config file format -------------------------------------------

_FAULT_PREFIX = "fault."


def _scalar_to_str(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "fault_rates":
            for ff in dataclasses.fields(FaultModelConfig):
                lines.append(f"{_FAULT_PREFIX}{ff.name}={_scalar_to_str(getattr(value, ff.name))}")
        elif f.name == "seeds":
            lines.append("seeds=" + ",".join(str(s) for s in value))
        else:
            lines.append(f"{f.name}={_scalar_to_str(value)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg))


def _parse_typed(raw: str, typ, key: str):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}")
    raise ConfigurationError(f"config key {key!r}: unsupported type {typ}")


def config_from_text(text: str) -> RunConfig:
    run_fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    fault_fields = {f.name: f for f in dataclasses.fields(FaultModelConfig)}
    run_kwargs: dict = {}
    fault_kwargs: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key.startswith(_FAULT_PREFIX):
            fname = key[len(_FAULT_PREFIX):]
            if fname not in fault_fields:
                raise ConfigurationError(f"unknown config key {key!r}")
            fault_kwargs[fname] = _parse_typed(raw, _field_type(fault_fields[fname]), key)
        elif key == "seeds":
            try:
                run_kwargs["seeds"] = tuple(int(x) for x in raw.split(",") if x.strip() != "")
            except ValueError:
                raise ConfigurationError(f"config key 'seeds': cannot parse {raw!r} as int list")
        elif key in run_fields and key != "fault_rates":
            run_kwargs[key] = _parse_typed(raw, _field_type(run_fields[key]), key)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    if fault_kwargs:
        run_kwargs["fault_rates"] = FaultModelConfig(**fault_kwargs)
    return RunConfig(**run_kwargs)


def _field_type(f: dataclasses.Field):
    # dataclass field types arrive as strings under "from __future__ import annotations"
    mapping = {"int": int, "float": float, "str": str, "bool": bool}
    t = f.type
    if isinstance(t, str):
        return mapping.get(t, str)
    return t


def load_config(path: str | Path) -> RunConfig:
    return config_from_text(Path(path).read_text())
