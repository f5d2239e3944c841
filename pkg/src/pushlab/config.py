"""Run configuration: dataclasses, JSON round-trip, and dotted-key overrides.

The on-disk format is JSON with a `schema_version` field. Unknown keys are
rejected and override values are type-checked against the dataclass fields,
so a config echo written by a run always reloads to the identical RunConfig.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1

OBJECTIVE_NAMES = ("avoid_obstacles", "manipulation", "minimize_time")
VARIANTS = ("ahrm", "mhrm", "fhrm", "ls")


@dataclass
class EnvConfig:
    """Geometry and kinematics of the planar pushing table (unit square)."""

    target_radius: float = 0.04
    pusher_radius: float = 0.03
    obstacle_radius: float = 0.04
    obstacle_ring_radius: float = 0.18
    obstacle_angles_deg: tuple[float, ...] = (45.0, 135.0, 225.0, 315.0)
    phase1_radius: float = 0.30  # approach/pre-manipulation boundary about the center
    contact_margin: float = 0.03  # contact boundary = r_t + r_p + margin, about the target
    max_speed: float = 0.05  # pusher displacement per step per axis at |action|=1
    dt: float = 0.05  # seconds per step
    max_steps: int = 200
    pusher_start: tuple[float, float] = (0.10, 0.10)
    start_jitter: float = 0.01

    @property
    def center(self):
        return (0.5, 0.5)

    @property
    def contact_radius(self):
        return self.target_radius + self.pusher_radius + self.contact_margin

    @property
    def n_obstacles(self):
        return len(self.obstacle_angles_deg)

    @property
    def obs_dim(self):
        return 8 + 4 * self.n_obstacles

    def validate(self):
        if not (self.contact_radius < self.phase1_radius < 0.5):
            raise ValueError("expected contact_radius < phase1_radius < distance to table edge")
        if self.max_steps < 1 or self.max_speed <= 0 or self.dt <= 0:
            raise ValueError("max_steps, max_speed and dt must be positive")

    @classmethod
    def asymmetric(cls):
        """Three obstacles clustered on the north side of the ring."""
        return cls(obstacle_angles_deg=(45.0, 90.0, 135.0))


@dataclass
class PpoConfig:
    """PPO hyperparameters (defaults match the shipped experiment setup)."""

    gamma: float = 0.995
    horizon: int = 512
    entropy_coef: float = 0.02
    clip: float = 0.05
    gae_lambda: float = 0.95
    minibatch: int = 64
    lr: float = 0.001
    epochs: int = 3
    value_coef: float = 0.5
    hidden_widths: tuple[int, ...] = (64, 64, 64)
    optimizer: str = "sgd"  # "sgd" (plain gradient ascent) or "adam"
    normalize_advantages: bool = True

    def validate(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if min(self.horizon, self.minibatch, self.epochs) < 1:
            raise ValueError("horizon, minibatch and epochs must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden layer widths must be positive")


@dataclass
class MechanismConfig:
    """Reward-hierarchy mechanism parameters shared by the hierarchical variants."""

    visit_threshold: int = 30  # phase visits required before priorities are determined
    tau_window: int = 10  # episodes averaged into a constraint threshold
    convergence_tol: float = 0.05  # relative two-window mean tolerance
    transition_alpha: float = 100.0  # tanh slope of the phase-boundary blend
    transition_delta: float = 0.05  # half-width of the blend band (arena units)
    redetermine_every: int = 0  # 0 = determine once and freeze; >0 = refresh period (ablation)
    mhrm_orders: tuple[tuple[str, ...], ...] = (
        ("avoid_obstacles", "minimize_time", "manipulation"),
        ("avoid_obstacles", "manipulation", "minimize_time"),
        ("manipulation", "minimize_time", "avoid_obstacles"),
    )
    fhrm_order: tuple[str, ...] = ("manipulation", "avoid_obstacles", "minimize_time")

    def validate(self):
        if self.visit_threshold < 1 or self.tau_window < 2:
            raise ValueError("visit_threshold must be >= 1 and tau_window >= 2")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if not (
            math.isfinite(self.transition_alpha)
            and math.isfinite(self.transition_delta)
            and self.transition_alpha > 0
            and self.transition_delta > 0
        ):
            raise ValueError("transition_alpha and transition_delta must be finite and positive")
        for order in (*self.mhrm_orders, self.fhrm_order):
            if sorted(order) != sorted(OBJECTIVE_NAMES):
                raise ValueError(f"{order!r} is not a permutation of {OBJECTIVE_NAMES}")


@dataclass
class RunConfig:
    """One training run: variant, seed, episode budget and nested configs."""

    variant: str = "ahrm"
    seed: int = 0
    episodes: int = 300
    out_dir: str = ""
    discard_violations: bool = False  # drop constraint-terminated steps from the PPO buffer
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        self.env.validate()
        self.ppo.validate()
        self.mechanism.validate()
        return self


def _to_jsonable(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION}
    out.update(_to_jsonable(cfg))
    return out


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def _coerce(value, f: dataclasses.Field, where: str):
    target = f.type
    if target.startswith("tuple"):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{where}: expected a list, got {value!r}")
        if "tuple[str" in target.replace(" ", ""):
            return tuple(tuple(inner) if isinstance(inner, (list, tuple)) else inner for inner in value)
        return tuple(
            tuple(inner) if isinstance(inner, (list, tuple)) else inner for inner in value
        )
    if target == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return value
    if target == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if target == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"{where}: expected a boolean, got {value!r}")
        return value
    if target == "str":
        if not isinstance(value, str):
            raise ValueError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _dataclass_from_dict(cls, data: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown config key(s) under {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = _NESTED.get((cls, name))
        if sub is not None:
            if not isinstance(value, dict):
                raise ValueError(f"{where}.{name}: expected an object")
            kwargs[name] = _dataclass_from_dict(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(value, f, f"{where}.{name}")
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "env"): EnvConfig,
    (RunConfig, "ppo"): PpoConfig,
    (RunConfig, "mechanism"): MechanismConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _dataclass_from_dict(RunConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config root must be a JSON object")
    return config_from_dict(data)


def apply_override(cfg: RunConfig, dotted_key: str, raw_value: str) -> RunConfig:
    """Apply one `a.b.c=value` override in place; value parsed as JSON or bare string."""
    parts = dotted_key.split(".")
    target = cfg
    path = "config"
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or part not in {
            f.name for f in dataclasses.fields(target)
        }:
            raise ValueError(f"unknown config key {dotted_key!r}")
        target = getattr(target, part)
        path += f".{part}"
    if not dataclasses.is_dataclass(target):
        raise ValueError(f"unknown config key {dotted_key!r}")
    fields = {f.name: f for f in dataclasses.fields(target)}
    leaf = parts[-1]
    if leaf not in fields:
        raise ValueError(f"unknown config key {dotted_key!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    setattr(target, leaf, _coerce(value, fields[leaf], f"{path}.{leaf}"))
    return cfg


def describe_config_keys() -> str:
    """Flat `key = default` listing of every config field, for --help output."""
    lines = []

    def walk(cls, prefix):
        for f in dataclasses.fields(cls):
            sub = _NESTED.get((cls, f.name))
            if sub is not None:
                walk(sub, f"{prefix}{f.name}.")
            else:
                if f.default is not dataclasses.MISSING:
                    default = f.default
                else:
                    default = f.default_factory()  # type: ignore[misc]
                lines.append(f"  {prefix}{f.name} = {default!r}")

    walk(RunConfig, "")
    return "\n".join(lines)
