"""Flat run configuration: one `key = value` line per field.

Every field has a default, so an empty file is a valid config.  The
canonical text form lists fields in declaration order; parsing it back
yields an identical config (parse -> print -> parse is a fixed point).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .envsim import ENV_IDS, PerturbationSpec
from .errors import ConfigError


@dataclass
class RunConfig:
    env_id: str = "point_reach"
    perturbation: str = "none"
    seed: int = 0
    total_steps: int = 50000
    horizon: int = 50
    expert_path: str = ""
    out_dir: str = ""
    n_expert: int = 10
    # representation
    embed_dim: int = 32
    target_sync_interval: int = 500
    # rewards
    eta: float = 0.5
    reward_variant: str = "expert_likeness"
    cost_kind: str = "cosine"
    r2_max: float = 10.0
    sinkhorn_epsilon: float = 0.05
    sinkhorn_max_iterations: int = 200
    sinkhorn_marginal_tol: float = 1e-6
    reward_space: str = "embedding"
    # learner
    gamma: float = 0.99
    polyak: float = 0.005
    policy_delay: int = 2
    sigma_explore: float = 0.1
    sigma_target: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 128
    buffer_capacity: int = 100000
    learning_rate: float = 3e-4
    inverse_weight: float = 1.0
    bc_epochs: int = 50
    update_every: int = 1
    eval_interval: int = 1000
    eval_episodes: int = 10
    # ablations
    no_representation: bool = False
    no_discriminator: bool = False

    def __post_init__(self):
        validate(self)


_FIELDS = None


def _field_types():
    global _FIELDS
    if _FIELDS is None:
        _FIELDS = {f.name: f.type for f in fields(RunConfig)}
    return _FIELDS


def _coerce(key, type_name, raw):
    raw = raw.strip()
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "bool":
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type_name}") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def validate(cfg):
    """Range and vocabulary checks; raises ConfigError naming the bad key."""
    if cfg.env_id not in ENV_IDS:
        raise ConfigError("env_id", f"unknown environment {cfg.env_id!r}")
    PerturbationSpec.parse(cfg.perturbation)
    positive_ints = (
        "horizon",
        "n_expert",
        "embed_dim",
        "policy_delay",
        "batch_size",
        "buffer_capacity",
        "update_every",
        "eval_interval",
        "eval_episodes",
        "sinkhorn_max_iterations",
    )
    for key in positive_ints:
        if getattr(cfg, key) < 1:
            raise ConfigError(key, f"must be >= 1, got {getattr(cfg, key)}")
    for key in ("total_steps", "target_sync_interval", "bc_epochs"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, f"must be >= 0, got {getattr(cfg, key)}")
    for key in ("eta", "sigma_explore", "sigma_target", "inverse_weight"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, f"must be >= 0, got {getattr(cfg, key)}")
    for key in ("noise_clip", "learning_rate", "r2_max", "sinkhorn_epsilon", "sinkhorn_marginal_tol"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(key, f"must be > 0, got {getattr(cfg, key)}")
    if not 0.0 <= cfg.gamma < 1.0:
        raise ConfigError("gamma", f"must lie in [0, 1), got {cfg.gamma}")
    if not 0.0 < cfg.polyak <= 1.0:
        raise ConfigError("polyak", f"must lie in (0, 1], got {cfg.polyak}")
    if cfg.reward_variant not in ("paper_literal", "expert_likeness"):
        raise ConfigError("reward_variant", f"unknown variant {cfg.reward_variant!r}")
    if cfg.cost_kind not in ("cosine", "euclidean"):
        raise ConfigError("cost_kind", f"unknown cost {cfg.cost_kind!r}")
    if cfg.reward_space not in ("embedding", "pixel"):
        raise ConfigError("reward_space", f"must be embedding or pixel, got {cfg.reward_space!r}")


def parse_config(text):
    """Parse `key = value` lines into a RunConfig.

    Blank lines and `#` comments are ignored; unknown or repeated keys are
    rejected.  Values may not contain `#`.
    """
    types = _field_types()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected `key = value`, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(key, "unknown configuration key")
        if key in values:
            raise ConfigError(key, "key appears twice")
        values[key] = _coerce(key, types[key], raw)
    return RunConfig(**values)


def canonical(cfg):
    """Deterministic text form; parse(canonical(cfg)) == cfg."""
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def apply_overrides(cfg, overrides):
    """Return a copy of ``cfg`` with string-valued overrides coerced in."""
    types = _field_types()
    values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    for key, raw in overrides.items():
        if key not in types:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _coerce(key, types[key], raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(canonical(cfg))
