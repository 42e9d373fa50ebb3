"""Flat ``key = value`` configuration files for simulation runs.

Lines starting with ``#`` are comments.  Precedence is command-line override,
then file value, then the dataclass default.  :func:`format_config` writes
the effective configuration back in the same format.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigError
from .market import MappingKind, PathMode, SimulationConfig, VolMapping

SEED_ENV = "AVALANCHE_SEED"


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _events(text: str) -> tuple:
    out = []
    for item in filter(None, (p.strip() for p in text.split(","))):
        step, _, size = item.partition(":")
        out.append((int(step), float(size)))
    return tuple(out)


def _fmt_events(events) -> str:
    return ",".join(f"{int(s)}:{float(v)!r}" for s, v in events)


def _matrix(text: str) -> tuple:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ConfigError("onsager.transport needs 4 comma-separated values (row-major 2x2)")
    return ((vals[0], vals[1]), (vals[2], vals[3]))


def _fmt_matrix(m) -> str:
    return ",".join(repr(float(v)) for row in m for v in row)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


# flat key -> (owner, field, parser, formatter); owner "sim" or "mapping"
KEYS = {
    "n_steps": ("sim", "n_steps", int, str),
    "dt": ("sim", "dt", float, repr),
    "source": ("sim", "source", str.strip, str),
    "forced.events": ("sim", "forced_events", _events, _fmt_events),
    "lattice.size": ("sim", "lattice_size", int, str),
    "lattice.burn_in": ("sim", "lattice_burn_in", int, str),
    "lattice.grains_per_step": ("sim", "grains_per_step", int, str),
    "slope.theta0": ("sim", "theta0", float, repr),
    "slope.theta_c": ("sim", "theta_c", float, repr),
    "slope.v": ("sim", "v", float, repr),
    "slope.alpha": ("sim", "alpha", float, repr),
    "slope.intensity": ("sim", "intensity", str.strip, str),
    "slope.lam0": ("sim", "lam0", float, repr),
    "slope.beta": ("sim", "beta", float, repr),
    "mapping.kind": ("mapping", "kind", lambda v: MappingKind(v.strip()), lambda k: k.value),
    "mapping.k": ("mapping", "k", float, repr),
    "mapping.gamma": ("mapping", "gamma", float, repr),
    "mapping.cap": ("mapping", "cap", float, repr),
    "reversion.kappa": ("mapping", "kappa", float, repr),
    "reversion.sigma_bar": ("mapping", "sigma_bar", float, repr),
    "sigma0": ("sim", "sigma0", float, repr),
    "sharpe.S": ("sim", "sharpe", float, repr),
    "sharpe.drift": ("sim", "sharpe_drift", float, repr),
    "price.target": ("sim", "target_price", float, repr),
    "price.horizon": ("sim", "horizon", float, repr),
    "price.rho": ("sim", "rho", float, repr),
    "path.mode": ("sim", "path_mode", lambda v: PathMode(v.strip()), lambda m: m.value),
    "path.points": ("sim", "path_points", int, str),
    "path.traversal_time": ("sim", "traversal_time", _opt_float, lambda v: "default" if v is None else repr(v)),
    "onsager.enabled": ("sim", "onsager", _bool, lambda b: "true" if b else "false"),
    "onsager.kick": ("sim", "onsager_kick", float, repr),
    "onsager.steps": ("sim", "onsager_steps", int, str),
    "onsager.dt": ("sim", "onsager_dt", float, repr),
    "onsager.transport": ("sim", "transport", _matrix, _fmt_matrix),
}


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def load_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def build(values: dict[str, str]) -> tuple[SimulationConfig, int | None]:
    """Turn raw string values into a validated config and an optional seed."""
    sim, mapping = {}, {}
    seed = None
    for key, raw in values.items():
        if key == "seed":
            seed = parse_seed(raw)
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        owner, name, parse, _ = KEYS[key]
        try:
            value = parse(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        (mapping if owner == "mapping" else sim)[name] = value
    try:
        cfg = SimulationConfig(**sim, mapping=VolMapping(**mapping))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg, seed


def parse_seed(raw) -> int:
    try:
        seed = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {raw!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    return seed


def resolve_seed(cli_seed, file_seed) -> int:
    if cli_seed is not None:
        return parse_seed(cli_seed)
    if file_seed is not None:
        return file_seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return parse_seed(env)
    return 0


def format_config(cfg: SimulationConfig, seed: int) -> str:
    lines = [f"seed = {seed}"]
    for key, (owner, name, _, fmt) in KEYS.items():
        obj = cfg.mapping if owner == "mapping" else cfg
        lines.append(f"{key} = {fmt(getattr(obj, name))}")
    return "\n".join(lines) + "\n"
