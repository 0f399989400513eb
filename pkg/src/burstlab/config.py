"""Flat ``section.key = value`` configuration files.

Lines are ``section.key = value``; ``#`` starts a comment. Every key must be
declared in :data:`SCHEMA`, which also fixes its type. Command-line flags
override file values, which override the built-in defaults.
"""

from pathlib import Path

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text):
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "simulate.n_frames": int,
    "simulate.sr_factor": int,
    "simulate.patch": int,
    "simulate.seed": int,
    "simulate.cfa": str,
    "trajectory.kind": str,
    "trajectory.path": str,
    "trajectory.magnitude": float,
    "trajectory.smoothness": float,
    "trajectory.rotation_sigma_deg": float,
    "trajectory.scale_sigma": float,
    "trajectory.shear_sigma": float,
    "trajectory.perspective_sigma": float,
    "noise.shot_gain": float,
    "noise.read_sigma": float,
    "noise.iso": float,
    "noise.exact_poisson": _bool,
    "fusion.sr_factor": int,
    "fusion.kernel_sigma": float,
    "fusion.min_weight": float,
    "fusion.model": str,
    "fusion.levels": int,
    "mask.alpha": float,
    "mask.beta": float,
    "mask.gamma": float,
    "mask.radius": str,
    "distill.lambda": float,
    "distill.lr": float,
    "distill.steps": int,
    "distill.t_min": int,
    "distill.t_max": int,
    "distill.seed": int,
    "distill.omega": str,
    "distill.tail_fraction": float,
    "ablation.cutoff": float,
    "ablation.dc_shift": float,
    "ablation.prior_variance": float,
    "ablation.epsilon": float,
    "dataset.train": float,
    "dataset.val": float,
    "dataset.test": float,
    "dataset.workers": int,
}


def coerce(key, value):
    """Convert ``value`` (usually text) to the declared type of ``key``."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = SCHEMA[key]
    if not isinstance(value, str):
        value = str(value)
    try:
        return kind(value.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} lacks a section")
        try:
            values[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def merge(*layers):
    """Later layers win; ``None`` values in a layer are ignored (unset flags)."""
    out = {}
    for layer in layers:
        for key, value in (layer or {}).items():
            if value is not None:
                out[key] = coerce(key, value) if isinstance(value, str) else value
    return out
