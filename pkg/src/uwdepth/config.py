"""Flat ``key = value`` config files with typed defaults.

Recognized keys (dotted, one per line, ``#`` starts a comment):

    data.depth_scale   meters per raw 16-bit depth unit (default 1e-3)
    data.d_max         corpus-level max depth in meters for normalization
    data.image_size    square resize applied before patching (0 = native)
    data.patch_size    training patch side
    haze.beta          scattering coefficient (1/m); 0 disables haze
    haze.airlight      per-channel veiling light, "r,g,b" in [0,1]
    train.epochs, train.lr, train.batch_size, train.seed,
    train.pool_size, train.ckpt_every
    loss.gamma_gan, loss.gamma_ssim, loss.gamma_grad

The environment variable ``UWDEPTH_CONFIG`` supplies a default config path
for the CLI; explicit flags always win over file values.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigError

ENV_CONFIG_VAR = "UWDEPTH_CONFIG"


def _parse_airlight(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError(f"airlight needs 1 or 3 comma-separated values, got {text!r}")
    vals = tuple(float(p) for p in parts)
    if any(v < 0.0 or v > 1.0 for v in vals):
        raise ValueError(f"airlight channels must lie in [0, 1], got {vals}")
    return vals


# key -> (parser, default)
CONFIG_SCHEMA: dict[str, tuple] = {
    "data.depth_scale": (float, 1e-3),
    "data.d_max": (float, 10.0),
    "data.image_size": (int, 256),
    "data.patch_size": (int, 128),
    "haze.beta": (float, 1.0),
    "haze.airlight": (_parse_airlight, (1.0, 1.0, 1.0)),
    "train.epochs": (int, 400),
    "train.lr": (float, 1e-4),
    "train.batch_size": (int, 1),
    "train.seed": (int, 0),
    "train.pool_size": (int, 50),
    "train.ckpt_every": (int, 1000),
    "loss.gamma_gan": (float, 5.0),
    "loss.gamma_ssim": (float, 1.0),
    "loss.gamma_grad": (float, 1.0),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in CONFIG_SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into a fully-populated key->value dict."""
    values = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_SCHEMA:
            known = ", ".join(sorted(CONFIG_SCHEMA))
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r} (known: {known})")
        parser, _ = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path: str | Path | None) -> dict:
    """Load a config file; ``None`` falls back to $UWDEPTH_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR) or None
    if path is None:
        return default_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))
