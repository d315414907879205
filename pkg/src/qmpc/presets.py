"""Named model presets shipped with the package.

Each preset is a JSON model file under qmpc/data, regenerated from the
builder functions by scripts/make_data_files.py; load_preset reads the
file (not the builder) so the CLI exercises the same path as user-supplied
models.
"""

from __future__ import annotations

import importlib.resources

from .errors import ConfigError
from .mld import load_model

PRESETS = ("toy1d", "traction")


def preset_path(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {PRESETS}")
    return importlib.resources.files("qmpc") / "data" / f"{name}.json"


def load_preset(name):
    """Load a bundled model by name, returning (MldSystem, StageCost, meta)."""
    return load_model(preset_path(name))
