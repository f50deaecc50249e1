"""JSON config overrides for training and feature settings.

A config file is a JSON object with optional ``train``, ``vif`` and
``adm`` sections whose keys are dataclass field names::

    {"train": {"max_steps": 50, "crop_size": 96}, "adm": {"padding": "zero"}}
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .adm import AdmConfig
from .errors import InvalidArgument
from .training import TrainConfig
from .vif import VifConfig

SECTIONS = {"train": TrainConfig, "vif": VifConfig, "adm": AdmConfig}


def build(cls, overrides: dict | None):
    overrides = overrides or {}
    known = {f.name for f in fields(cls) if f.init}
    unknown = set(overrides) - known
    if unknown:
        raise InvalidArgument(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return cls(**vals)


def load_config(path=None) -> dict:
    """Return ``{"train": TrainConfig, "vif": VifConfig, "adm": AdmConfig}``."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InvalidArgument(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidArgument("config must be a JSON object")
        extra = set(doc) - set(SECTIONS)
        if extra:
            raise InvalidArgument(f"unknown config sections: {sorted(extra)}")
    return {name: build(cls, doc.get(name)) for name, cls in SECTIONS.items()}
