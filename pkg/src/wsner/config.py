"""Loading structured config files into dataclasses, rejecting unknown keys."""
from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

import yaml

from .core import ValidationError


def load_yaml(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return data


def resource_path(name: str) -> Path:
    """Path of a file shipped in ``wsner/resources``."""
    return Path(str(resources.files("wsner") / "resources" / name))


def check_keys(mapping: dict, allowed, where: str) -> None:
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def build(cls, mapping: dict, where: str, **overrides):
    """Instantiate dataclass ``cls`` from ``mapping``; unknown keys are an error."""
    if not isinstance(mapping, dict):
        raise ValidationError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    check_keys(mapping, names, where)
    try:
        return cls(**{**mapping, **overrides})
    except TypeError as e:
        raise ValidationError(f"{where}: {e}") from None
