"""Locations of the bundled fixture files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def path(name: str) -> Path:
    return Path(str(resources.files("radpretrain") / "data" / name))
