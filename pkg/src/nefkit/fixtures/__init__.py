"""Packaged fixture data: a NEF-style multi-file spec, seed records, mock replies."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def fixture_path(name: str) -> Path:
    """Filesystem path of a packaged fixture file."""
    path = Path(str(resources.files(__package__).joinpath(name)))
    if not path.is_file():
        raise FileNotFoundError(f"no fixture named {name!r}")
    return path


def fixture_dir() -> Path:
    return fixture_path("nef_main.yaml").parent
