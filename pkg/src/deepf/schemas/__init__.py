"""Bundled schema files for the UCI tasks."""

from pathlib import Path

SCHEMA_DIR = Path(__file__).parent


def schema_path(name: str) -> Path:
    return SCHEMA_DIR / f"{name}.ini"
