"""Access to bundled asset files (test robot, example scene)."""

from importlib import resources
from pathlib import Path


def asset_path(name: str) -> Path:
    p = resources.files("locogen") / "assets" / name
    return Path(str(p))
