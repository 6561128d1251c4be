"""Bundled fixtures."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

SEED_NETLIST = "seed.cir"
GAIN_LIMITED_NETLIST = "gain_limited.cir"
DEFAULT_SPEC = "default.spec"
TABLE3_SCRIPT = "table3.replay"
TABLE3_RECORDED = "table3_recorded.json"


def data_path(name: str) -> Path:
    path = Path(str(resources.files("gmidflow") / "data" / name))
    if not path.is_file():
        raise FileNotFoundError(f"bundled asset {name!r} not found")
    return path
