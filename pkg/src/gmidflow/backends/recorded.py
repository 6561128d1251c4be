"""Backend that looks metrics up from a file of recorded results.

Used to replay a documented optimisation narrative without a simulator: each
entry pairs a full parameter set with the metrics observed per corner.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..device import ProcessCorner
from ..metrics import PerfMetrics
from ..netlist import CircuitParams
from .analytic import BackendError


class RecordedBackend:
    name = "stub-fixtures"

    def __init__(self, entries: dict[tuple, dict[ProcessCorner, PerfMetrics]]):
        self.entries = entries

    @classmethod
    def from_file(cls, path: str | Path) -> "RecordedBackend":
        data = json.loads(Path(path).read_text())
        entries = {}
        for entry in data["entries"]:
            params = CircuitParams.from_dict(entry["params"])
            entries[params.vector()] = {
                ProcessCorner(c): PerfMetrics.from_dict(m) for c, m in entry["metrics"].items()
            }
        return cls(entries)

    def evaluate(self, params: CircuitParams, corner: ProcessCorner, **_) -> PerfMetrics:
        try:
            return self.entries[params.vector()][ProcessCorner(corner)]
        except KeyError:
            raise BackendError(f"no recorded metrics for corner {ProcessCorner(corner).value} of {params.to_dict()}") from None
