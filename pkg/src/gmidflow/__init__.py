"""gm/Id-guided closed-loop sizing of a two-stage Miller op-amp."""

from .device import CORNERS, DeviceKind, ProcessCorner
from .metrics import Metric, PerfMetrics
from .netlist import CircuitParams, DeviceGeom, apply_patches, extract_params, parse_netlist
from .orchestrator import RunConfig, RunOutcome, Status, run
from .specs import DEFAULT_SPECS, SpecSet, evaluate_specs

__version__ = "0.1.0"

__all__ = [
    "CORNERS",
    "CircuitParams",
    "DEFAULT_SPECS",
    "DeviceGeom",
    "DeviceKind",
    "Metric",
    "PerfMetrics",
    "ProcessCorner",
    "RunConfig",
    "RunOutcome",
    "SpecSet",
    "Status",
    "apply_patches",
    "evaluate_specs",
    "extract_params",
    "parse_netlist",
    "run",
]
