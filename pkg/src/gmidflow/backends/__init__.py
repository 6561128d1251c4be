from .analytic import (
    AnalyticBackend,
    BackendError,
    BiasConfig,
    BiasInfeasibleError,
    BiasSolution,
    analytic_evaluate,
    solve_bias,
)
from .extract import AcPoint, ExtractionError, NoCrossingError, extract_ac_metrics, extract_sr
from .recorded import RecordedBackend
from .spice import SpiceBackend, SpiceConfig, load_spice_config, spice_evaluate

__all__ = [
    "AcPoint",
    "AnalyticBackend",
    "BackendError",
    "BiasConfig",
    "BiasInfeasibleError",
    "BiasSolution",
    "ExtractionError",
    "NoCrossingError",
    "RecordedBackend",
    "SpiceBackend",
    "SpiceConfig",
    "analytic_evaluate",
    "extract_ac_metrics",
    "extract_sr",
    "solve_bias",
    "load_spice_config",
    "spice_evaluate",
]
