from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum


class Metric(str, Enum):
    GAIN = "GAIN"
    GBW = "GBW"
    PM = "PM"
    SR = "SR"
    IDC = "IDC"


_ATTR = {
    Metric.GAIN: "gain_db",
    Metric.GBW: "gbw_hz",
    Metric.PM: "pm_deg",
    Metric.SR: "sr_v_per_us",
    Metric.IDC: "idc_a",
}

# display scale and unit per metric
DISPLAY = {
    Metric.GAIN: (1.0, "dB"),
    Metric.GBW: (1e-6, "MHz"),
    Metric.PM: (1.0, "deg"),
    Metric.SR: (1.0, "V/us"),
    Metric.IDC: (1e6, "uA"),
}

# unit of the stored value
BASE_UNIT = {
    Metric.GAIN: "dB",
    Metric.GBW: "Hz",
    Metric.PM: "deg",
    Metric.SR: "V/us",
    Metric.IDC: "A",
}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class PerfMetrics:
    gain_db: float
    gbw_hz: float
    pm_deg: float
    sr_v_per_us: float
    idc_a: float

    def __post_init__(self):
        if not self.gbw_hz > 0:
            raise MetricsError(f"gbw must be positive, got {self.gbw_hz}")
        if not -180.0 < self.pm_deg <= 180.0:
            raise MetricsError(f"phase margin {self.pm_deg} outside (-180, 180]")
        if not self.idc_a > 0:
            raise MetricsError(f"supply current must be positive, got {self.idc_a}")

    def value(self, metric: Metric) -> float:
        return getattr(self, _ATTR[Metric(metric)])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "PerfMetrics":
        return cls(**{k: float(d[k]) for k in _ATTR.values()})


def fmt_metric(metric: Metric, value: float) -> str:
    scale, unit = DISPLAY[Metric(metric)]
    return f"{value * scale:.2f} {unit}"
