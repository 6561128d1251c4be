"""Design targets, corner derating, pass/fail margins and figures of merit."""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Mapping

from .device import CORNERS, ProcessCorner
from .metrics import BASE_UNIT, Metric, PerfMetrics, fmt_metric
from .netlist import CircuitParams


class SpecError(ValueError):
    pass


class Direction(str, Enum):
    AT_LEAST = "at_least"
    AT_MOST = "at_most"


class Mode(str, Enum):
    TT = "tt"
    CORNER = "corner"


@dataclass(frozen=True)
class SpecItem:
    metric: Metric
    direction: Direction
    tt_target: float
    corner_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not self.corner_factor > 0:
            raise SpecError(f"{self.metric.value}: corner_factor must be positive")
        if not self.tt_target > 0:
            raise SpecError(f"{self.metric.value}: tt_target must be positive")

    @property
    def corner_target(self) -> float:
        # decimal product so 200e-6 * 1.2 is exactly 240e-6
        return float(Decimal(repr(self.tt_target)) * Decimal(repr(self.corner_factor)))

    def target(self, mode: Mode) -> float:
        return self.tt_target if Mode(mode) is Mode.TT else self.corner_target

    def passes(self, value: float, target: float) -> bool:
        return value >= target if self.direction is Direction.AT_LEAST else value <= target

    def margin(self, value: float, target: float) -> float:
        """Relative distance from ``target``, positive on the passing side."""
        if self.direction is Direction.AT_LEAST:
            return (value - target) / target
        return (target - value) / target


@dataclass(frozen=True)
class SpecSet:
    items: tuple[SpecItem, ...]

    def __post_init__(self):
        metrics = [i.metric for i in self.items]
        if sorted(metrics) != sorted(set(metrics)):
            raise SpecError("duplicate metric in spec set")

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, metric: Metric) -> SpecItem:
        metric = Metric(metric)
        for item in self.items:
            if item.metric is metric:
                return item
        raise KeyError(metric)


DEFAULT_SPECS = SpecSet(
    (
        SpecItem(Metric.GAIN, Direction.AT_LEAST, 60.0, 0.90),
        SpecItem(Metric.GBW, Direction.AT_LEAST, 20e6, 0.95),
        SpecItem(Metric.PM, Direction.AT_LEAST, 60.0, 0.90),
        SpecItem(Metric.SR, Direction.AT_LEAST, 20.0, 0.90),
        SpecItem(Metric.IDC, Direction.AT_MOST, 200e-6, 1.20),
    )
)

_SPEC_KEYS = {"metric", "direction", "tt_target", "corner_factor"}


def parse_specs(text: str, source: str = "<string>") -> SpecSet:
    """One spec per line: ``metric=GBW direction=at_least tt_target=20e6 corner_factor=0.95``.

    Units are dB, Hz, degrees, V/us and A.
    """
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = {}
        for tok in line.split():
            key, sep, value = tok.partition("=")
            if not sep or key not in _SPEC_KEYS:
                raise SpecError(f"{source}:{lineno}: bad field {tok!r}")
            fields[key] = value
        missing = {"metric", "direction", "tt_target"} - fields.keys()
        if missing:
            raise SpecError(f"{source}:{lineno}: missing {', '.join(sorted(missing))}")
        try:
            items.append(
                SpecItem(
                    Metric(fields["metric"].upper()),
                    Direction(fields["direction"].lower()),
                    float(fields["tt_target"]),
                    float(fields.get("corner_factor", "1.0")),
                )
            )
        except ValueError as exc:
            raise SpecError(f"{source}:{lineno}: {exc}") from None
    if {i.metric for i in items} != set(Metric):
        raise SpecError(f"{source}: spec file must define all of {', '.join(m.value for m in Metric)}")
    order = list(Metric)
    return SpecSet(tuple(sorted(items, key=lambda i: order.index(i.metric))))


def load_specs(path: str | Path) -> SpecSet:
    path = Path(path)
    return parse_specs(path.read_text(), str(path))


def render_specs(specs: SpecSet) -> str:
    return "".join(
        f"metric={i.metric.value} direction={i.direction.value} tt_target={i.tt_target!r} corner_factor={i.corner_factor!r}\n"
        for i in specs
    )


@dataclass(frozen=True)
class MetricCheck:
    value: float
    target: float
    margin_frac: float
    passed: bool


@dataclass(frozen=True)
class EvalReport:
    checks: Mapping[Metric, MetricCheck]
    mode: Mode

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failing(self) -> list[Metric]:
        return [m for m, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "all_pass": self.all_pass,
            "checks": {
                m.value: {"value": c.value, "target": c.target, "margin_frac": c.margin_frac, "pass": c.passed}
                for m, c in self.checks.items()
            },
        }

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        checks = {
            Metric(k): MetricCheck(float(v["value"]), float(v["target"]), float(v["margin_frac"]), bool(v["pass"]))
            for k, v in d["checks"].items()
        }
        return cls(checks, Mode(d["mode"]))


def evaluate_specs(metrics: PerfMetrics, specs: SpecSet, mode: Mode = Mode.TT) -> EvalReport:
    checks = {}
    for item in specs:
        value = metrics.value(item.metric)
        target = item.target(mode)
        checks[item.metric] = MetricCheck(value, target, item.margin(value, target), item.passes(value, target))
    return EvalReport(checks, Mode(mode))


def derated_targets(specs: SpecSet) -> dict[Metric, float]:
    return {i.metric: i.corner_target for i in specs}


@dataclass(frozen=True)
class WorstCase:
    value: float
    corner: ProcessCorner


def worst_case(per_corner: Mapping[ProcessCorner, PerfMetrics], specs: SpecSet = DEFAULT_SPECS) -> dict[Metric, WorstCase]:
    if not per_corner:
        raise SpecError("worst_case needs at least one corner")
    order = [c for c in CORNERS if c in per_corner]
    out = {}
    for item in specs:
        best = None
        for corner in order:
            v = per_corner[corner].value(item.metric)
            if best is None:
                best = WorstCase(v, corner)
            elif (item.direction is Direction.AT_LEAST and v < best.value) or (
                item.direction is Direction.AT_MOST and v > best.value
            ):
                best = WorstCase(v, corner)
        out[item.metric] = best
    return out


# --- figures of merit -----------------------------------------------------


def _gbw_cl_over_idc(m: PerfMetrics, cl: float) -> float:
    return (m.gbw_hz / 1e6) * (cl / 1e-12) / (m.idc_a / 1e-3)


def _sr_cl_over_idc(m: PerfMetrics, cl: float) -> float:
    return m.sr_v_per_us * (cl / 1e-12) / (m.idc_a / 1e-3)


FOM_FORMULAS = {
    "gbw_cl_over_idc": _gbw_cl_over_idc,
    "sr_cl_over_idc": _sr_cl_over_idc,
}
DEFAULT_FOM = "gbw_cl_over_idc"


@dataclass(frozen=True)
class FomReport:
    formula: str
    fom: float
    area_um2: float

    @property
    def foma(self) -> float:
        return self.fom / self.area_um2

    def to_dict(self) -> dict:
        return {"formula": self.formula, "fom": self.fom, "area_um2": self.area_um2, "foma": self.foma}


def compute_fom(metrics: PerfMetrics, params: CircuitParams, formula: str = DEFAULT_FOM) -> FomReport:
    if formula not in FOM_FORMULAS:
        raise SpecError(f"unknown FOM formula {formula!r}; choose from {', '.join(sorted(FOM_FORMULAS))}")
    return FomReport(formula, FOM_FORMULAS[formula](metrics, params.cl), params.area_um2())


# --- report emission ------------------------------------------------------

_SYMBOL = {Direction.AT_LEAST: ">", Direction.AT_MOST: "<"}


def format_report(report: EvalReport, specs: SpecSet, title: str = "") -> str:
    rows = [("Metric", "Target", "Result", "Margin", "Status")]
    for item in specs:
        c = report.checks[item.metric]
        rows.append(
            (
                item.metric.value,
                f"{_SYMBOL[item.direction]} {fmt_metric(item.metric, c.target)}",
                fmt_metric(item.metric, c.value),
                f"{c.margin_frac * 100:+.1f}%",
                "pass" if c.passed else "FAIL",
            )
        )
    return _table(rows, title)


def format_worst_case(worst: Mapping[Metric, WorstCase], specs: SpecSet, title: str = "") -> str:
    rows = [("Metric", "Worst-Case Target", "Result", "Corner", "Status")]
    for item in specs:
        wc = worst[item.metric]
        target = item.corner_target
        rows.append(
            (
                item.metric.value,
                f"{_SYMBOL[item.direction]} {fmt_metric(item.metric, target)}",
                fmt_metric(item.metric, wc.value),
                wc.corner.value,
                "pass" if item.passes(wc.value, target) else "FAIL",
            )
        )
    return _table(rows, title)


def _table(rows, title: str) -> str:
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    out = [title] if title else []
    for n, r in enumerate(rows):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        if n == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def report_records(report: EvalReport, corner: ProcessCorner | None = None) -> list[str]:
    """Line-delimited machine records, one per metric."""
    lines = []
    for m, c in report.checks.items():
        rec = {
            "metric": m.value,
            "unit": BASE_UNIT[m],
            "mode": report.mode.value,
            "value": c.value,
            "target": c.target,
            "margin_frac": c.margin_frac,
            "pass": c.passed,
        }
        if corner is not None:
            rec["corner"] = ProcessCorner(corner).value
        lines.append(json.dumps(rec, sort_keys=True))
    return lines
