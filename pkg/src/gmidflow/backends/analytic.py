"""Hermetic two-stage op-amp evaluator built on LUT queries.

Role map: M1/M2 input pair, M3/M4 mirror load, M5 tail source, M6 output
current sink, M7 common-source output device. Branch currents come from
the reference current times the M5 and M6 multipliers.
"""

from __future__ import annotations

import math
from decimal import Decimal
from dataclasses import dataclass, field
from typing import Mapping

from ..device import ProcessCorner
from ..lut import LutError, LutSet, invert_current_density, query
from ..metrics import PerfMetrics
from ..netlist import ROLE_KIND, ROLES, CircuitParams


class BackendError(RuntimeError):
    pass


class BiasInfeasibleError(BackendError):
    pass


@dataclass(frozen=True)
class BiasConfig:
    i_ref: float = 10e-6

    def __post_init__(self):
        if not self.i_ref > 0:
            raise BackendError(f"reference current must be positive, got {self.i_ref}")


@dataclass(frozen=True)
class BiasSolution:
    i_ref: float
    i_tail: float
    i_stage2: float
    vgs: Mapping[str, float]
    gm: Mapping[str, float]
    gds: Mapping[str, float]
    branch: Mapping[str, float] = field(default_factory=dict)

    @property
    def vgs1(self) -> float:
        return self.vgs["M1"]

    @property
    def vgs7(self) -> float:
        return self.vgs["M7"]


def branch_currents(params: CircuitParams, config: BiasConfig) -> dict[str, float]:
    i_tail = config.i_ref * params["M5"].m
    i_stage2 = config.i_ref * params["M6"].m
    half = i_tail / 2
    return {"M1": half, "M2": half, "M3": half, "M4": half, "M5": i_tail, "M6": i_stage2, "M7": i_stage2}


def solve_bias(
    params: CircuitParams, luts: LutSet, corner: ProcessCorner, config: BiasConfig = BiasConfig()
) -> BiasSolution:
    corner = ProcessCorner(corner)
    currents = branch_currents(params, config)
    vgs, gm, gds = {}, {}, {}
    for role in ROLES:
        kind = ROLE_KIND[role]
        try:
            grid = luts[(kind, corner)]
        except KeyError:
            raise BackendError(f"no {kind.value} table for corner {corner.value}") from None
        g = params[role]
        width = g.w * g.m
        try:
            v = invert_current_density(grid, g.l, currents[role] / width)
        except LutError as exc:
            raise BiasInfeasibleError(
                f"{role} (W={g.w:g}u L={g.l:g}u m={g.m}) cannot carry {currents[role] * 1e6:.3g} uA "
                f"at {corner.value}: {exc}"
            ) from None
        op = query(grid, g.l, v)
        vgs[role] = v
        gm[role] = op.gm_per_w * width
        gds[role] = op.gds_per_w * width
    return BiasSolution(config.i_ref, currents["M5"], currents["M6"], vgs, gm, gds, currents)


def gbw_hz(gm1: float, cc: float) -> float:
    return gm1 / (2 * math.pi * cc)


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def slew_rate(i_tail: float, i_stage2: float, cc: float, cl: float) -> float:
    """Slew rate in V/us, limited by whichever capacitor charges slower.

    Decimal quotients keep round inputs exact: 20 uA into 1 pF is 20, not 20.000000000000004.
    """
    return float(min(_dec(i_tail) / _dec(cc), _dec(i_stage2) / _dec(cl)).scaleb(-6))


def phase_margin(gbw: float, gm7: float, cc: float, cl: float) -> float:
    """Degrees; includes the right-half-plane zero of plain Miller compensation."""
    f_p2 = gm7 / (2 * math.pi * cl)
    f_z = gm7 / (2 * math.pi * cc)
    return 90.0 - math.degrees(math.atan(gbw / f_p2)) - math.degrees(math.atan(gbw / f_z))


def dc_gain_db(gm1: float, gds2: float, gds4: float, gm7: float, gds6: float, gds7: float) -> float:
    return 20 * math.log10((gm1 / (gds2 + gds4)) * (gm7 / (gds6 + gds7)))


def opamp_metrics(bias: BiasSolution, cc: float, cl: float) -> PerfMetrics:
    gm, gds = bias.gm, bias.gds
    gbw = gbw_hz(gm["M1"], cc)
    return PerfMetrics(
        gain_db=dc_gain_db(gm["M1"], gds["M2"], gds["M4"], gm["M7"], gds["M6"], gds["M7"]),
        gbw_hz=gbw,
        pm_deg=phase_margin(gbw, gm["M7"], cc, cl),
        sr_v_per_us=slew_rate(bias.i_tail, bias.i_stage2, cc, cl),
        idc_a=bias.i_ref + bias.i_tail + bias.i_stage2,
    )


def analytic_evaluate(
    params: CircuitParams, luts: LutSet, corner: ProcessCorner, config: BiasConfig = BiasConfig()
) -> PerfMetrics:
    return opamp_metrics(solve_bias(params, luts, corner, config), params.c1, params.cl)


class AnalyticBackend:
    """Evaluates parameter sets against in-memory LUTs."""

    name = "analytic"

    def __init__(self, luts: LutSet, config: BiasConfig = BiasConfig()):
        self.luts = luts
        self.config = config

    def evaluate(self, params: CircuitParams, corner: ProcessCorner, **_) -> PerfMetrics:
        return analytic_evaluate(params, self.luts, corner, self.config)
