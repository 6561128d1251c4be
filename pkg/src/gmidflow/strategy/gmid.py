"""Deterministic gm/Id sizing heuristic.

Reads the latest results, works out how far each metric must move, then
re-derives the affected devices from the lookup tables: currents first
(slew, supply budget), then the input pair from the GBW target, then the
output device from the second-pole and phase-margin targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..backends.analytic import BackendError, BiasConfig, analytic_evaluate, phase_margin, solve_bias
from ..device import DeviceKind, ProcessCorner
from ..lut import LutSet, ratio_range, size_for_gm
from ..metrics import Metric, fmt_metric
from ..specs import Direction
from .draft import Draft
from .plan import DEFAULT_BOUNDS, ActionPlan, Bounds, PlanError
from .prompts import IterationContext

TT = ProcessCorner.TT
# metrics whose corner offsets are additive rather than proportional
_ADDITIVE = (Metric.GAIN, Metric.PM)


@dataclass(frozen=True)
class GmidConfig:
    gm1_margin: float = 1.1
    p2_factor: float = 3.0
    pm_trigger_deg: float = 5.0
    pm_margin_deg: float = 1.0
    cc_max_step: float = 1.25
    cc_guard: float = 1.05
    sr_margin: float = 1.2
    corner_guard: float = 1.01
    gmid_ceiling: float = 20.0
    idc_margin: float = 0.95
    bias: BiasConfig = field(default_factory=BiasConfig)
    bounds: Bounds = DEFAULT_BOUNDS


def required_tt(ctx: IterationContext, guard: float = 1.01) -> dict[Metric, float]:
    """TT value each metric must reach so that every evaluated corner also passes.

    Corner results are mapped back to TT by assuming the TT-to-corner offset
    stays fixed: a ratio for GBW/SR/IDC, a difference for gain and phase.
    """
    tt = ctx.metrics[TT]
    req = {}
    for item in ctx.specs:
        up = item.direction is Direction.AT_LEAST
        r = item.tt_target
        for corner, m in ctx.metrics.items():
            if ProcessCorner(corner) is TT:
                continue
            t, c = tt.value(item.metric), m.value(item.metric)
            if item.metric in _ADDITIVE:
                pad = abs(item.corner_target) * (guard - 1)
                scaled = item.corner_target + (t - c) + (pad if up else -pad)
            else:
                scaled = item.corner_target * t / c * (guard if up else 1 / guard)
            r = max(r, scaled) if up else min(r, scaled)
        req[item.metric] = r
    return req


def _short(ctx: IterationContext, req: dict[Metric, float]) -> set[Metric]:
    tt = ctx.metrics[TT]
    out = set()
    for item in ctx.specs:
        v = tt.value(item.metric)
        if not item.passes(v, req[item.metric]):
            out.add(item.metric)
    return out


def gm7_for_pm(pm_target: float, gbw: float, cc: float, cl: float) -> float:
    """Smallest gm7 whose projected phase margin reaches ``pm_target`` (bisection)."""
    if pm_target >= 89.9:
        raise PlanError(f"phase margin target {pm_target:.1f} deg is not reachable")
    lo, hi = 1e-9, 1e-9
    while phase_margin(gbw, hi, cc, cl) < pm_target:
        hi *= 2
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        if phase_margin(gbw, mid, cc, cl) < pm_target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-6:
            break
    return hi


def _next_length(axis: tuple[float, ...], L: float) -> float | None:
    for x in axis:
        if x > L * (1 + 1e-9):
            return x
    return None


def gmid_step(ctx: IterationContext, luts: LutSet, config: GmidConfig = GmidConfig()) -> ActionPlan:
    if not ctx.has_results:
        raise PlanError("gm/Id heuristic needs simulation results")
    if not ctx.failing:
        return ActionPlan("All specifications met at every evaluated corner.", "Nothing to change.", declared_done=True)

    req = required_tt(ctx, config.corner_guard)
    short = _short(ctx, req)
    tt = ctx.metrics[TT]
    params = ctx.params
    lut_n, lut_p = luts[(DeviceKind.NMOS, TT)], luts[(DeviceKind.PMOS, TT)]
    i_ref = config.bias.i_ref
    bias = solve_bias(params, luts, TT, config.bias)
    d = Draft(params, config.bounds)
    notes: list[str] = []

    # Compensation cap: only for large phase deficits, paid for out of GBW/SR margin.
    if Metric.PM in short and req[Metric.PM] - tt.pm_deg >= config.pm_trigger_deg:
        f_gbw = tt.gbw_hz / (config.cc_guard * req[Metric.GBW])
        f_sr = bias.i_tail / (config.cc_guard * req[Metric.SR] * 1e6 * params.c1)
        f = min(config.cc_max_step, f_gbw, f_sr)
        new_pf = math.floor(d.c1_pf * f * 100) / 100
        if new_pf > d.c1_pf:
            d.set_c1_pf(new_pf)
            notes.append(f"PM short by {req[Metric.PM] - tt.pm_deg:.1f} deg: Cc -> {d.c1_pf:g}p (x{f:.2f}).")

    cc = d.params().c1
    cl = params.cl

    if Metric.SR in short:
        need = config.sr_margin * req[Metric.SR] * 1e6
        if bias.i_tail / cc < need:
            d.set_m("M5", math.ceil(need * cc / i_ref))
            notes.append(f"SR: tail current raised to m(M5)={d.m('M5')}.")
        if bias.i_stage2 / cl < need:
            d.set_m("M6", math.ceil(need * cl / i_ref))
            notes.append(f"SR: output current raised to m(M6)={d.m('M6')}.")

    if Metric.IDC in short:
        units = config.idc_margin * req[Metric.IDC] / i_ref - 1
        f = units / (d.m("M5") + d.m("M6"))
        d.set_m("M5", max(1, math.floor(d.m("M5") * f)))
        d.set_m("M6", max(1, math.floor(d.m("M6") * f)))
        notes.append(f"Idc: scaled branch multipliers to m(M5)={d.m('M5')}, m(M6)={d.m('M6')}.")

    if Metric.GAIN in short:
        nxt = _next_length(lut_n.l_axis, d.l("M1"))
        if nxt is None:
            notes.append("Gain short but input pair already at the longest tabulated L.")
        else:
            old = d.l("M1")
            for role in ("M1", "M2", "M3", "M4"):
                d.set_l(role, nxt)
            for role in ("M3", "M4"):
                d.set_w(role, d.w(role) * nxt / old)
            notes.append(f"Gain short by {req[Metric.GAIN] - tt.gain_db:.2f} dB: L(M1..M4) {old:g}u -> {nxt:g}u.")

    # Input pair from the GBW target.
    gm1_now = bias.gm["M1"]
    resize = (
        Metric.GBW in short
        or d.m("M5") != params["M5"].m
        or d.l("M1") != params["M1"].l
    )
    gm1_t = 2 * math.pi * cc * req[Metric.GBW] * config.gm1_margin if Metric.GBW in short else gm1_now
    if resize:
        half = i_ref * d.m("M5") / 2
        if gm1_t / half > config.gmid_ceiling:
            d.set_m("M5", math.ceil(2 * gm1_t / (config.gmid_ceiling * i_ref)))
            half = i_ref * d.m("M5") / 2
            notes.append(f"gm1 needs more current: m(M5)={d.m('M5')}.")
        lo, hi = ratio_range(lut_n, d.l("M1"))
        ratio = min(max(gm1_t / half, lo * 1.001), hi * 0.999)
        sz = size_for_gm(lut_n, d.l("M1"), ratio * half, half)
        w1 = sz.w / d.m("M1")
        for role in ("M1", "M2"):
            d.set_w(role, w1)
        notes.append(f"M1/M2 sized for gm1={sz.achieved_gm * 1e6:.1f} uS at gm/Id={ratio:.1f} (W={d.w('M1'):g}u).")
        gm1_t = sz.achieved_gm

    # Output device from the second-pole and phase targets.
    gbw_proj = gm1_t / (2 * math.pi * cc)
    try:
        gm7_now = solve_bias(d.params(), luts, TT, config.bias).gm["M7"]
    except BackendError:
        gm7_now = 0.0
    pm_goal = req[Metric.PM] + config.pm_margin_deg
    if gm7_now == 0.0 or phase_margin(gbw_proj, gm7_now, cc, cl) < pm_goal:
        gm7_t = max(config.p2_factor * 2 * math.pi * cl * gbw_proj, gm7_for_pm(pm_goal, gbw_proj, cc, cl))
        i2 = i_ref * d.m("M6")
        if gm7_t / i2 > config.gmid_ceiling:
            d.set_m("M6", math.ceil(gm7_t / (config.gmid_ceiling * i_ref)))
            i2 = i_ref * d.m("M6")
            notes.append(f"gm7 needs more current: m(M6)={d.m('M6')}.")
        lo, hi = ratio_range(lut_p, d.l("M7"))
        ratio = min(max(gm7_t / i2, lo * 1.001), hi * 0.999)
        sz = size_for_gm(lut_p, d.l("M7"), ratio * i2, i2)
        m7 = max(1, min(config.bounds.m[1], math.ceil(sz.w / d.w("M7"))))
        d.set_m("M7", m7)
        d.set_w("M7", sz.w / m7)
        notes.append(
            f"M7 sized for gm7={sz.achieved_gm * 1e6:.1f} uS (PM goal {pm_goal:.1f} deg at GBW "
            f"{gbw_proj / 1e6:.1f} MHz): m={m7}, W={d.w('M7'):g}u."
        )

    patches = d.patches()
    if not patches:
        raise PlanError("heuristic found no parameter to change")
    try:
        proj = analytic_evaluate(d.params(), luts, TT, config.bias)
        notes.append(
            "Projected TT: " + ", ".join(f"{m.value} {fmt_metric(m, proj.value(m))}" for m in Metric) + "."
        )
    except BackendError as exc:
        notes.append(f"Projection unavailable: {exc}.")

    obs = "Short of required TT values: " + ", ".join(
        f"{m.value} {fmt_metric(m, tt.value(m))} (need {fmt_metric(m, req[m])})" for m in Metric if m in short
    )
    return ActionPlan(obs + ".", "\n".join(notes), patches)
