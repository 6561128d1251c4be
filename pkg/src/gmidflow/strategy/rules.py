"""Fixed if-then rule script: the no-reasoning baseline.

Rules are checked top-down and the first failing metric fires; one rule per
call, no look-ahead at what the edit does to the other metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..metrics import Metric
from .draft import Draft
from .plan import DEFAULT_BOUNDS, ActionPlan, Bounds, PlanError
from .prompts import IterationContext


@dataclass(frozen=True)
class RuleConfig:
    cc_step: float = 1.1
    w_step: float = 1.2
    l_step: float = 1.5
    l_cap: float = 1.0
    bounds: Bounds = DEFAULT_BOUNDS


def rule_based_step(ctx: IterationContext, config: RuleConfig = RuleConfig()) -> ActionPlan:
    if not ctx.has_results:
        raise PlanError("rule script needs simulation results")
    failing = ctx.failing
    d = Draft(ctx.params, config.bounds)
    if Metric.PM in failing:
        d.set_c1_pf(d.c1_pf * config.cc_step)
        rule = f"PM below target -> Cc = Cc * {config.cc_step:g}"
    elif Metric.GBW in failing:
        for role in ("M1", "M2"):
            d.set_w(role, d.w(role) * config.w_step)
        rule = f"GBW below target -> W(M1,M2) = W * {config.w_step:g}"
    elif Metric.GAIN in failing:
        for role in ("M1", "M2", "M3", "M4"):
            d.set_l(role, min(d.l(role) * config.l_step, config.l_cap))
        rule = f"Gain below target -> L(M1..M4) = min(L * {config.l_step:g}, {config.l_cap:g}u)"
    elif Metric.SR in failing:
        d.set_m("M5", d.m("M5") + 1)
        rule = "SR below target -> m(M5) += 1"
    elif Metric.IDC in failing:
        d.set_m("M5", d.m("M5") - 1)
        rule = "Idc above target -> m(M5) -= 1"
    else:
        return ActionPlan("All specifications met.", "No rule fires.", declared_done=True)
    patches = d.patches()
    if not patches:
        # the rule is saturated; restate the field so the step is still recorded
        return _saturated(ctx, rule)
    names = ", ".join(sorted(m.value for m in failing))
    return ActionPlan(f"Failing: {names}.", f"Rule fired: {rule}.", patches)


def _saturated(ctx: IterationContext, rule: str) -> ActionPlan:
    from .draft import restate_patches

    names = ", ".join(sorted(m.value for m in ctx.failing))
    return ActionPlan(
        f"Failing: {names}.",
        f"Rule fired: {rule}; parameter already at its limit, no change possible.",
        restate_patches(ctx.params)[:1],
    )
