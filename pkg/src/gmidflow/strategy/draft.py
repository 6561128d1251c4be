from __future__ import annotations

from decimal import Decimal

from ..netlist import ROLES, CircuitParams, DeviceGeom, Field, ParamPatch, micro, pico
from .plan import ActionPlan, Bounds


def to_pf(c_farad: float) -> float:
    return float(Decimal(repr(c_farad)).scaleb(12))


class Draft:
    """Mutable copy of a parameter set that knows how to express its edits as patches."""

    def __init__(self, params: CircuitParams, bounds: Bounds = Bounds()):
        self.orig = params
        self.bounds = bounds
        self.geom = {r: [g.w, g.l, g.m] for r, g in params.devices.items()}
        self.c1_pf = to_pf(params.c1)

    def w(self, role: str) -> float:
        return self.geom[role][0]

    def l(self, role: str) -> float:
        return self.geom[role][1]

    def m(self, role: str) -> int:
        return self.geom[role][2]

    def set_w(self, role: str, w_um: float) -> None:
        lo, hi = self.bounds.w_um
        self.geom[role][0] = min(max(round(w_um, 2), lo), hi)

    def set_l(self, role: str, l_um: float) -> None:
        lo, hi = self.bounds.l_um
        self.geom[role][1] = min(max(round(l_um, 3), lo), hi)

    def set_m(self, role: str, m: int) -> None:
        lo, hi = self.bounds.m
        self.geom[role][2] = int(min(max(m, lo), hi))

    def set_c1_pf(self, c_pf: float) -> None:
        lo, hi = self.bounds.c_pf
        self.c1_pf = min(max(round(c_pf, 3), lo), hi)

    def params(self) -> CircuitParams:
        devs = {r: DeviceGeom(w, l, m) for r, (w, l, m) in self.geom.items()}
        return CircuitParams(devs, float(Decimal(repr(self.c1_pf)).scaleb(-12)), self.orig.cl)

    def patches(self) -> tuple[ParamPatch, ...]:
        out = []
        for role in ROLES:
            old = self.orig[role]
            w, l, m = self.geom[role]
            if w != old.w:
                out.append(ParamPatch(role, Field.W, micro(w)))
            if l != old.l:
                out.append(ParamPatch(role, Field.L, micro(l)))
            if m != old.m:
                out.append(ParamPatch(role, Field.M, m))
        if self.c1_pf != to_pf(self.orig.c1):
            out.append(ParamPatch("C1", Field.VALUE, pico(self.c1_pf)))
        return tuple(out)


def restate_patches(params: CircuitParams) -> tuple[ParamPatch, ...]:
    """Every adjustable parameter at its current value."""
    out = []
    for role in ROLES:
        g = params[role]
        out += [
            ParamPatch(role, Field.W, micro(g.w)),
            ParamPatch(role, Field.L, micro(g.l)),
            ParamPatch(role, Field.M, g.m),
        ]
    out.append(ParamPatch("C1", Field.VALUE, pico(to_pf(params.c1))))
    return tuple(out)


def seed_plan(params: CircuitParams) -> ActionPlan:
    return ActionPlan(
        observation="No results yet; starting from the seed sizing.",
        thinking="Evaluate the seed design as-is to obtain a baseline before adjusting anything.",
        patches=restate_patches(params),
    )
