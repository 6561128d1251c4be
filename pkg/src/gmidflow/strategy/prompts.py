"""Prompt construction: static knowledge base plus per-iteration context."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from ..device import DeviceKind, ProcessCorner
from ..lut import LutError, LutSet, invert_gm_over_id, query
from ..metrics import Metric, PerfMetrics, fmt_metric
from ..netlist import ROLE_KIND, ROLES, CircuitParams, format_eng
from ..specs import Direction, EvalReport, Mode, SpecSet
from .plan import RESPONSE_FORMAT

DIGEST_GMID = (5, 8, 10, 12, 15, 18, 22, 26)
DIGEST_L = (0.18, 0.5, 1.0, 2.0)
HISTORY_WINDOW = 5

# Original wording written for this tool.
CIRCUIT_BRIEF = """\
Topology: two-stage Miller-compensated operational amplifier, fixed.
  M1, M2  nmos differential input pair, each carrying I_tail/2
  M3, M4  pmos current-mirror load of the first stage
  M5      nmos tail current source, I_tail = I_ref * m(M5)
  M6      nmos current sink of the output stage, I_stage2 = I_ref * m(M6)
  M7      pmos common-source output transistor
  C1      Miller compensation capacitor Cc between first-stage output and output
  CL      load capacitance (fixed)
Governing relations:
  Gain   = gm1/(gds2+gds4) * gm7/(gds6+gds7)
  GBW   ~= gm1 / (2*pi*Cc)
  SR    ~= min(I_tail/Cc, I_stage2/CL)
  f_p2  ~= gm7 / (2*pi*CL), right-half-plane zero at gm7 / (2*pi*Cc)
  PM    ~= 90 - atan(GBW/f_p2) - atan(GBW/f_z)   [deg]
  Idc    = I_ref + I_tail + I_stage2
"""

HEURISTICS = """\
- Larger Cc lowers GBW and SR and raises PM; spend Cc only from available GBW/SR margin.
- Raising gm7 pushes the second pole out and is the cleanest way to recover PM.
- gm/Id sets the inversion level: at fixed current, higher gm/Id means wider devices and more gm.
- Intrinsic gain grows with channel length; longer L lowers gds at the cost of gm/Id and area.
- Multiplying m scales current and gm together at constant gm/Id; keep mirror ratios consistent.
- Size from the tables: pick gm/Id, read Id per micron, W = Id / (Id per micron).
"""


@dataclass(frozen=True)
class StaticKnowledge:
    circuit_brief: str
    heuristics: str
    lut_digest: str
    spec_table: str


def lut_digest(luts: LutSet, corner: ProcessCorner = ProcessCorner.TT, l_values: Sequence[float] = DIGEST_L) -> str:
    blocks = []
    for kind in DeviceKind:
        grid = luts.get((kind, ProcessCorner(corner)))
        if grid is None:
            continue
        rows = [
            f"[{kind.value} {grid.corner.value}, Vds={grid.vds:g} V]",
            f"{'L(um)':>6} {'gm/Id':>6} {'Vov(V)':>8} {'Id/W(A/um)':>11} {'gm/W(S/um)':>11} {'gds/W(S/um)':>11}",
        ]
        for L in l_values:
            if not grid.l_axis[0] <= L <= grid.l_axis[-1]:
                continue
            for target in DIGEST_GMID:
                try:
                    vgs = invert_gm_over_id(grid, L, float(target))
                except LutError:
                    rows.append(f"{L:>6.2f} {target:>6d} {'n/a':>8} {'n/a':>11} {'n/a':>11} {'n/a':>11}")
                    continue
                op = query(grid, L, vgs)
                rows.append(
                    f"{L:>6.2f} {target:>6d} {op.vov:>8.3f} {op.id_per_w:>11.3e} {op.gm_per_w:>11.3e} {op.gds_per_w:>11.3e}"
                )
        blocks.append("\n".join(rows))
    return "\n\n".join(blocks) + "\n"


_SYM = {Direction.AT_LEAST: ">", Direction.AT_MOST: "<"}


def spec_table(specs: SpecSet) -> str:
    rows = [f"{'Metric':<6} {'TT target':>14} {'corner target':>14}"]
    for item in specs:
        sym = _SYM[item.direction]
        rows.append(
            f"{item.metric.value:<6} {sym + ' ' + fmt_metric(item.metric, item.tt_target):>14} "
            f"{sym + ' ' + fmt_metric(item.metric, item.corner_target):>14}"
        )
    rows.append("Load capacitance CL is fixed.")
    return "\n".join(rows) + "\n"


def build_static_knowledge(luts: LutSet, specs: SpecSet) -> StaticKnowledge:
    return StaticKnowledge(CIRCUIT_BRIEF, HEURISTICS, lut_digest(luts), spec_table(specs))


def _sections(static: StaticKnowledge, include_lut: bool) -> list[tuple[str, str]]:
    out = [("CIRCUIT", static.circuit_brief), ("DESIGN HEURISTICS", static.heuristics)]
    if include_lut:
        out.append(("GM/ID LOOKUP TABLES", static.lut_digest))
    out.append(("SPECIFICATIONS", static.spec_table))
    return out


def _join(sections: list[tuple[str, str]]) -> str:
    return "".join(f"=== {title} ===\n{body.rstrip()}\n\n" for title, body in sections)


def build_initial_prompt(static: StaticKnowledge, specs: SpecSet | None = None, include_lut: bool = True) -> str:
    if specs is not None:
        static = replace(static, spec_table=spec_table(specs))
    sections = _sections(static, include_lut)
    sections.append(
        (
            "TASK",
            "Act as a theoretical calculator. Derive a complete initial sizing for M1..M7 "
            "(W, L and m of every device) and C1 from the material above. "
            "Emit every parameter in the ACTIONS block.",
        )
    )
    sections.append(("RESPONSE FORMAT", RESPONSE_FORMAT))
    return _join(sections)


@dataclass(frozen=True)
class Unmet:
    metric: Metric
    corner: ProcessCorner
    value: float
    target: float
    margin_frac: float


@dataclass(frozen=True)
class IterationContext:
    iteration: int
    params: CircuitParams
    specs: SpecSet
    metrics: Mapping[ProcessCorner, PerfMetrics] = field(default_factory=dict)
    reports: Mapping[ProcessCorner, EvalReport] = field(default_factory=dict)
    history_summary: str = "none"
    phase: Mode = Mode.TT
    netlist_text: str = ""

    @property
    def unmet(self) -> list[Unmet]:
        out = []
        for corner, rep in self.reports.items():
            for m, c in rep.checks.items():
                if not c.passed:
                    out.append(Unmet(m, corner, c.value, c.target, c.margin_frac))
        return out

    @property
    def failing(self) -> set[Metric]:
        return {u.metric for u in self.unmet}

    @property
    def has_results(self) -> bool:
        return bool(self.metrics)


def params_table(params: CircuitParams) -> str:
    rows = [f"{'Dev':<4} {'W(um)':>8} {'L(um)':>7} {'m':>4}"]
    for role in ROLES:
        g = params[role]
        rows.append(f"{role:<4} {g.w:>8g} {g.l:>7g} {g.m:>4d}   ({ROLE_KIND[role].value})")
    rows.append(f"C1 = {format_eng(params.c1)}F   CL = {format_eng(params.cl)}F (fixed)")
    return "\n".join(rows) + "\n"


def results_table(ctx: IterationContext) -> str:
    rows = []
    for corner, rep in ctx.reports.items():
        rows.append(f"[{ProcessCorner(corner).value}, {rep.mode.value} targets]")
        for m, c in rep.checks.items():
            item = ctx.specs[m]
            rows.append(
                f"  {m.value:<5} {fmt_metric(m, c.value):>14}  target {_SYM[item.direction]} "
                f"{fmt_metric(m, c.target):<12} margin {c.margin_frac * 100:+.1f}%  {'pass' if c.passed else 'FAIL'}"
            )
    return "\n".join(rows) + "\n" if rows else "none\n"


def unmet_table(ctx: IterationContext) -> str:
    unmet = ctx.unmet
    if not unmet:
        return "none\n"
    return "".join(
        f"- {u.metric.value} at {u.corner.value}: {fmt_metric(u.metric, u.value)} vs target "
        f"{fmt_metric(u.metric, u.target)} (margin {u.margin_frac * 100:+.1f}%)\n"
        for u in unmet
    )


def build_iteration_prompt(static: StaticKnowledge, ctx: IterationContext, include_lut: bool = True) -> str:
    sections = _sections(static, include_lut)
    sections += [
        (f"ITERATION {ctx.iteration}: CURRENT PARAMETERS", params_table(ctx.params)),
        *([("CURRENT NETLIST", ctx.netlist_text)] if ctx.netlist_text else []),
        ("SIMULATION RESULTS", results_table(ctx)),
        ("UNMET SPECIFICATIONS", unmet_table(ctx)),
        ("OPTIMIZATION HISTORY", ctx.history_summary or "none"),
        (
            "TASK",
            "Follow the Output Visibility principle: show your reasoning, not only the result. "
            "Write the Observation, then the Thinking Process weighing every trade-off against the "
            "margins above, then the Action with the exact parameter edits.",
        ),
        ("RESPONSE FORMAT", RESPONSE_FORMAT),
    ]
    return _join(sections)
