"""Closed-loop driver: propose, patch, evaluate, judge, repeat.

Phase ``tt`` evaluates the typical corner only. The first TT pass triggers a
verification record that evaluates every configured corner against derated
targets; if any corner fails the loop continues in phase ``corner``. A corner
iteration that breaks TT sends the loop back to phase ``tt``.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .device import CORNERS, ProcessCorner
from .metrics import Metric, PerfMetrics, fmt_metric
from .netlist import CircuitParams, NetlistDoc, apply_patches, extract_params, format_eng, parse_netlist
from .specs import DEFAULT_FOM, EvalReport, FomReport, Mode, SpecSet, compute_fom, evaluate_specs
from .strategy import ActionPlan, IterationContext, Proposal, Strategist

log = logging.getLogger(__name__)

TT = ProcessCorner.TT
LOG_SCHEMA = "gmidflow-runlog"
LOG_VERSION = 1
STALL_WINDOW = 6
PLATEAU_TOL = 0.01


class RunError(RuntimeError):
    pass


class CorruptLogError(RunError):
    def __init__(self, path, lineno: int, reason: str):
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: corrupt record ({reason})")


class Status(str, Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration_limit"
    STALLED = "stalled"
    ERROR = "error"


class Phase(str, Enum):
    TT = "tt"
    CORNER = "corner"


class Backend(Protocol):
    name: str

    def evaluate(self, params: CircuitParams, corner: ProcessCorner, **kw) -> PerfMetrics: ...


@dataclass(frozen=True)
class LoopSettings:
    max_tt_iters: int = 15
    max_corner_iters: int = 5
    corners: tuple[ProcessCorner, ...] = CORNERS
    stall_window: int = STALL_WINDOW
    plateau_tol: float = PLATEAU_TOL
    history_k: int = 5
    workers: int = 1
    fom_formula: str = DEFAULT_FOM

    def __post_init__(self):
        if self.max_tt_iters < 1 or self.max_corner_iters < 1:
            raise RunError("iteration budgets must be at least 1")
        corners = tuple(ProcessCorner(c) for c in self.corners)
        if not corners or len(set(corners)) != len(corners):
            raise RunError("corner list must be nonempty and unique")
        if TT not in corners:
            corners = (TT,) + corners
        object.__setattr__(self, "corners", corners)
        if self.stall_window < 3:
            raise RunError("stall window must be at least 3")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    phase: Phase
    params: CircuitParams
    plan: ActionPlan | None
    metrics: Mapping[ProcessCorner, PerfMetrics]
    reports: Mapping[ProcessCorner, EvalReport]
    all_pass: bool
    wall_ms: float
    verification: bool = False
    prompt: str | None = None
    reply: str | None = None
    exchanges: tuple = ()

    def to_dict(self) -> dict:
        d = {
            "type": "iteration",
            "iteration": self.iteration,
            "phase": self.phase.value,
            "verification": self.verification,
            "params": self.params.to_dict(),
            "plan": self.plan.to_dict() if self.plan else None,
            "metrics": {c.value: m.to_dict() for c, m in self.metrics.items()},
            "reports": {c.value: r.to_dict() for c, r in self.reports.items()},
            "all_pass": self.all_pass,
            "wall_ms": self.wall_ms,
        }
        if self.prompt is not None:
            d["prompt"] = self.prompt
            d["reply"] = self.reply
            d["exchanges"] = list(self.exchanges)
        return d

    @classmethod
    def from_dict(cls, d) -> "IterationRecord":
        return cls(
            iteration=int(d["iteration"]),
            phase=Phase(d["phase"]),
            params=CircuitParams.from_dict(d["params"]),
            plan=ActionPlan.from_dict(d["plan"]) if d["plan"] else None,
            metrics={ProcessCorner(c): PerfMetrics.from_dict(m) for c, m in d["metrics"].items()},
            reports={ProcessCorner(c): EvalReport.from_dict(r) for c, r in d["reports"].items()},
            all_pass=bool(d["all_pass"]),
            wall_ms=float(d["wall_ms"]),
            verification=bool(d.get("verification", False)),
            prompt=d.get("prompt"),
            reply=d.get("reply"),
            exchanges=tuple(d.get("exchanges", ())),
        )


@dataclass(frozen=True)
class RunOutcome:
    status: Status
    history: tuple[IterationRecord, ...]
    detail: str = ""
    fom: FomReport | None = None

    @property
    def final(self) -> IterationRecord | None:
        return self.history[-1] if self.history else None

    @property
    def tt_iters(self) -> int:
        return sum(1 for r in self.history if r.phase is Phase.TT and not r.verification)

    @property
    def corner_iters(self) -> int:
        return sum(1 for r in self.history if r.phase is Phase.CORNER and not r.verification)

    @property
    def total_iters(self) -> int:
        return self.tt_iters + self.corner_iters

    def counts(self) -> str:
        return f"TT:{self.tt_iters}, corner:{self.corner_iters}"

    def outcome_dict(self) -> dict:
        return {
            "type": "outcome",
            "status": self.status.value,
            "detail": self.detail,
            "tt_iters": self.tt_iters,
            "corner_iters": self.corner_iters,
            "fom": self.fom.to_dict() if self.fom else None,
        }


# --- persistence ----------------------------------------------------------


class RunLog:
    """Append-only JSON-lines log; every line is flushed to disk before returning."""

    def __init__(self, path: str | Path, meta: Mapping | None = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            header = {"type": "header", "schema": LOG_SCHEMA, "version": LOG_VERSION, **(meta or {})}
            _write_line(fh, header)

    def append(self, record: IterationRecord | Mapping) -> None:
        persist_record(self.path, record)


def _write_line(fh, obj) -> None:
    fh.write(json.dumps(obj, sort_keys=True) + "\n")
    fh.flush()
    os.fsync(fh.fileno())


def persist_record(path: str | Path, record: IterationRecord | Mapping) -> None:
    obj = record.to_dict() if isinstance(record, IterationRecord) else dict(record)
    with open(path, "a", encoding="utf-8") as fh:
        _write_line(fh, obj)


@dataclass(frozen=True)
class LoadedRun:
    header: dict
    history: tuple[IterationRecord, ...]
    outcome: dict | None
    warnings: tuple[str, ...] = ()

    @property
    def status(self) -> Status | None:
        return Status(self.outcome["status"]) if self.outcome else None


def load_run(path: str | Path) -> LoadedRun:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    trailing_partial = not text.endswith("\n") and text != ""
    if lines and lines[-1] == "":
        lines.pop()
    header: dict = {}
    history: list[IterationRecord] = []
    outcome = None
    warnings: list[str] = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        last = lineno == len(lines)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if last and trailing_partial:
                msg = f"{path}:{lineno}: ignoring truncated final record"
                log.warning(msg)
                warnings.append(msg)
                break
            raise CorruptLogError(path, lineno, str(exc)) from None
        kind = obj.get("type") if isinstance(obj, dict) else None
        try:
            if kind == "header":
                if obj.get("schema") != LOG_SCHEMA:
                    raise ValueError(f"unknown schema {obj.get('schema')!r}")
                if obj.get("version") != LOG_VERSION:
                    raise ValueError(f"unsupported version {obj.get('version')!r}")
                header = obj
            elif kind == "iteration":
                history.append(IterationRecord.from_dict(obj))
            elif kind == "outcome":
                outcome = obj
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptLogError(path, lineno, str(exc)) from None
    return LoadedRun(header, tuple(history), outcome, tuple(warnings))


def recheck_converged(history: Sequence[IterationRecord], specs: SpecSet, corners: Sequence[ProcessCorner]) -> bool:
    """Re-judge the final record's stored metrics from scratch: derated targets at
    every corner, and the nominal targets at TT."""
    if not history:
        return False
    final = history[-1]
    for corner in map(ProcessCorner, corners):
        m = final.metrics.get(corner)
        if m is None or not evaluate_specs(m, specs, Mode.CORNER).all_pass:
            return False
        if corner is TT and not evaluate_specs(m, specs, Mode.TT).all_pass:
            return False
    return True


# --- stall detection and history summary ----------------------------------


def _steps(history: Sequence[IterationRecord]) -> list[IterationRecord]:
    return [r for r in history if not r.verification]


def _worst_margins(rec: IterationRecord) -> dict[Metric, float]:
    out: dict[Metric, float] = {}
    for rep in rec.reports.values():
        for m, c in rep.checks.items():
            out[m] = min(out.get(m, c.margin_frac), c.margin_frac)
    return out


def stall_evidence(
    history: Sequence[IterationRecord], window: int = STALL_WINDOW, tol: float = PLATEAU_TOL
) -> str | None:
    if window < 3:
        raise RunError("stall window must be at least 3")
    steps = _steps(history)
    if len(steps) < window:
        return None
    win = steps[-window:]
    seen: dict[tuple, int] = {}
    for rec in win:
        v = rec.params.vector()
        if v in seen:
            return f"cycle: parameters of iteration {rec.iteration} repeat iteration {seen[v]}"
        seen[v] = rec.iteration
    failing = [m for m, c in _worst_margins(win[-1]).items() if c < 0]
    if not failing:
        return None
    first = _worst_margins(win[0])
    for m in failing:
        best = max(_worst_margins(r).get(m, float("-inf")) for r in win[1:])
        if best - first.get(m, float("-inf")) > tol:
            return None
    names = ", ".join(m.value for m in failing)
    return f"plateau: no failing metric ({names}) improved by more than {tol:.0%} over {window} iterations"


def detect_stall(history: Sequence[IterationRecord], window: int = STALL_WINDOW, tol: float = PLATEAU_TOL) -> bool:
    return stall_evidence(history, window, tol) is not None


def _param_changes(old: CircuitParams | None, new: CircuitParams) -> str:
    if old is None:
        return "seed"
    out = []
    for role in sorted(new.devices):
        a, b = old[role], new[role]
        for label, x, y in (("W", a.w, b.w), ("L", a.l, b.l)):
            if x != y:
                out.append(f"{role}.{label} {x:g}u->{y:g}u")
        if a.m != b.m:
            out.append(f"{role}.m {a.m}->{b.m}")
    if old.c1 != new.c1:
        out.append(f"C1 {format_eng(old.c1)}->{format_eng(new.c1)}")
    return ", ".join(out) or "no change"


def _metric_cells(rec: IterationRecord) -> str:
    cells = []
    for m in Metric:
        worst = None
        for corner, rep in rec.reports.items():
            c = rep.checks.get(m)
            if c is not None and (worst is None or c.margin_frac < worst[1].margin_frac):
                worst = (corner, c)
        if worst is None:
            continue
        corner, c = worst
        at = f"@{corner.value}" if len(rec.reports) > 1 else ""
        cells.append(f"{m.value} {fmt_metric(m, c.value)}{at} {'ok' if c.passed else 'FAIL'}")
    return "; ".join(cells)


def summarize_history(history: Sequence[IterationRecord], k: int = 5) -> str:
    if not history:
        return "none"
    lines = []
    start = max(0, len(history) - k)
    for i in range(start, len(history)):
        rec = history[i]
        prev = history[i - 1].params if i > 0 else None
        tag = "corner check" if rec.verification else rec.phase.value
        lines.append(f"iter {rec.iteration} [{tag}] {_param_changes(prev, rec.params)} | {_metric_cells(rec)}")
    return "\n".join(lines)


# --- the loop -------------------------------------------------------------


def _evaluate(backend: Backend, params, doc, corners, iteration: int, workers: int) -> dict[ProcessCorner, PerfMetrics]:
    def one(c):
        return backend.evaluate(params, c, doc=doc, iteration=iteration)

    if workers > 1 and len(corners) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, corners))
    else:
        results = [one(c) for c in corners]
    # merged in configured corner order regardless of completion order
    return dict(zip(corners, results))


def _judge(metrics: Mapping[ProcessCorner, PerfMetrics], specs: SpecSet) -> dict[ProcessCorner, EvalReport]:
    return {c: evaluate_specs(m, specs, Mode.TT if c is TT else Mode.CORNER) for c, m in metrics.items()}


def run_loop(
    doc: NetlistDoc,
    specs: SpecSet,
    strategist: Strategist,
    backend: Backend,
    log_path: str | Path,
    settings: LoopSettings = LoopSettings(),
    meta: Mapping | None = None,
    on_record=None,
) -> RunOutcome:
    runlog = RunLog(log_path, meta)
    history: list[IterationRecord] = []
    phase = Phase.TT
    iteration = 0
    tt_used = corner_used = 0
    ctx = IterationContext(1, extract_params(doc), specs, netlist_text=doc.text)

    def persist(rec: IterationRecord) -> None:
        runlog.append(rec)
        history.append(rec)
        if on_record:
            on_record(rec)

    def finish(status: Status, detail: str = "") -> RunOutcome:
        fom = None
        final = history[-1] if history else None
        if final is not None and TT in final.metrics:
            try:
                fom = compute_fom(final.metrics[TT], final.params, settings.fom_formula)
            except Exception as exc:  # a bad formula must not hide the run result
                detail = f"{detail}; fom unavailable: {exc}".lstrip("; ")
        out = RunOutcome(status, tuple(history), detail, fom)
        runlog.append(out.outcome_dict())
        return out

    try:
        while True:
            if phase is Phase.TT and tt_used >= settings.max_tt_iters:
                return finish(Status.ITERATION_LIMIT, f"TT budget of {settings.max_tt_iters} exhausted")
            if phase is Phase.CORNER and corner_used >= settings.max_corner_iters:
                return finish(Status.ITERATION_LIMIT, f"corner budget of {settings.max_corner_iters} exhausted")
            iteration += 1
            ctx = IterationContext(
                iteration,
                ctx.params,
                specs,
                ctx.metrics,
                ctx.reports,
                summarize_history(history, settings.history_k),
                Mode.TT if phase is Phase.TT else Mode.CORNER,
                doc.text,
            )
            t0 = time.perf_counter()
            proposal: Proposal = strategist.propose(ctx)
            plan = proposal.plan
            if plan.declared_done:
                return finish(Status.STALLED, f"strategist declared done at iteration {iteration} with specs unmet")
            doc = apply_patches(doc, plan.patches)
            params = extract_params(doc)
            corners = (TT,) if phase is Phase.TT else settings.corners
            metrics = _evaluate(backend, params, doc, corners, iteration, settings.workers)
            reports = _judge(metrics, specs)
            all_pass = all(r.all_pass for r in reports.values())
            rec = IterationRecord(
                iteration,
                phase,
                params,
                plan,
                metrics,
                reports,
                all_pass,
                (time.perf_counter() - t0) * 1e3,
                prompt=proposal.prompt,
                reply=proposal.reply,
                exchanges=tuple(proposal.exchanges),
            )
            persist(rec)
            if phase is Phase.TT:
                tt_used += 1
            else:
                corner_used += 1

            if phase is Phase.TT and all_pass:
                t0 = time.perf_counter()
                metrics = _evaluate(backend, params, doc, settings.corners, iteration, settings.workers)
                reports = _judge(metrics, specs)
                all_pass = all(r.all_pass for r in reports.values())
                rec = IterationRecord(
                    iteration, Phase.CORNER, params, None, metrics, reports, all_pass,
                    (time.perf_counter() - t0) * 1e3, verification=True,
                )
                persist(rec)
                phase = Phase.CORNER
            if all_pass:
                return finish(Status.CONVERGED, f"all corners pass after {iteration} iterations")
            if phase is Phase.CORNER and not reports[TT].all_pass:
                phase = Phase.TT
            evidence = stall_evidence(history, settings.stall_window, settings.plateau_tol)
            if evidence:
                return finish(Status.STALLED, evidence)
            ctx = IterationContext(iteration + 1, params, specs, metrics, reports, netlist_text=doc.text)
    except Exception as exc:
        log.debug("run aborted", exc_info=True)
        return finish(Status.ERROR, f"{type(exc).__name__}: {exc}")


def load_seed(path: str | Path) -> NetlistDoc:
    return parse_netlist(Path(path).read_text())


# --- configured runs ------------------------------------------------------


class StrategistKind(str, Enum):
    LLM = "llm"
    LLM_NO_GMID = "llm_no_gmid"
    RULES = "rules"
    GMID = "gmid"
    REPLAY = "replay"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            return cls.__members__.get(value.upper().replace("-", "_"))
        return None


class BackendKind(str, Enum):
    ANALYTIC = "analytic"
    SPICE = "spice"
    STUB = "stub-fixtures"


@dataclass(frozen=True)
class RunConfig:
    strategist: StrategistKind
    backend: BackendKind
    netlist: Path
    spec: Path
    log: Path
    max_tt_iters: int = 15
    max_corner_iters: int = 5
    corners: tuple[ProcessCorner, ...] = CORNERS
    lut_dir: Path | None = None
    model_config: Path | None = None
    replay_script: Path | None = None
    recorded: Path | None = None
    endpoint: object | None = None  # strategy.EndpointConfig
    spice: object | None = None  # backends.SpiceConfig
    fom_formula: str = DEFAULT_FOM
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategist", StrategistKind(self.strategist))
        object.__setattr__(self, "backend", BackendKind(self.backend))
        # validates budgets and corners early
        self.settings()

    def settings(self) -> LoopSettings:
        return LoopSettings(
            max_tt_iters=self.max_tt_iters,
            max_corner_iters=self.max_corner_iters,
            corners=tuple(self.corners),
            fom_formula=self.fom_formula,
            workers=self.workers,
        )

    def meta(self) -> dict:
        return {
            "strategist": self.strategist.value,
            "backend": self.backend.value,
            "netlist": str(self.netlist),
            "spec": str(self.spec),
            "corners": [ProcessCorner(c).value for c in self.corners],
            "max_tt_iters": self.max_tt_iters,
            "max_corner_iters": self.max_corner_iters,
        }


def load_luts(lut_dir: Path | None = None, model_config: Path | None = None):
    from . import device
    from .lut import build_lut_set, load_lut_dir

    if lut_dir is not None:
        return load_lut_dir(lut_dir)
    config = device.load_model_config(model_config) if model_config else device.DEFAULT_CONFIG
    return build_lut_set(config)


def build_components(config: RunConfig, specs: SpecSet, luts=None):
    """(strategist, backend) for ``config``; constructing them performs all up-front validation."""
    from . import assets
    from .backends import AnalyticBackend, RecordedBackend, SpiceBackend, SpiceConfig
    from .strategy import (
        GmidStrategist,
        LlmStrategist,
        ReplayStrategist,
        RulesStrategist,
        build_static_knowledge,
        load_script,
    )

    kind = config.strategist
    need_luts = kind in (StrategistKind.GMID, StrategistKind.LLM, StrategistKind.LLM_NO_GMID)
    need_luts = need_luts or config.backend is BackendKind.ANALYTIC
    if luts is None and need_luts:
        luts = load_luts(config.lut_dir, config.model_config)

    if kind is StrategistKind.RULES:
        strategist = RulesStrategist()
    elif kind is StrategistKind.GMID:
        strategist = GmidStrategist(luts)
    elif kind is StrategistKind.REPLAY:
        strategist = ReplayStrategist(load_script(config.replay_script or assets.data_path(assets.TABLE3_SCRIPT)))
    else:
        if config.endpoint is None:
            raise RunError("llm strategies need an endpoint configuration")
        config.endpoint.credential()  # fail before any iteration
        strategist = LlmStrategist(
            config.endpoint,
            build_static_knowledge(luts, specs),
            specs,
            include_lut=kind is StrategistKind.LLM,
        )

    if config.backend is BackendKind.ANALYTIC:
        backend = AnalyticBackend(luts)
    elif config.backend is BackendKind.STUB:
        backend = RecordedBackend.from_file(config.recorded or assets.data_path(assets.TABLE3_RECORDED))
    else:
        backend = SpiceBackend(config.spice or SpiceConfig())
    return strategist, backend


def run(config: RunConfig, on_record=None, luts=None) -> RunOutcome:
    from .specs import load_specs

    specs = load_specs(config.spec)
    doc = load_seed(config.netlist)
    strategist, backend = build_components(config, specs, luts)
    return run_loop(doc, specs, strategist, backend, config.log, config.settings(), config.meta(), on_record)
