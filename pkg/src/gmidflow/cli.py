"""Command-line entry point: ``gmidflow <verb> [flags]``.

Exit codes: 0 ok/converged, 1 error, 2 usage or configuration, 3 iteration
budget exhausted, 4 stalled.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import assets, device
from .device import CORNERS, DeviceKind, ProcessCorner
from .kvconfig import ConfigError
from .lut import LutError, build_lut, invert_gm_over_id, lut_filename, model_evaluator, query, save_lut
from .metrics import Metric, fmt_metric
from .netlist import NetlistError
from .orchestrator import (
    TT,
    BackendKind,
    CorruptLogError,
    IterationRecord,
    RunConfig,
    RunError,
    RunOutcome,
    Status,
    StrategistKind,
    build_components,
    load_luts,
    load_run,
    run,
)
from .specs import (
    DEFAULT_FOM,
    FOM_FORMULAS,
    Mode,
    SpecError,
    SpecSet,
    compute_fom,
    evaluate_specs,
    format_report,
    format_worst_case,
    load_specs,
    report_records,
    worst_case,
)
from .strategy import AuthenticationError, EndpointConfig, LlmError, PlanError, load_endpoint

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_BUDGET, EXIT_STALLED = 0, 1, 2, 3, 4
STATUS_EXIT = {
    Status.CONVERGED: EXIT_OK,
    Status.ITERATION_LIMIT: EXIT_BUDGET,
    Status.STALLED: EXIT_STALLED,
    Status.ERROR: EXIT_ERROR,
}
ENDPOINT_URL_ENV = "GMIDFLOW_LLM_URL"
ENDPOINT_MODEL_ENV = "GMIDFLOW_LLM_MODEL"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _corner(text: str) -> ProcessCorner:
    try:
        return ProcessCorner(text.upper())
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown corner {text!r}") from None


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _asset(path: str | None, name: str) -> Path:
    return Path(path) if path else assets.data_path(name)


# --- verbs ----------------------------------------------------------------


def cmd_lut_build(args) -> int:
    config = device.load_model_config(args.model_config) if args.model_config else device.DEFAULT_CONFIG
    kinds = list(DeviceKind) if args.kind == "both" else [DeviceKind(args.kind)]
    corners = list(CORNERS) if args.all_corners else [args.corner]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    targets = [out / lut_filename(k, c) for c in corners for k in kinds]
    existing = [p for p in targets if p.exists()]
    if existing and not args.force:
        raise UsageError(f"{existing[0]} exists; pass --force to overwrite")
    ev = model_evaluator(config)
    for c in corners:
        for k in kinds:
            try:
                grid = build_lut(ev, k, c)
            except LutError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_ERROR
            path = save_lut(grid, out)
            nl, nv = grid.shape
            print(f"{path}  {k.value} {c.value}  {nl} L x {nv} Vgs  Vds={grid.vds:g} V")
    return EXIT_OK


def cmd_lut_query(args) -> int:
    luts = load_luts(Path(args.luts) if args.luts else None, args.model_config)
    grid = luts.get((DeviceKind(args.kind), args.corner))
    if grid is None:
        raise UsageError(f"no {args.kind} {args.corner.value} table")
    vgs = args.vgs if args.vgs is not None else invert_gm_over_id(grid, args.l, args.gmid)
    op = query(grid, args.l, vgs)
    rows = [
        ("Vgs", f"{vgs:.4f} V"),
        ("Vov", f"{op.vov:.4f} V"),
        ("gm/Id", f"{op.gm_over_id:.3f} 1/V"),
        ("Id/W", f"{op.id_per_w:.4e} A/um"),
        ("gm/W", f"{op.gm_per_w:.4e} S/um"),
        ("gds/W", f"{op.gds_per_w:.4e} S/um"),
        ("Cgg/W", f"{op.cgg_per_w:.4e} F/um"),
    ]
    print(f"{args.kind} {args.corner.value} L={args.l:g} um")
    for k, v in rows:
        print(f"  {k:<6} {v}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .netlist import extract_params, parse_netlist

    specs = load_specs(_asset(args.spec, assets.DEFAULT_SPEC))
    doc = parse_netlist(_asset(args.netlist, assets.SEED_NETLIST).read_text())
    params = extract_params(doc)
    cfg = RunConfig(
        StrategistKind.RULES,
        args.backend,
        netlist=Path("-"),
        spec=Path("-"),
        log=Path("-"),
        lut_dir=Path(args.luts) if args.luts else None,
        recorded=Path(args.fixtures) if args.fixtures else None,
        spice=_spice_config(args),
    )
    _, backend = build_components(cfg, specs)
    corners = list(CORNERS) if args.all_corners else [args.corner]
    for corner in corners:
        metrics = backend.evaluate(params, corner, doc=doc, iteration=0)
        mode = Mode.TT if corner is TT else Mode.CORNER
        report = evaluate_specs(metrics, specs, mode)
        if args.records:
            print("\n".join(report_records(report, corner)))
        else:
            print(format_report(report, specs, f"{corner.value} ({mode.value} targets)"))
    return EXIT_OK


def _spice_config(args):
    if getattr(args, "backend", None) != BackendKind.SPICE.value:
        return None
    from .backends import load_spice_config

    return load_spice_config(getattr(args, "spice_config", None))


def _endpoint(args) -> EndpointConfig:
    if args.endpoint:
        return load_endpoint(args.endpoint)
    url, model = os.environ.get(ENDPOINT_URL_ENV), os.environ.get(ENDPOINT_MODEL_ENV)
    if not (url and model):
        raise ConfigError(f"llm strategies need --endpoint or {ENDPOINT_URL_ENV} and {ENDPOINT_MODEL_ENV}")
    return EndpointConfig(url=url, model=model)


def _status_line(rec: IterationRecord) -> str:
    if rec.verification:
        tag = "corner check"
    else:
        tag = rec.phase.value
    cells = []
    for m in Metric:
        worst = min(
            ((c, r.checks[m]) for c, r in rec.reports.items()),
            key=lambda cr: cr[1].margin_frac,
        )
        corner, chk = worst
        where = f"@{corner.value}" if len(rec.reports) > 1 else ""
        cells.append(f"{m.value} {fmt_metric(m, chk.value)}{where}{'' if chk.passed else ' FAIL'}")
    edits = "" if rec.plan is None else f" ({len(rec.plan.patches)} edits)"
    return f"iter {rec.iteration:>2} [{tag}]{edits}: " + " | ".join(cells)


def _print_final(history, specs: SpecSet, status: Status, detail: str, counts: str, fom) -> None:
    print(f"status: {status.value} ({detail})")
    print(f"iterations: {counts}")
    final = history[-1] if history else None
    if final is None:
        return
    if TT in final.reports:
        tt_rec = final
    else:
        tt_rec = next(r for r in reversed(history) if TT in r.reports)
    print()
    print(format_report(evaluate_specs(tt_rec.metrics[TT], specs, Mode.TT), specs, "Performance at TT"))
    pvt = {c: m for c, m in final.metrics.items() if c is not TT}
    if pvt:
        print(format_worst_case(worst_case(pvt, specs), specs, "Worst case across process corners"))
    if fom is not None:
        print(f"FOM ({fom.formula}) = {fom.fom:.1f}   area = {fom.area_um2:.2f} um^2   FoMA = {fom.foma:.2f}")


def cmd_optimize(args) -> int:
    strategist = StrategistKind(args.strategy)
    backend = BackendKind(args.backend)
    endpoint = _endpoint(args) if strategist in (StrategistKind.LLM, StrategistKind.LLM_NO_GMID) else None
    log_path = Path(args.log) if args.log else Path(f"runs/{strategist.value}.jsonl")
    config = RunConfig(
        strategist,
        backend,
        netlist=_asset(args.netlist, assets.SEED_NETLIST),
        spec=_asset(args.spec, assets.DEFAULT_SPEC),
        log=log_path,
        max_tt_iters=args.max_iters,
        max_corner_iters=args.max_corner_iters,
        lut_dir=Path(args.luts) if args.luts else None,
        model_config=args.model_config,
        replay_script=Path(args.replay_script) if args.replay_script else None,
        recorded=Path(args.fixtures) if args.fixtures else None,
        endpoint=endpoint,
        spice=_spice_config(args),
        fom_formula=args.fom,
    )
    specs = load_specs(config.spec)
    on_record = None if args.records else (lambda rec: print(_status_line(rec), flush=True))
    outcome: RunOutcome = run(config, on_record=on_record)
    if args.records:
        sys.stdout.write(config.log.read_text())
    else:
        print()
        _print_final(outcome.history, specs, outcome.status, outcome.detail, outcome.counts(), outcome.fom)
        print(f"log: {config.log}")
    if outcome.status is Status.ERROR:
        print(f"error: {outcome.detail}", file=sys.stderr)
    return STATUS_EXIT[outcome.status]


def cmd_report(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        print(f"error: {path}: no such log", file=sys.stderr)
        return EXIT_ERROR
    try:
        loaded = load_run(path)
    except CorruptLogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for w in loaded.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not loaded.history:
        print(f"error: {path}: log holds no iterations", file=sys.stderr)
        return EXIT_ERROR
    spec_path = loaded.header.get("spec")
    specs = load_specs(spec_path) if spec_path and Path(spec_path).is_file() else load_specs(assets.data_path(assets.DEFAULT_SPEC))
    tt_iters = sum(1 for r in loaded.history if r.phase.value == "tt" and not r.verification)
    corner_iters = sum(1 for r in loaded.history if r.phase.value == "corner" and not r.verification)
    counts = f"{tt_iters + corner_iters} (TT:{tt_iters}, corner:{corner_iters})"
    status = loaded.status or Status.ERROR
    detail = loaded.outcome["detail"] if loaded.outcome else "log ends without an outcome record"
    final = loaded.history[-1]
    tt_rec = next(r for r in reversed(loaded.history) if TT in r.metrics)
    fom = compute_fom(tt_rec.metrics[TT], final.params, args.fom)
    if args.records:
        print(json.dumps({"status": status.value, "tt_iters": tt_iters, "corner_iters": corner_iters, "fom": fom.to_dict()}, sort_keys=True))
        pvt = {c: m for c, m in final.metrics.items() if c is not TT}
        for m, wc in (worst_case(pvt, specs) if pvt else {}).items():
            print(json.dumps({"metric": m.value, "worst": wc.value, "corner": wc.corner.value}, sort_keys=True))
        return EXIT_OK
    _print_final(loaded.history, specs, status, detail, counts, fom)
    return EXIT_OK


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # default seed is one the rule set cannot finish, so the failure mode shows
    netlist = _asset(args.netlist, assets.GAIN_LIMITED_NETLIST)
    spec = _asset(args.spec, assets.DEFAULT_SPEC)
    luts = load_luts(Path(args.luts) if args.luts else None)
    rows = []
    kinds = [StrategistKind.GMID, StrategistKind.RULES, StrategistKind.LLM, StrategistKind.LLM_NO_GMID]
    for kind in kinds:
        row = {"strategy": kind.value}
        endpoint = None
        if kind in (StrategistKind.LLM, StrategistKind.LLM_NO_GMID):
            try:
                endpoint = _endpoint(args)
                endpoint.credential()
            except (ConfigError, AuthenticationError) as exc:
                row.update(status="skipped", iterations=None, evidence=str(exc))
                rows.append(row)
                continue
        config = RunConfig(
            kind,
            args.backend,
            netlist=netlist,
            spec=spec,
            log=out / f"{kind.value}.jsonl",
            max_tt_iters=args.max_iters,
            endpoint=endpoint,
        )
        outcome = run(config, luts=luts)
        row.update(
            status=outcome.status.value,
            converged=outcome.status is Status.CONVERGED,
            iterations=outcome.total_iters,
            counts=outcome.counts(),
            evidence=outcome.detail,
        )
        if outcome.status is Status.CONVERGED and outcome.fom:
            row["fom"] = round(outcome.fom.fom, 6)
        rows.append(row)
    with open(out / "ablation.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if args.records:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    else:
        widths = (12, 16, 10, 20)
        head = ("Strategy", "Status", "Iters", "Counts")
        print("  ".join(h.ljust(w) for h, w in zip(head, widths)) + "  Evidence")
        for row in rows:
            cells = (
                row["strategy"],
                row["status"],
                "-" if row.get("iterations") is None else str(row["iterations"]),
                row.get("counts", "-"),
            )
            print("  ".join(c.ljust(w) for c, w in zip(cells, widths)) + "  " + row["evidence"])
    return EXIT_ERROR if any(r["status"] == Status.ERROR.value for r in rows) else EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmidflow", description="gm/Id-guided op-amp sizing loop")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    b = sub.add_parser("lut-build", help="generate lookup tables from the device model")
    b.add_argument("--kind", choices=("nmos", "pmos", "both"), default="both")
    g = b.add_mutually_exclusive_group()
    g.add_argument("--corner", type=_corner, default=ProcessCorner.TT)
    g.add_argument("--all-corners", action="store_true")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--model-config", help="device model parameter file")
    b.add_argument("--force", action="store_true", help="overwrite existing tables")
    b.set_defaults(func=cmd_lut_build)

    q = sub.add_parser("lut-query", help="look up an operating point")
    q.add_argument("--luts", help="table directory (default: build in memory)")
    q.add_argument("--model-config")
    q.add_argument("--kind", choices=("nmos", "pmos"), required=True)
    q.add_argument("--corner", type=_corner, default=ProcessCorner.TT)
    q.add_argument("--l", type=float, required=True, help="channel length, um")
    g = q.add_mutually_exclusive_group(required=True)
    g.add_argument("--vgs", type=float)
    g.add_argument("--gmid", type=float, help="target gm/Id, 1/V")
    q.set_defaults(func=cmd_lut_query)

    s = sub.add_parser("simulate", help="evaluate one netlist")
    s.add_argument("--netlist")
    s.add_argument("--spec")
    s.add_argument("--backend", choices=[k.value for k in BackendKind], default="analytic")
    s.add_argument("--luts")
    s.add_argument("--fixtures", help="recorded metrics file for the stub-fixtures backend")
    s.add_argument("--spice-config")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--corner", type=_corner, default=ProcessCorner.TT)
    g.add_argument("--all-corners", action="store_true")
    s.add_argument("--records", action="store_true", help="machine-readable output")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", help="run the sizing loop")
    o.add_argument("--netlist")
    o.add_argument("--spec")
    o.add_argument("--strategy", choices=("llm", "llm-no-gmid", "rules", "gmid", "replay"), default="gmid")
    o.add_argument("--backend", choices=[k.value for k in BackendKind], default="analytic")
    o.add_argument("--luts")
    o.add_argument("--model-config")
    o.add_argument("--log", help="run log path (default runs/<strategy>.jsonl)")
    o.add_argument("--max-iters", type=_positive_int, default=15, help="TT-phase budget")
    o.add_argument("--max-corner-iters", type=_positive_int, default=5)
    o.add_argument("--replay-script")
    o.add_argument("--fixtures", help="recorded metrics file for the stub-fixtures backend")
    o.add_argument("--endpoint", help="chat endpoint config file (url, model, credential_env)")
    o.add_argument("--spice-config")
    o.add_argument("--fom", choices=sorted(FOM_FORMULAS), default=DEFAULT_FOM)
    o.add_argument("--records", action="store_true", help="emit run-log records instead of tables")
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("report", help="summarize a run log")
    r.add_argument("--log", required=True)
    r.add_argument("--fom", choices=sorted(FOM_FORMULAS), default=DEFAULT_FOM)
    r.add_argument("--records", action="store_true")
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("ablate", help="compare strategists under one budget")
    a.add_argument("--netlist")
    a.add_argument("--spec")
    a.add_argument("--luts")
    a.add_argument("--backend", choices=("analytic",), default="analytic")
    a.add_argument("--max-iters", type=_positive_int, default=15)
    a.add_argument("--endpoint")
    a.add_argument("--out", required=True)
    a.add_argument("--records", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SpecError, AuthenticationError, RunError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LutError, NetlistError, PlanError, LlmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
