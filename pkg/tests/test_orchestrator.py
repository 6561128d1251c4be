import json

import pytest

from gmidflow import assets
from gmidflow.backends import AnalyticBackend, BackendError, RecordedBackend
from gmidflow.device import ProcessCorner
from gmidflow.metrics import PerfMetrics
from gmidflow.netlist import CircuitParams, DeviceGeom, extract_params, parse_netlist
from gmidflow.orchestrator import (
    CorruptLogError,
    IterationRecord,
    LoopSettings,
    Phase,
    RunConfig,
    RunError,
    RunLog,
    Status,
    detect_stall,
    load_run,
    persist_record,
    recheck_converged,
    run,
    run_loop,
    stall_evidence,
    summarize_history,
)
from gmidflow.specs import DEFAULT_SPECS, Mode, evaluate_specs
from gmidflow.strategy import ActionPlan, Proposal, ReplayStrategist, RulesStrategist, load_script

TT = ProcessCorner.TT


def _params(c1_pf=1.0, m7=4):
    devs = {r: DeviceGeom(1.0, 0.18, 1) for r in ("M1", "M2", "M3", "M4")}
    devs.update(M5=DeviceGeom(2.0, 0.5, 2), M6=DeviceGeom(2.0, 0.5, 8), M7=DeviceGeom(1.0, 0.18, m7))
    return CircuitParams(devs, c1_pf * 1e-12)


def _rec(i, params, m, phase=Phase.TT, verification=False):
    mode = Mode.TT if phase is Phase.TT else Mode.CORNER
    reports = {TT: evaluate_specs(m, DEFAULT_SPECS, mode)}
    plan = None if verification else ActionPlan("o", "t", declared_done=True)
    return IterationRecord(i, phase, params, plan, {TT: m}, reports, reports[TT].all_pass, 1.0, verification)


def _replay_history(tmp_path):
    seed = parse_netlist(assets.data_path(assets.SEED_NETLIST).read_text())
    script = load_script(assets.data_path(assets.TABLE3_SCRIPT))
    backend = RecordedBackend.from_file(assets.data_path(assets.TABLE3_RECORDED))
    return run_loop(seed, DEFAULT_SPECS, ReplayStrategist(script), backend, tmp_path / "r.jsonl")


# --- stall detection --------------------------------------------------------


def test_alternating_cc_is_a_cycle():
    m = PerfMetrics(55, 25e6, 50, 25, 150e-6)
    hist = [_rec(i, _params(1.0 if i % 2 else 1.1), m) for i in range(1, 7)]
    assert detect_stall(hist)
    assert stall_evidence(hist).startswith("cycle: parameters of iteration 3 repeat iteration 1")


def test_improving_margins_not_stalled():
    hist = [_rec(i, _params(m7=i), PerfMetrics(55, 25e6, 50 + i, 25, 150e-6)) for i in range(1, 8)]
    assert not detect_stall(hist)


def test_plateau():
    hist = [_rec(i, _params(m7=i), PerfMetrics(55 + 0.01 * i, 25e6, 65, 25, 150e-6)) for i in range(1, 7)]
    ev = stall_evidence(hist)
    assert ev.startswith("plateau:") and "GAIN" in ev


def test_short_history_not_stalled():
    m = PerfMetrics(55, 25e6, 50, 25, 150e-6)
    hist = [_rec(i, _params(), m) for i in range(1, 6)]
    assert not detect_stall(hist)
    assert detect_stall(hist, window=3)


def test_verification_records_do_not_count():
    m = PerfMetrics(55, 25e6, 50, 25, 150e-6)
    hist = [_rec(i, _params(m7=i), m) for i in range(1, 6)]
    hist.append(_rec(5, _params(m7=5), m, Phase.CORNER, verification=True))
    assert not detect_stall(hist)


def test_window_validation():
    with pytest.raises(RunError):
        stall_evidence([], window=2)
    with pytest.raises(RunError):
        LoopSettings(stall_window=2)


# --- history summary --------------------------------------------------------


def test_summary_of_replay(tmp_path):
    out = _replay_history(tmp_path)
    text = summarize_history(out.history[:4], 5)
    lines = text.splitlines()
    assert lines[0].startswith("iter 1 [tt] seed | GAIN 52.19 dB FAIL")
    assert "C1 700f->1.2p" in lines[2] and "M1.W 1u->3u" in lines[2]
    assert "GBW" in lines[3]


def test_summary_limits(tmp_path):
    out = _replay_history(tmp_path)
    assert summarize_history([], 5) == "none"
    assert len(summarize_history(out.history, 3).splitlines()) == 3
    assert len(summarize_history(out.history, 50).splitlines()) == len(out.history)
    last_two = summarize_history(out.history, 2).splitlines()
    assert last_two[0].startswith("iter 5 [corner check] no change")
    assert last_two[1].startswith("iter 6 [corner] C1 1p->900f")


# --- persistence ------------------------------------------------------------


def test_log_round_trip(tmp_path):
    out = _replay_history(tmp_path)
    loaded = load_run(tmp_path / "r.jsonl")
    assert loaded.history == out.history
    assert loaded.header["schema"] == "gmidflow-runlog"
    assert loaded.status is Status.CONVERGED and loaded.outcome["tt_iters"] == 5
    assert recheck_converged(loaded.history, DEFAULT_SPECS, list(ProcessCorner))


def test_truncated_tail(tmp_path):
    _replay_history(tmp_path)
    path = tmp_path / "r.jsonl"
    lines = path.read_text().splitlines(keepends=True)
    # header, five steps, then a half-written sixth record
    path.write_text("".join(lines[:6]) + lines[6][: len(lines[6]) // 2])
    loaded = load_run(path)
    assert len(loaded.history) == 5 and loaded.outcome is None
    assert "truncated" in loaded.warnings[0]


def test_empty_log(tmp_path):
    RunLog(tmp_path / "e.jsonl", {"strategist": "rules"})
    loaded = load_run(tmp_path / "e.jsonl")
    assert loaded.history == () and loaded.status is None and loaded.header["strategist"] == "rules"


def test_corrupt_middle(tmp_path):
    _replay_history(tmp_path)
    path = tmp_path / "r.jsonl"
    lines = path.read_text().splitlines(keepends=True)
    lines[3] = "{not json\n"
    path.write_text("".join(lines))
    with pytest.raises(CorruptLogError) as info:
        load_run(path)
    assert info.value.lineno == 4


def test_unknown_record_type(tmp_path):
    path = tmp_path / "x.jsonl"
    RunLog(path)
    persist_record(path, {"type": "mystery"})
    with pytest.raises(CorruptLogError, match="unknown record type"):
        load_run(path)


def test_recheck_rejects_tampered_metrics(tmp_path):
    out = _replay_history(tmp_path)
    final = out.history[-1]
    bad = dict(final.metrics)
    bad[ProcessCorner.SF] = PerfMetrics(59.9, 18.9e6, 63.0, 30.59, 118.3e-6)
    forged = IterationRecord(final.iteration, final.phase, final.params, None, bad, final.reports, True, 0.0, True)
    assert not recheck_converged(out.history[:-1] + (forged,), DEFAULT_SPECS, list(ProcessCorner))
    assert not recheck_converged((), DEFAULT_SPECS, [TT])


# --- loop -------------------------------------------------------------------


def test_replay_run(tmp_path):
    out = _replay_history(tmp_path)
    assert out.status is Status.CONVERGED and out.counts() == "TT:5, corner:1"
    assert out.final.phase is Phase.CORNER and out.final.params.c1 == 0.9e-12
    assert [r.iteration for r in out.history if r.verification] == [5]
    steps = [r for r in out.history if not r.verification]
    assert [r.iteration for r in steps] == [1, 2, 3, 4, 5, 6]
    assert out.fom.formula == "gbw_cl_over_idc"


def test_iteration_limit(tmp_path):
    seed = parse_netlist(assets.data_path(assets.SEED_NETLIST).read_text())
    backend = RecordedBackend.from_file(assets.data_path(assets.TABLE3_RECORDED))
    script = load_script(assets.data_path(assets.TABLE3_SCRIPT))
    out = run_loop(seed, DEFAULT_SPECS, ReplayStrategist(script), backend, tmp_path / "r.jsonl",
                   LoopSettings(max_tt_iters=3))
    assert out.status is Status.ITERATION_LIMIT and out.counts() == "TT:3, corner:0"
    assert load_run(tmp_path / "r.jsonl").status is Status.ITERATION_LIMIT


def test_parallel_corners_deterministic(tmp_path, luts):
    config = RunConfig("gmid", "analytic", netlist=assets.data_path(assets.SEED_NETLIST),
                       spec=assets.data_path(assets.DEFAULT_SPEC), log=tmp_path / "a.jsonl")
    a = run(config, luts=luts)
    b = run(RunConfig("gmid", "analytic", netlist=config.netlist, spec=config.spec, log=tmp_path / "b.jsonl",
                      workers=4), luts=luts)
    assert a.status is Status.CONVERGED
    assert [(r.params, dict(r.metrics)) for r in a.history] == [(r.params, dict(r.metrics)) for r in b.history]
    assert list(a.history[-1].metrics) == list(ProcessCorner)


class _Done:
    name = "done"

    def propose(self, ctx):
        return Proposal(ActionPlan("o", "t", declared_done=True))


def test_done_with_unmet_specs_is_stalled(tmp_path, seed_doc, luts):
    out = run_loop(seed_doc, DEFAULT_SPECS, _Done(), AnalyticBackend(luts), tmp_path / "d.jsonl")
    assert out.status is Status.STALLED and "declared done" in out.detail
    assert out.history == ()


class _Broken:
    name = "broken"

    def evaluate(self, params, corner, **kw):
        raise BackendError("simulator exploded")


def test_backend_error_is_logged(tmp_path, seed_doc):
    out = run_loop(seed_doc, DEFAULT_SPECS, RulesStrategist(), _Broken(), tmp_path / "x.jsonl")
    assert out.status is Status.ERROR and "simulator exploded" in out.detail
    last = json.loads((tmp_path / "x.jsonl").read_text().splitlines()[-1])
    assert last["type"] == "outcome" and last["status"] == "error"


def test_rules_stall_on_gain_limited(tmp_path, luts):
    doc = parse_netlist(assets.data_path(assets.GAIN_LIMITED_NETLIST).read_text())
    out = run_loop(doc, DEFAULT_SPECS, RulesStrategist(), AnalyticBackend(luts), tmp_path / "g.jsonl")
    assert out.status is Status.STALLED
    assert extract_params(doc) == out.history[0].params


def test_settings_validation():
    with pytest.raises(RunError):
        LoopSettings(max_tt_iters=0)
    with pytest.raises(RunError):
        LoopSettings(corners=(ProcessCorner.SS, ProcessCorner.SS))
    assert LoopSettings(corners=(ProcessCorner.SS,)).corners == (TT, ProcessCorner.SS)
