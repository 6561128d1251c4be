import json

import pytest

from gmidflow.cli import main
from gmidflow.device import DeviceKind, ProcessCorner
from gmidflow.lut import load_lut_dir, query


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for var in ("GMIDFLOW_API_KEY", "GMIDFLOW_LLM_URL", "GMIDFLOW_LLM_MODEL"):
        monkeypatch.delenv(var, raising=False)


def test_lut_build_all_corners(tmp_path, capsys, luts):
    assert main(["lut-build", "--all-corners", "--out", "t"]) == 0
    files = sorted(p.name for p in (tmp_path / "t").iterdir())
    assert len(files) == 10
    assert len(capsys.readouterr().out.splitlines()) == 10
    loaded = load_lut_dir(tmp_path / "t")
    for key in ((DeviceKind.NMOS, ProcessCorner.TT), (DeviceKind.PMOS, ProcessCorner.FS)):
        assert query(loaded[key], 0.5, 0.7) == query(luts[key], 0.5, 0.7)
    assert main(["lut-build", "--all-corners", "--out", "t"]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["lut-build", "--kind", "nmos", "--corner", "ss", "--out", "t", "--force"]) == 0


def test_lut_query(capsys):
    assert main(["lut-query", "--kind", "nmos", "--l", "0.5", "--gmid", "12"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("nmos TT L=0.5 um")
    ratio = float(next(line for line in out.splitlines() if "gm/Id" in line).split()[1])
    # inversion stops at a relative tolerance of 1e-4
    assert ratio == pytest.approx(12.0, rel=1e-4)
    assert main(["lut-query", "--kind", "nmos", "--l", "0.5", "--vgs", "0.6", "--gmid", "12"]) == 2


def test_lut_query_from_dir(capsys):
    main(["lut-build", "--kind", "pmos", "--out", "t"])
    capsys.readouterr()
    assert main(["lut-query", "--luts", "t", "--kind", "pmos", "--l", "1", "--vgs", "0.6"]) == 0
    assert main(["lut-query", "--luts", "t", "--kind", "nmos", "--l", "1", "--vgs", "0.6"]) == 2


def test_simulate(capsys):
    assert main(["simulate", "--all-corners"]) == 0
    out = capsys.readouterr().out
    for c in ProcessCorner:
        assert f"{c.value} (" in out
    assert main(["simulate", "--records", "--corner", "ss"]) == 0
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(recs) == 5 and {r["corner"] for r in recs} == {"SS"} and recs[0]["mode"] == "corner"


def test_optimize_replay(tmp_path, capsys):
    assert main(["optimize", "--strategy", "replay", "--backend", "stub-fixtures", "--log", "r.jsonl"]) == 0
    out = capsys.readouterr().out
    assert "status: converged" in out and "iterations: TT:5, corner:1" in out
    for cell in ("62.40 dB", "25.30 MHz", "65.80 deg", "28.18 V/us", "116.40 uA", "19.79 MHz"):
        assert cell in out
    assert (tmp_path / "r.jsonl").is_file()


def test_optimize_gmid_default_log(tmp_path, capsys):
    assert main(["optimize"]) == 0
    assert (tmp_path / "runs" / "gmid.jsonl").is_file()
    assert "FOM (gbw_cl_over_idc)" in capsys.readouterr().out


def test_optimize_budget_exit(capsys):
    code = main(["optimize", "--strategy", "replay", "--backend", "stub-fixtures", "--max-iters", "2", "--log", "b.jsonl"])
    assert code == 3
    assert "iteration_limit" in capsys.readouterr().out


def test_optimize_rules_stalls(capsys, tmp_path):
    from gmidflow import assets

    net = str(assets.data_path(assets.GAIN_LIMITED_NETLIST))
    assert main(["optimize", "--strategy", "rules", "--netlist", net, "--log", "s.jsonl"]) == 4


def test_llm_without_credential(tmp_path, capsys):
    ep = tmp_path / "ep.cfg"
    ep.write_text("url = https://llm.invalid/v1/chat\nmodel = m\ncredential_env = GMIDFLOW_TEST_KEY_UNSET\n")
    assert main(["optimize", "--strategy", "llm", "--endpoint", str(ep), "--log", "l.jsonl"]) == 2
    assert "GMIDFLOW_TEST_KEY_UNSET" in capsys.readouterr().err
    assert not (tmp_path / "l.jsonl").exists()
    assert main(["optimize", "--strategy", "llm", "--log", "l.jsonl"]) == 2


def test_report(capsys):
    main(["optimize", "--strategy", "replay", "--backend", "stub-fixtures", "--log", "r.jsonl"])
    capsys.readouterr()
    assert main(["report", "--log", "r.jsonl"]) == 0
    out = capsys.readouterr().out
    assert "iterations: 6 (TT:5, corner:1)" in out
    assert "FOM (gbw_cl_over_idc) = 434.7" in out and "Worst case across process corners" in out
    assert main(["report", "--log", "r.jsonl", "--records", "--fom", "sr_cl_over_idc"]) == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert lines[0]["status"] == "converged" and lines[0]["fom"]["formula"] == "sr_cl_over_idc"
    assert {r["metric"]: r["corner"] for r in lines[1:]}["GBW"] == "SF"


def test_report_errors(tmp_path, capsys):
    assert main(["report", "--log", "missing.jsonl"]) == 1
    from gmidflow.orchestrator import RunLog

    RunLog(tmp_path / "e.jsonl")
    assert main(["report", "--log", "e.jsonl"]) == 1
    lines = (tmp_path / "e.jsonl").read_text() + '{oops\n{"type": "outcome"}\n'
    (tmp_path / "c.jsonl").write_text(lines)
    assert main(["report", "--log", "c.jsonl"]) == 1
    assert "c.jsonl:2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["optimize", "--bogus"],
        ["optimize", "--max-iters", "0"],
        ["lut-query", "--kind", "nmos", "--l", "1"],
        ["simulate", "--corner", "XX"],
        [],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 2


def test_ablate(tmp_path, capsys):
    assert main(["ablate", "--out", "abl"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:4] == ["Strategy", "Status", "Iters", "Counts"]
    rows = [json.loads(line) for line in (tmp_path / "abl" / "ablation.jsonl").read_text().splitlines()]
    by = {r["strategy"]: r for r in rows}
    assert list(by) == ["gmid", "rules", "llm", "llm_no_gmid"]
    assert by["gmid"]["converged"] and by["gmid"]["fom"] > 0
    assert by["rules"]["status"] == "stalled" and by["rules"]["evidence"].startswith(("cycle", "plateau"))
    assert by["llm"]["status"] == by["llm_no_gmid"]["status"] == "skipped"
    assert main(["ablate", "--out", "abl2", "--records"]) == 0
    again = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert again == rows
