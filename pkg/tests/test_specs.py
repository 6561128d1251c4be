import itertools
import json
import random

import pytest

from gmidflow import assets
from gmidflow.device import CORNERS, ProcessCorner
from gmidflow.metrics import Metric, PerfMetrics
from gmidflow.netlist import CircuitParams, DeviceGeom
from gmidflow.specs import (
    DEFAULT_SPECS,
    Direction,
    FomReport,
    Mode,
    SpecError,
    SpecItem,
    SpecSet,
    compute_fom,
    derated_targets,
    evaluate_specs,
    format_report,
    format_worst_case,
    load_specs,
    parse_specs,
    render_specs,
    report_records,
    worst_case,
)

TABLE2 = PerfMetrics(62.40, 25.30e6, 65.80, 28.18, 116.4e-6)


def _table4_corners():
    data = json.loads(assets.data_path(assets.TABLE3_RECORDED).read_text())
    final = data["entries"][-1]["metrics"]
    return {ProcessCorner(c): PerfMetrics.from_dict(m) for c, m in final.items()}


def test_table2_passes():
    assert evaluate_specs(TABLE2, DEFAULT_SPECS).all_pass


def test_iteration_one_failures():
    m = PerfMetrics(52.19, 17.58e6, 58.49, 25.0, 110e-6)
    assert evaluate_specs(m, DEFAULT_SPECS).failing() == [Metric.GAIN, Metric.GBW, Metric.PM]


def test_threshold_is_inclusive():
    m = PerfMetrics(60.0, 20e6, 60.0, 20.0, 200e-6)
    rep = evaluate_specs(m, DEFAULT_SPECS)
    assert rep.all_pass
    assert all(c.margin_frac == 0.0 for c in rep.checks.values())


def test_corner_mode_uses_derated_targets():
    m = PerfMetrics(55.0, 19.5e6, 55.0, 18.5, 230e-6)
    assert not evaluate_specs(m, DEFAULT_SPECS, Mode.TT).all_pass
    assert evaluate_specs(m, DEFAULT_SPECS, Mode.CORNER).all_pass


def test_margin_sign():
    item = SpecItem(Metric.IDC, Direction.AT_MOST, 200e-6, 1.2)
    assert item.margin(100e-6, 200e-6) == pytest.approx(0.5)
    assert item.margin(300e-6, 200e-6) == pytest.approx(-0.5)


def test_derated_targets_exact():
    t = derated_targets(DEFAULT_SPECS)
    assert t == {Metric.GAIN: 54.0, Metric.GBW: 19.0e6, Metric.PM: 54.0, Metric.SR: 18.0, Metric.IDC: 240e-6}


def test_spec_file_matches_defaults():
    assert load_specs(assets.data_path(assets.DEFAULT_SPEC)) == DEFAULT_SPECS
    assert parse_specs(render_specs(DEFAULT_SPECS)) == DEFAULT_SPECS


@pytest.mark.parametrize(
    "text, match",
    [
        ("metric=GAIN direction=at_least\n", "missing tt_target"),
        ("metric=GAIN colour=red\n", "bad field"),
        ("metric=FOO direction=at_least tt_target=1\n", "FOO"),
        ("metric=GAIN direction=at_least tt_target=60\n", "must define all"),
        ("metric=GAIN direction=sideways tt_target=60\n", "sideways"),
        ("metric=GAIN direction=at_least tt_target=-1\n", "positive"),
    ],
)
def test_spec_parse_errors(text, match):
    with pytest.raises(SpecError, match=match):
        parse_specs(text)


def test_duplicate_metric():
    item = SpecItem(Metric.GAIN, Direction.AT_LEAST, 60.0)
    with pytest.raises(SpecError, match="duplicate"):
        SpecSet((item, item))


def test_worst_case_table4():
    worst = worst_case(_table4_corners())
    assert (worst[Metric.GBW].value, worst[Metric.GBW].corner) == (19.79e6, ProcessCorner.SF)
    non_tt = {c: m for c, m in _table4_corners().items() if c is not ProcessCorner.TT}
    w = worst_case(non_tt)
    assert [(w[m].value, w[m].corner.value) for m in Metric] == [
        (59.90, "FS"), (19.79e6, "SF"), (63.00, "FF"), (30.59, "FS"), (118.3e-6, "SF")
    ]


def test_worst_case_single_corner():
    w = worst_case({ProcessCorner.SS: TABLE2})
    assert all(v.corner is ProcessCorner.SS for v in w.values())


def test_worst_case_brute_force():
    rng = random.Random(3)
    for _ in range(50):
        per = {c: PerfMetrics(rng.uniform(40, 80), rng.uniform(1e6, 5e7), rng.uniform(30, 90), rng.uniform(5, 50),
                              rng.uniform(5e-5, 3e-4)) for c in CORNERS}
        w = worst_case(per)
        for item in DEFAULT_SPECS:
            values = [(per[c].value(item.metric), c) for c in CORNERS]
            pick = min(values, key=lambda v: v[0]) if item.direction is Direction.AT_LEAST else max(values, key=lambda v: v[0])
            assert (w[item.metric].value, w[item.metric].corner) == pick


def test_worst_case_ties_follow_corner_order():
    w = worst_case({ProcessCorner.SF: TABLE2, ProcessCorner.FF: TABLE2})
    assert w[Metric.GAIN].corner is ProcessCorner.FF


def test_worst_case_empty():
    with pytest.raises(SpecError):
        worst_case({})


def test_fom():
    devs = {r: DeviceGeom(2.0, 0.5, 2) for r in ("M1", "M2", "M3", "M4", "M5", "M6", "M7")}
    p = CircuitParams(devs, 1e-12, 2e-12)
    rep = compute_fom(PerfMetrics(60, 20e6, 60, 20, 100e-6), p)
    assert rep.formula == "gbw_cl_over_idc"
    assert rep.fom == pytest.approx(20 * 2 / 0.1)
    assert rep.area_um2 == pytest.approx(14.0)
    assert rep.foma == pytest.approx(rep.fom / 14.0)
    assert compute_fom(PerfMetrics(60, 20e6, 60, 20, 100e-6), p, "sr_cl_over_idc").fom == pytest.approx(400.0)
    with pytest.raises(SpecError, match="unknown FOM"):
        compute_fom(TABLE2, p, "nope")


@pytest.mark.parametrize("fom, area, foma", [(265.7, 31.4, 8.462), (226.7, 42.8, 5.296)])
def test_foma_published(fom, area, foma):
    assert FomReport("x", fom, area).foma == pytest.approx(foma, abs=1e-3)


def test_text_tables():
    rep = evaluate_specs(TABLE2, DEFAULT_SPECS)
    text = format_report(rep, DEFAULT_SPECS, "Final at TT")
    assert "62.40 dB" in text and "25.30 MHz" in text and "116.40 uA" in text
    wc = format_worst_case(worst_case(_table4_corners()), DEFAULT_SPECS)
    assert "19.79 MHz" in wc and "SF" in wc and "54.00 dB" in wc


def test_report_records_units():
    rec = [json.loads(line) for line in report_records(evaluate_specs(TABLE2, DEFAULT_SPECS), ProcessCorner.TT)]
    units = {r["metric"]: r["unit"] for r in rec}
    assert units == {"GAIN": "dB", "GBW": "Hz", "PM": "deg", "SR": "V/us", "IDC": "A"}
    assert {r["metric"]: r["value"] for r in rec}["GBW"] == 25.30e6


def test_metrics_dict_round_trip():
    for a, b in itertools.combinations(_table4_corners().values(), 2):
        assert PerfMetrics.from_dict(a.to_dict()) == a
