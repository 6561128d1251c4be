from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmidflow import assets
from gmidflow.netlist import (
    CircuitParams,
    DeviceGeom,
    DuplicateNameError,
    EngNumber,
    Field,
    IllegalFieldError,
    MalformedNumberError,
    MissingDeviceError,
    NetlistError,
    ParamPatch,
    UnknownTargetError,
    apply_patches,
    eng_decimal,
    extract_params,
    format_eng,
    micro,
    parse_eng,
    parse_netlist,
    pico,
    render_netlist,
    to_micro,
)


@pytest.mark.parametrize(
    "token, value",
    [("0.9p", 9.0e-13), ("10MEG", 1.0e7), ("4u", 4.0e-6), ("1m", 1e-3), ("2k", 2e3), ("3.3", 3.3), ("1.5e-3", 1.5e-3),
     ("1pF", 1e-12), ("100nH", 1e-7), ("2.2Meg", 2.2e6), (".5f", 5e-16), ("1T", 1e12), ("3G", 3e9)],
)
def test_parse_eng(token, value):
    assert parse_eng(token) == value


@pytest.mark.parametrize("token", ["", "u", "1..2", "abc", "--1", "1u2"])
def test_parse_eng_malformed(token):
    with pytest.raises(MalformedNumberError):
        parse_eng(token)


def test_meg_not_milli():
    assert parse_eng("1meg") == 1e6 and parse_eng("1m") == 1e-3 and parse_eng("1mil") == 1e-3


def test_unit_letters_ignored():
    # unknown trailing letters are units, as in SPICE
    assert parse_eng("1x") == 1.0 and parse_eng("2V") == 2.0


def test_format_eng_examples():
    assert format_eng(9e-13).rendered == "900f"
    assert format_eng(1e-12).rendered == "1p"
    assert format_eng(2.5e6).rendered == "2.5meg"
    assert format_eng(0).rendered == "0"
    assert format_eng(-4.7e-6).rendered == "-4.7u"


def test_micro_and_pico():
    assert micro(3.0) == EngNumber(3e-6, "3.0u")
    assert pico(0.9).rendered == "0.9p" and pico(0.9).value == 9e-13
    assert to_micro("180n") == 0.18


@settings(max_examples=300)
@given(st.floats(min_value=1e-16, max_value=1e13, allow_nan=False))
def test_format_parse_round_trip(x):
    assert parse_eng(format_eng(x).rendered) == x


@settings(max_examples=300)
@given(
    st.integers(min_value=1, max_value=10**6),
    st.integers(min_value=0, max_value=4),
    st.sampled_from(["t", "g", "meg", "k", "", "m", "u", "n", "p", "f"]),
)
def test_decimal_exactness(digits, places, suffix):
    mant = Decimal(digits).scaleb(-places)
    exp = {"t": 12, "g": 9, "meg": 6, "k": 3, "": 0, "m": -3, "u": -6, "n": -9, "p": -12, "f": -15}[suffix]
    assert eng_decimal(f"{mant}{suffix}") == mant.scaleb(exp)


def test_parse_fixture(seed_doc):
    assert sorted(seed_doc.devices) == ["M1", "M2", "M3", "M4", "M5", "M6", "M7"]
    assert sorted(seed_doc.capacitors) == ["C1", "CL"]
    assert seed_doc.devices["M7"].m == 4
    assert seed_doc.devices["M1"].model == "nch"


def test_duplicate_name():
    with pytest.raises(DuplicateNameError):
        parse_netlist("M1 a b c d n W=1u L=1u\nm1 a b c d n W=1u L=1u\n")


def test_comments_only():
    text = "* one\n* two\n.end\n"
    doc = parse_netlist(text)
    assert not doc.devices and not doc.capacitors and doc.text == text


@pytest.mark.parametrize(
    "text, match",
    [
        ("M1 a b c d\n", "needs d g s b model"),
        ("M1 a b c d n L=1u\n", "missing W"),
        ("M1 a b c d n W=1u L=1u m=2.5\n", "integer"),
        ("M1 a b c d n W=x1 L=1u\n", "malformed"),
        ("C1 a b\n", "capacitor card"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(NetlistError, match=match):
        parse_netlist(text)


def test_c1_patch_on_iteration_five(seed_doc):
    from gmidflow.strategy import load_script

    doc = seed_doc
    for patches in load_script(assets.data_path(assets.TABLE3_SCRIPT))[:5]:
        doc = apply_patches(doc, patches)
    assert doc.capacitors["C1"].value.value == 1e-12
    new = apply_patches(doc, [ParamPatch("C1", Field.VALUE, EngNumber.parse("0.9p"))])
    idx = doc.capacitors["C1"].line_index
    assert new.lines[idx] == "C1 out1 out 0.9p\n"
    assert all(a == b for k, (a, b) in enumerate(zip(doc.lines, new.lines)) if k != idx)


def test_empty_patch_list(seed_doc):
    assert apply_patches(seed_doc, []).text == seed_doc.text


def test_iteration_four_column(seed_doc):
    doc = apply_patches(seed_doc, [ParamPatch("M7", "m", 6)])
    doc = apply_patches(
        doc,
        [ParamPatch("M7", "m", 8)] + [ParamPatch(r, "L", EngNumber.parse("0.5u")) for r in ("M1", "M2")],
    )
    p = extract_params(doc)
    assert p["M7"].m == 8 and p["M1"].l == 0.5 and p["M2"].l == 0.5


def test_patch_inserts_missing_multiplier():
    doc = parse_netlist("M1 a b c d n W=1u L=1u ; tail\n")
    new = apply_patches(doc, [ParamPatch("M1", "m", 3)])
    assert new.lines[0] == "M1 a b c d n W=1u L=1u m=3 ; tail\n"
    assert new.devices["M1"].m == 3


def test_patch_errors(seed_doc):
    with pytest.raises(UnknownTargetError, match="known: C1, CL, M1"):
        apply_patches(seed_doc, [ParamPatch("M9", "W", EngNumber.parse("1u"))])
    with pytest.raises(IllegalFieldError):
        apply_patches(seed_doc, [ParamPatch("M1", "VALUE", EngNumber.parse("1p"))])
    with pytest.raises(IllegalFieldError):
        apply_patches(seed_doc, [ParamPatch("C1", "W", EngNumber.parse("1u"))])
    with pytest.raises(IllegalFieldError):
        ParamPatch("M1", "m", 0)
    with pytest.raises(IllegalFieldError):
        ParamPatch("M1", "W", EngNumber.parse("-1u"))
    with pytest.raises(IllegalFieldError):
        ParamPatch("M1", "m", True)


def test_patch_render():
    assert ParamPatch("m1", "w", EngNumber.parse("3u")).render() == "M1.W = 3u"
    assert ParamPatch("C1", "value", EngNumber.parse("0.9p")).render() == "C1 = 0.9p"
    assert ParamPatch("M5", "M", 3).render() == "M5.m = 3"


def test_extract_fixture(seed_doc):
    p = extract_params(seed_doc)
    assert p["M1"] == DeviceGeom(1.0, 0.18, 1)
    assert p.c1 == 1.0e-12 and p.cl == 2e-12


def test_extract_missing_device(seed_text):
    text = "".join(line for line in seed_text.splitlines(keepends=True) if not line.startswith("M5"))
    with pytest.raises(MissingDeviceError, match="M5"):
        extract_params(parse_netlist(text))


def test_name_map():
    text = "MIN1 a b c d n W=1u L=1u\n" + "".join(f"M{k} a b c d n W=1u L=1u\n" for k in range(2, 8)) + "CC a b 1p\n"
    name_map = {"M1": "MIN1", "C1": "CC"}
    p = extract_params(parse_netlist(text), name_map)
    assert p["M1"].w == 1.0 and p.c1 == 1e-12 and p.cl == 2e-12


geoms = st.builds(
    DeviceGeom,
    st.integers(min_value=30, max_value=5000).map(lambda k: k / 100),
    st.integers(min_value=15, max_value=500).map(lambda k: k / 100),
    st.integers(min_value=1, max_value=64),
)


@settings(max_examples=100)
@given(
    st.fixed_dictionaries({r: geoms for r in ("M1", "M2", "M3", "M4", "M5", "M6", "M7")}),
    st.integers(min_value=1, max_value=2000).map(lambda k: float(Decimal(k).scaleb(-14))),
)
def test_render_extract_round_trip(devices, c1):
    params = CircuitParams(devices, c1)
    assert extract_params(parse_netlist(render_netlist(params))) == params


def test_params_serialization(seed_doc):
    p = extract_params(seed_doc)
    assert CircuitParams.from_dict(p.to_dict()) == p
    assert hash(p) == hash(CircuitParams.from_dict(p.to_dict()))
    assert p.area_um2() == pytest.approx(sum(g.w * g.l * g.m for g in p.devices.values()))
    with pytest.raises(NetlistError):
        CircuitParams({"M1": DeviceGeom(1.0, 0.18, 0)}, 1e-12)
