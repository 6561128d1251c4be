"""SPICE-subset netlist handling for the fixed two-stage op-amp.

Only MOSFET cards (``M<name> d g s b <model> W=.. L=.. [m=..]``) and two-terminal
capacitor cards are indexed. Everything else, comments and dot directives
included, passes through byte for byte. Edits are made on the value tokens
in place so an edited document differs from its source only where a value
changed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping

from .device import DeviceKind

ROLES = ("M1", "M2", "M3", "M4", "M5", "M6", "M7")
ROLE_KIND = {
    "M1": DeviceKind.NMOS,
    "M2": DeviceKind.NMOS,
    "M3": DeviceKind.PMOS,
    "M4": DeviceKind.PMOS,
    "M5": DeviceKind.NMOS,
    "M6": DeviceKind.NMOS,
    "M7": DeviceKind.PMOS,
}
DEFAULT_NAME_MAP = {**{r: r for r in ROLES}, "C1": "C1", "CL": "CL"}
DEFAULT_CL = 2e-12


class NetlistError(ValueError):
    pass


class MalformedNumberError(NetlistError):
    pass


class DuplicateNameError(NetlistError):
    pass


class UnknownTargetError(NetlistError):
    pass


class IllegalFieldError(NetlistError):
    pass


class MissingDeviceError(NetlistError):
    pass


# --- engineering notation -------------------------------------------------

_SUFFIX_EXP = {"t": 12, "g": 9, "meg": 6, "k": 3, "m": -3, "u": -6, "n": -9, "p": -12, "f": -15}
_EXP_SUFFIX = {12: "t", 9: "g", 6: "meg", 3: "k", 0: "", -3: "m", -6: "u", -9: "n", -12: "p", -15: "f"}
_ENG_RE = re.compile(
    r"([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[tgkmunpf])?([a-z]*)",
    re.IGNORECASE,
)


def eng_decimal(token: str) -> Decimal:
    """Exact decimal value of a SPICE number such as ``0.9p`` or ``10MEG``."""
    m = _ENG_RE.fullmatch(token.strip())
    if not m:
        raise MalformedNumberError(f"malformed number {token!r}")
    mant, suffix, _unit = m.groups()
    exp = _SUFFIX_EXP[suffix.lower()] if suffix else 0
    return Decimal(mant).scaleb(exp)


def parse_eng(token: str) -> float:
    return float(eng_decimal(token))


def to_micro(token: str) -> float:
    """Value of ``token`` expressed in microns (or microunits), rounded once."""
    return float(eng_decimal(token).scaleb(6))


@dataclass(frozen=True)
class EngNumber:
    value: float
    rendered: str

    @classmethod
    def parse(cls, token: str) -> "EngNumber":
        return cls(parse_eng(token), token)

    def __str__(self):
        return self.rendered


def format_eng(x: float) -> EngNumber:
    """Render ``x`` with the largest SPICE suffix that keeps the mantissa >= 1."""
    if x == 0:
        return EngNumber(0.0, "0")
    mag = abs(x)
    exp = 0
    for e in sorted(_EXP_SUFFIX, reverse=True):
        if mag >= 10.0**e or e == -15:
            exp = e
            break
    mant = Decimal(repr(float(x))).scaleb(-exp).normalize()
    return EngNumber(float(x), f"{mant:f}{_EXP_SUFFIX[exp]}")


def micro(x_um: float) -> EngNumber:
    """A length/width given in microns, rendered with the ``u`` suffix."""
    return EngNumber(float(Decimal(repr(float(x_um))).scaleb(-6)), f"{float(x_um)!r}u")


def pico(x_pf: float) -> EngNumber:
    return EngNumber(float(Decimal(repr(float(x_pf))).scaleb(-12)), f"{float(x_pf)!r}p")


# --- document model -------------------------------------------------------


@dataclass(frozen=True)
class DeviceCard:
    model: str
    w: EngNumber
    l: EngNumber
    m: int
    line_index: int
    # (start, end) character spans of the W, L and m value tokens
    spans: Mapping[str, tuple[int, int]] = field(repr=False, compare=False)


@dataclass(frozen=True)
class CapacitorCard:
    value: EngNumber
    line_index: int
    span: tuple[int, int] = field(repr=False, compare=False)


@dataclass(frozen=True)
class NetlistDoc:
    lines: tuple[str, ...]
    devices: Mapping[str, DeviceCard]
    capacitors: Mapping[str, CapacitorCard]

    @property
    def text(self) -> str:
        return "".join(self.lines)

    def known_names(self) -> list[str]:
        return sorted([*self.devices, *self.capacitors])


_TOKEN_RE = re.compile(r"\S+")
_PARAM_RE = re.compile(r"(?<!\S)([wlm])\s*=\s*(\S+)", re.IGNORECASE)


def _parse_device(line: str, lineno: int, index: int) -> tuple[str, DeviceCard]:
    tokens = line.split()
    if len(tokens) < 6:
        raise NetlistError(f"line {lineno}: device card needs d g s b model, got {line.strip()!r}")
    name, model = tokens[0].upper(), tokens[5]
    found: dict[str, tuple[str, tuple[int, int]]] = {}
    for m in _PARAM_RE.finditer(line):
        key = m.group(1).upper()
        found[key] = (m.group(2), m.span(2))
    for key in ("W", "L"):
        if key not in found:
            raise NetlistError(f"line {lineno}: device {name} is missing {key}=")
    mult = 1
    if "M" in found:
        try:
            mult = int(found["M"][0])
        except ValueError:
            raise NetlistError(f"line {lineno}: device {name} multiplier must be an integer, got {found['M'][0]!r}") from None
    try:
        w = EngNumber.parse(found["W"][0])
        l = EngNumber.parse(found["L"][0])
    except MalformedNumberError as exc:
        raise MalformedNumberError(f"line {lineno}: {exc}") from None
    spans = {k: v[1] for k, v in found.items()}
    return name, DeviceCard(model, w, l, mult, index, spans)


def _parse_capacitor(line: str, lineno: int, index: int) -> tuple[str, CapacitorCard]:
    toks = list(_TOKEN_RE.finditer(line))
    if len(toks) < 4:
        raise NetlistError(f"line {lineno}: capacitor card needs n1 n2 value, got {line.strip()!r}")
    try:
        value = EngNumber.parse(toks[3].group())
    except MalformedNumberError as exc:
        raise MalformedNumberError(f"line {lineno}: {exc}") from None
    return toks[0].group().upper(), CapacitorCard(value, index, toks[3].span())


def parse_netlist(text: str) -> NetlistDoc:
    lines = tuple(text.splitlines(keepends=True))
    devices: dict[str, DeviceCard] = {}
    caps: dict[str, CapacitorCard] = {}
    for idx, raw in enumerate(lines):
        body = raw.lstrip()
        if not body or body[0] in "*.+;":
            continue
        head = body[0].upper()
        if head == "M":
            name, card = _parse_device(raw, idx + 1, idx)
        elif head == "C":
            name, card = _parse_capacitor(raw, idx + 1, idx)
        else:
            continue
        if name in devices or name in caps:
            raise DuplicateNameError(f"line {idx + 1}: duplicate element name {name}")
        (devices if head == "M" else caps)[name] = card
    return NetlistDoc(lines, devices, caps)


# --- patches --------------------------------------------------------------


class Field(str, Enum):
    W = "W"
    L = "L"
    M = "m"
    VALUE = "VALUE"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.upper() == value.upper():
                    return member
        return None


@dataclass(frozen=True)
class ParamPatch:
    target: str
    field: Field
    new_value: EngNumber | int

    def __post_init__(self):
        object.__setattr__(self, "target", self.target.upper())
        object.__setattr__(self, "field", Field(self.field))
        if self.field is Field.M:
            if isinstance(self.new_value, bool) or not isinstance(self.new_value, int) or self.new_value < 1:
                raise IllegalFieldError(f"{self.target}.m must be an integer >= 1, got {self.new_value!r}")
        else:
            if not isinstance(self.new_value, EngNumber):
                raise IllegalFieldError(f"{self.target}.{self.field.value} needs an engineering number")
            if self.field in (Field.W, Field.L) and not self.new_value.value > 0:
                raise IllegalFieldError(f"{self.target}.{self.field.value} must be positive")

    def render(self) -> str:
        """Action-grammar form, e.g. ``M1.W = 3u`` or ``C1 = 0.9p``."""
        if self.field is Field.VALUE:
            return f"{self.target} = {self.new_value}"
        return f"{self.target}.{self.field.value} = {self.new_value}"


def _splice(line: str, span: tuple[int, int], text: str) -> str:
    return line[: span[0]] + text + line[span[1] :]


def apply_patches(doc: NetlistDoc, patches: Iterable[ParamPatch]) -> NetlistDoc:
    lines = list(doc.lines)
    current = doc
    for p in patches:
        if p.target in current.devices:
            if p.field is Field.VALUE:
                raise IllegalFieldError(f"{p.target} is a transistor; VALUE applies to capacitors only")
            card = current.devices[p.target]
            line = lines[card.line_index]
            if p.field is Field.M and "M" not in card.spans:
                l_end = card.spans["L"][1]
                line = line[:l_end] + f" m={p.new_value}" + line[l_end:]
            else:
                key = "M" if p.field is Field.M else p.field.value
                line = _splice(line, card.spans[key], str(p.new_value))
            lines[card.line_index] = line
        elif p.target in current.capacitors:
            if p.field is not Field.VALUE:
                raise IllegalFieldError(f"{p.target} is a capacitor; only its VALUE can be patched")
            card = current.capacitors[p.target]
            lines[card.line_index] = _splice(lines[card.line_index], card.span, str(p.new_value))
        else:
            raise UnknownTargetError(f"unknown element {p.target}; known: {', '.join(current.known_names())}")
        # re-index so later patches on the same line see fresh spans
        current = parse_netlist("".join(lines))
    return current


# --- circuit parameters ---------------------------------------------------


@dataclass(frozen=True)
class DeviceGeom:
    w: float  # um
    l: float  # um
    m: int


@dataclass(frozen=True)
class CircuitParams:
    devices: Mapping[str, DeviceGeom]
    c1: float  # F
    cl: float = DEFAULT_CL

    def __post_init__(self):
        for role, g in self.devices.items():
            if not (g.w > 0 and g.l > 0 and isinstance(g.m, int) and g.m >= 1):
                raise NetlistError(f"{role}: invalid geometry {g}")
        if not (self.c1 > 0 and self.cl > 0):
            raise NetlistError("capacitances must be positive")

    def __getitem__(self, role: str) -> DeviceGeom:
        return self.devices[role]

    def vector(self) -> tuple:
        return tuple((r, g.w, g.l, g.m) for r, g in sorted(self.devices.items())) + (self.c1, self.cl)

    def __hash__(self):
        return hash(self.vector())

    def area_um2(self) -> float:
        return sum(g.w * g.l * g.m for g in self.devices.values())

    def to_dict(self) -> dict:
        return {
            "devices": {r: {"w": g.w, "l": g.l, "m": g.m} for r, g in sorted(self.devices.items())},
            "c1": self.c1,
            "cl": self.cl,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CircuitParams":
        devs = {r: DeviceGeom(float(g["w"]), float(g["l"]), int(g["m"])) for r, g in d["devices"].items()}
        return cls(devs, float(d["c1"]), float(d["cl"]))


def extract_params(
    doc: NetlistDoc, name_map: Mapping[str, str] = DEFAULT_NAME_MAP, cl_default: float = DEFAULT_CL
) -> CircuitParams:
    devs = {}
    for role in ROLES:
        name = name_map.get(role, role).upper()
        if name not in doc.devices:
            raise MissingDeviceError(f"netlist has no device {name} (role {role})")
        card = doc.devices[name]
        devs[role] = DeviceGeom(to_micro(card.w.rendered), to_micro(card.l.rendered), card.m)
    c1_name = name_map.get("C1", "C1").upper()
    if c1_name not in doc.capacitors:
        raise MissingDeviceError(f"netlist has no capacitor {c1_name} (role C1)")
    cl_name = name_map.get("CL", "CL").upper()
    cl = doc.capacitors[cl_name].value.value if cl_name in doc.capacitors else cl_default
    return CircuitParams(devs, doc.capacitors[c1_name].value.value, cl)


_HEADER = """\
* two-stage Miller-compensated op-amp
* M1/M2 input pair, M3/M4 mirror load, M5 tail, M6 output sink, M7 output stage
VDD vdd 0 1.8
IREF vdd nbias 10u
XBIAS nbias vdd biasgen
"""
_NODES = {
    "M1": "n1 inn tail 0 nch",
    "M2": "out1 inp tail 0 nch",
    "M3": "n1 n1 vdd vdd pch",
    "M4": "out1 n1 vdd vdd pch",
    "M5": "tail nbias 0 0 nch",
    "M6": "out nbias 0 0 nch",
    "M7": "out out1 vdd vdd pch",
}


def render_netlist(params: CircuitParams) -> str:
    """A complete netlist for ``params`` on the standard op-amp topology."""
    lines = [_HEADER]
    for role in ROLES:
        g = params[role]
        lines.append(f"{role} {_NODES[role]} W={g.w!r}u L={g.l!r}u m={g.m}\n")
    lines.append(f"C1 out1 out {format_eng(params.c1)}\n")
    lines.append(f"CL out 0 {format_eng(params.cl)}\n")
    lines.append(".end\n")
    return "".join(lines)
