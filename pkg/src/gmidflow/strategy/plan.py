"""Action plans and the strategist response grammar.

A reply has three headed sections followed by a fenced machine block::

    Observation:
    ...
    Thinking Process:
    ...
    Action:
    ```
    ACTIONS
    M1.W = 3u
    C1 = 1.2p
    ```

Block lines are ``<device>.<W|L|m> = <value>``, ``<capacitor> = <value>`` or
the single token ``DONE``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..netlist import (
    ROLES,
    EngNumber,
    Field,
    MalformedNumberError,
    ParamPatch,
    eng_decimal,
)

RESPONSE_FORMAT = """\
Reply with exactly three headed sections, then the machine block:

Observation:
<what the latest results show>

Thinking Process:
<trade-offs considered and the chosen strategy>

Action:
<short prose summary of the edits>
```
ACTIONS
<device>.<W|L|m> = <value>
<capacitor> = <value>
```

Use SPICE suffixes for values (W and L in microns with a 'u' suffix, e.g. 3u
or 0.5u; capacitors with 'p', e.g. 0.9p); m is a positive integer. List one
assignment per line. When every specification is met, the block contains
only the line DONE.
"""


class PlanError(ValueError):
    pass


class MissingActionBlockError(PlanError):
    pass


class UnparseableAssignmentError(PlanError):
    def __init__(self, lineno: int, line: str, reason: str = ""):
        self.lineno = lineno
        msg = f"line {lineno}: cannot parse assignment {line.strip()!r}"
        super().__init__(f"{msg} ({reason})" if reason else msg)


class BoundsViolationError(PlanError):
    pass


@dataclass(frozen=True)
class Bounds:
    w_um: tuple[float, float] = (0.3, 500.0)
    l_um: tuple[float, float] = (0.15, 5.0)
    m: tuple[int, int] = (1, 64)
    c_pf: tuple[float, float] = (0.1, 20.0)
    devices: tuple[str, ...] = ROLES
    capacitors: tuple[str, ...] = ("C1",)

    def check(self, patch: ParamPatch) -> None:
        if patch.field is Field.VALUE:
            if patch.target not in self.capacitors:
                raise BoundsViolationError(f"{patch.target} is not an adjustable capacitor ({', '.join(self.capacitors)})")
            x, (lo, hi), unit = _scaled(patch.new_value, 12), self.c_pf, "pF"
        else:
            if patch.target not in self.devices:
                raise BoundsViolationError(f"{patch.target} is not an adjustable device ({', '.join(self.devices)})")
            if patch.field is Field.M:
                x, (lo, hi), unit = patch.new_value, self.m, ""
            elif patch.field is Field.W:
                x, (lo, hi), unit = _scaled(patch.new_value, 6), self.w_um, "um"
            else:
                x, (lo, hi), unit = _scaled(patch.new_value, 6), self.l_um, "um"
        if not lo <= x <= hi:
            name = patch.target if patch.field is Field.VALUE else f"{patch.target}.{patch.field.value}"
            raise BoundsViolationError(f"{name} = {x:g}{unit} outside limit [{lo:g}, {hi:g}]{unit}")


DEFAULT_BOUNDS = Bounds()


def _scaled(value: EngNumber, exp: int) -> float:
    return float(eng_decimal(value.rendered).scaleb(exp))


@dataclass(frozen=True)
class ActionPlan:
    observation: str
    thinking: str
    patches: tuple[ParamPatch, ...] = ()
    declared_done: bool = False

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        if not self.patches and not self.declared_done:
            raise PlanError("a plan needs at least one patch unless it declares DONE")

    def action_lines(self) -> list[str]:
        return ["DONE"] if self.declared_done else [p.render() for p in self.patches]

    def to_dict(self) -> dict:
        return {"observation": self.observation, "thinking": self.thinking, "actions": self.action_lines()}

    @classmethod
    def from_dict(cls, d, bounds: Bounds = DEFAULT_BOUNDS) -> "ActionPlan":
        patches, done = parse_action_lines(d["actions"], bounds)
        return cls(d["observation"], d["thinking"], patches, done)


def render_plan(plan: ActionPlan, action_text: str = "") -> str:
    lines = [
        "Observation:",
        plan.observation,
        "",
        "Thinking Process:",
        plan.thinking,
        "",
        "Action:",
    ]
    if action_text:
        lines.append(action_text)
    lines += ["```", "ACTIONS", *plan.action_lines(), "```", ""]
    return "\n".join(lines)


_HEADING_RE = re.compile(
    r"^[\s#>*_\-]*(?:(?:step\s*)?\d+[.):]?\s*)?[*_]*\s*"
    r"(observation|thinking process|thinking|action)\s*[*_]*\s*(?::[*_]*\s*(.*)|$)",
    re.IGNORECASE,
)
_FENCE_RE = re.compile(r"^\s*(`{3,}|~{3,})\s*(\S*)\s*$")
_ASSIGN_RE = re.compile(r"^([A-Za-z][\w]*)(?:\.(W|L|m|M|w|l))?\s*=\s*(\S+)$")


def parse_action_lines(lines: Iterable[str], bounds: Bounds = DEFAULT_BOUNDS, first_lineno: int = 1):
    patches: list[ParamPatch] = []
    tokens = []
    for offset, raw in enumerate(lines):
        lineno = first_lineno + offset
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens.append(line)
        if line.upper() == "DONE":
            continue
        m = _ASSIGN_RE.match(line)
        if not m:
            raise UnparseableAssignmentError(lineno, raw)
        name, field, value = m.group(1).upper(), m.group(2), m.group(3)
        if field is None:
            if name in bounds.devices:
                raise UnparseableAssignmentError(lineno, raw, f"{name} needs a .W, .L or .m field")
            fld = Field.VALUE
        else:
            fld = Field(field)
        try:
            if fld is Field.M:
                if not re.fullmatch(r"[+-]?\d+", value):
                    raise UnparseableAssignmentError(lineno, raw, "m must be an integer")
                new_value: EngNumber | int = int(value)
                lo, hi = bounds.m
                if not lo <= new_value <= hi:
                    raise BoundsViolationError(f"line {lineno}: {name}.m = {new_value} outside limit [{lo}, {hi}]")
            else:
                new_value = EngNumber.parse(value)
        except MalformedNumberError as exc:
            raise UnparseableAssignmentError(lineno, raw, str(exc)) from None
        patch = ParamPatch(name, fld, new_value)
        try:
            bounds.check(patch)
        except BoundsViolationError as exc:
            raise BoundsViolationError(f"line {lineno}: {exc}") from None
        patches.append(patch)
    done = tokens == ["DONE"]
    if "DONE" in (t.upper() for t in tokens) and not done:
        raise PlanError("DONE must be the only line of the ACTIONS block")
    return tuple(patches), done


def _find_action_block(lines: Sequence[str]) -> tuple[int, int]:
    """(first, end) line indices of the ACTIONS block body."""
    i = 0
    while i < len(lines):
        m = _FENCE_RE.match(lines[i])
        if m:
            fence, info = m.groups()
            j = i + 1
            while j < len(lines) and not lines[j].strip().startswith(fence[0] * 3):
                j += 1
            if info.upper() == "ACTIONS":
                return i + 1, j
            body = [k for k in range(i + 1, j) if lines[k].strip()]
            if body and lines[body[0]].strip().upper() == "ACTIONS":
                return body[0] + 1, j
            i = j + 1
        else:
            i += 1
    raise MissingActionBlockError("reply has no fenced ACTIONS block")


def parse_response(text: str, bounds: Bounds = DEFAULT_BOUNDS) -> ActionPlan:
    lines = text.splitlines()
    start, end = _find_action_block(lines)
    sections: dict[str, list[str]] = {}
    current = None
    in_fence = False
    for k, line in enumerate(lines):
        if _FENCE_RE.match(line):
            in_fence = not in_fence
            continue
        if in_fence:
            continue
        m = _HEADING_RE.match(line)
        if m:
            key = m.group(1).lower()
            current = "thinking" if key.startswith("thinking") else key
            sections.setdefault(current, [])
            if m.group(2):
                sections[current].append(m.group(2))
            continue
        if current is not None:
            sections[current].append(line)
    patches, done = parse_action_lines(lines[start:end], bounds, first_lineno=start + 1)
    if not patches and not done:
        raise MissingActionBlockError("ACTIONS block is empty")
    return ActionPlan(
        observation="\n".join(sections.get("observation", [])).strip(),
        thinking="\n".join(sections.get("thinking", [])).strip(),
        patches=patches,
        declared_done=done,
    )


def micro_value(value: EngNumber) -> float:
    return float(eng_decimal(value.rendered).scaleb(6))


def pico_value(value: EngNumber) -> float:
    return float(eng_decimal(value.rendered).scaleb(12))
