"""Scripted patch sequences.

Script file layout, one block per iteration::

    [1]
    C1 = 1.0p
    M1.W = 1u
    [2]
    C1 = 0.7p
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Sequence

from ..netlist import ParamPatch
from .plan import DEFAULT_BOUNDS, ActionPlan, Bounds, PlanError, parse_action_lines

Script = Sequence[tuple[ParamPatch, ...]]

_HEADER_RE = re.compile(r"^\s*\[(\d+)\]\s*$")


def parse_script(text: str, bounds: Bounds = DEFAULT_BOUNDS) -> list[tuple[ParamPatch, ...]]:
    blocks: list[tuple[int, int, list[str]]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        m = _HEADER_RE.match(line)
        if m:
            blocks.append((int(m.group(1)), lineno + 1, []))
        elif line.strip() and not line.lstrip().startswith("#"):
            if not blocks:
                raise PlanError(f"line {lineno}: assignment before the first [N] header")
            blocks[-1][2].append(line)
        elif blocks:
            blocks[-1][2].append(line)
    out = []
    for expect, (n, first, lines) in enumerate(blocks, 1):
        if n != expect:
            raise PlanError(f"script block [{n}] out of order; expected [{expect}]")
        patches, done = parse_action_lines(lines, bounds, first_lineno=first)
        if done or not patches:
            raise PlanError(f"script block [{n}] has no assignments")
        out.append(patches)
    return out


def load_script(path: str | Path, bounds: Bounds = DEFAULT_BOUNDS) -> list[tuple[ParamPatch, ...]]:
    return parse_script(Path(path).read_text(), bounds)


def render_script(script: Script) -> str:
    out = []
    for n, patches in enumerate(script, 1):
        out.append(f"[{n}]")
        out += [p.render() for p in patches]
    return "\n".join(out) + "\n"


def replay_step(script: Script, iteration: int) -> ActionPlan:
    if iteration < 1:
        raise PlanError(f"iteration numbers start at 1, got {iteration}")
    if iteration > len(script):
        return ActionPlan(f"Script exhausted after {len(script)} steps.", "Nothing left to apply.", declared_done=True)
    patches = tuple(script[iteration - 1])
    return ActionPlan(
        f"Scripted step {iteration} of {len(script)}.",
        "Applying the recorded parameter changes verbatim.",
        patches,
    )
