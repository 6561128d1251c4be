"""External-simulator evaluation path (ngspice batch mode by default)."""

from __future__ import annotations

import logging
import os
import re
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..device import ProcessCorner
from ..kvconfig import ConfigError, read_kv
from ..metrics import PerfMetrics
from ..netlist import NetlistDoc
from .analytic import BackendError
from .extract import AcPoint, ExtractionError, extract_ac_metrics, extract_sr

log = logging.getLogger(__name__)


class SimulatorError(BackendError):
    pass


class SimulatorSpawnError(SimulatorError):
    pass


class SimulatorExitError(SimulatorError):
    pass


class SimulatorTimeoutError(SimulatorError):
    pass


class GarbledOutputError(SimulatorError):
    pass


@dataclass(frozen=True)
class SpiceConfig:
    command: Sequence[str] = ("ngspice", "-b")
    # corner -> text placed after ".lib", e.g. "/pdk/models.lib tt"
    corner_libs: Mapping[ProcessCorner, str] = field(default_factory=dict)
    timeout_s: float = 120.0
    workdir_root: Path = Path("spice_runs")
    run_id: str = "run"
    output_node: str = "out"
    supply_source: str = "vdd"
    tran_step: str = "1n"
    tran_stop: str = "2u"


AC_FILE, TRAN_FILE, OP_FILE = "ac.out", "tran.out", "op.out"

_END_RE = re.compile(r"^\s*\.end\s*$", re.IGNORECASE)


def control_deck(netlist: NetlistDoc, corner: ProcessCorner, config: SpiceConfig) -> str:
    """Netlist text with the framework-owned analysis block appended."""
    corner = ProcessCorner(corner)
    body = [line for line in netlist.lines if not _END_RE.match(line)]
    if body and not body[-1].endswith("\n"):
        body[-1] += "\n"
    lib = config.corner_libs.get(corner)
    head = [f"* analysis deck, corner {corner.value}\n"]
    if lib:
        head.append(f".lib {lib}\n")
    node, src = config.output_node, config.supply_source
    control = f"""\
.control
set wr_singlescale
op
wrdata {OP_FILE} i({src})
ac dec 20 10 1G
let mag_db = vdb({node})
let phase_deg = cph(v({node})) * 180 / pi
wrdata {AC_FILE} mag_db phase_deg
tran {config.tran_step} {config.tran_stop}
wrdata {TRAN_FILE} v({node})
quit
.endc
.end
"""
    return "".join(head + body) + control


def _read_table(path: Path, min_cols: int) -> list[list[float]]:
    if not path.exists():
        raise GarbledOutputError(f"missing simulator output {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise GarbledOutputError(f"{path}:{lineno}: non-numeric row {line!r}") from None
        if len(vals) < min_cols:
            raise GarbledOutputError(f"{path}:{lineno}: expected {min_cols} columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise GarbledOutputError(f"{path}: no data rows")
    return rows


def parse_outputs(workdir: Path) -> PerfMetrics:
    ac = _read_table(workdir / AC_FILE, 3)
    tran = _read_table(workdir / TRAN_FILE, 2)
    op = _read_table(workdir / OP_FILE, 1)
    try:
        gain, gbw, pm = extract_ac_metrics([AcPoint(r[0], r[1], r[2]) for r in ac])
        wave = [(r[0], r[-1]) for r in tran]
        v_lo, v_hi = wave[0][1], wave[-1][1]
        sr = extract_sr(wave, v_lo, v_hi)
    except ExtractionError as exc:
        raise GarbledOutputError(f"{workdir}: {exc}") from None
    return PerfMetrics(gain, gbw, pm, sr, abs(op[0][-1]))


def spice_evaluate(
    netlist: NetlistDoc, corner: ProcessCorner, config: SpiceConfig, iteration: int = 0
) -> PerfMetrics:
    corner = ProcessCorner(corner)
    workdir = Path(config.workdir_root) / config.run_id / f"iter{iteration:03d}_{corner.value}"
    if workdir.exists():
        shutil.rmtree(workdir)
    workdir.mkdir(parents=True)
    deck = workdir / "deck.cir"
    deck.write_text(control_deck(netlist, corner, config))
    cmd = [*config.command, deck.name]
    try:
        proc = subprocess.run(cmd, cwd=workdir, capture_output=True, text=True, timeout=config.timeout_s)
    except FileNotFoundError:
        raise SimulatorSpawnError(f"cannot start simulator {config.command[0]!r}") from None
    except PermissionError as exc:
        raise SimulatorSpawnError(f"cannot start simulator {config.command[0]!r}: {exc}") from None
    except subprocess.TimeoutExpired:
        raise SimulatorTimeoutError(f"simulator exceeded {config.timeout_s:g} s; workdir kept at {workdir}") from None
    if proc.returncode != 0:
        raise SimulatorExitError(
            f"simulator exited with {proc.returncode}; workdir kept at {workdir}\n{proc.stderr.strip()}"
        )
    metrics = parse_outputs(workdir)
    shutil.rmtree(workdir)
    return metrics


class SpiceBackend:
    name = "spice"

    def __init__(self, config: SpiceConfig):
        self.config = config

    def evaluate(self, params, corner: ProcessCorner, *, doc: NetlistDoc | None = None, iteration: int = 0) -> PerfMetrics:
        if doc is None:
            raise BackendError("spice backend needs the netlist document")
        log.debug("spice run iteration %d corner %s", iteration, ProcessCorner(corner).value)
        return spice_evaluate(doc, corner, self.config, iteration)


SIMULATOR_ENV = "GMIDFLOW_SPICE"


def load_spice_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> SpiceConfig:
    """Settings from an optional key=value file; ``$GMIDFLOW_SPICE`` overrides the command.

    Keys: command, timeout, workdir, run_id, output_node, supply_source and
    ``lib.<CORNER>`` (the text after ``.lib`` for that corner).
    """
    raw = read_kv(path) if path else {}
    env = os.environ if env is None else env
    kw: dict = {}
    libs = {}
    for key, value in raw.items():
        if key.startswith("lib."):
            try:
                libs[ProcessCorner(key[4:].upper())] = value
            except ValueError:
                raise ConfigError(f"{path}: unknown corner in {key!r}") from None
        elif key == "command":
            kw["command"] = tuple(shlex.split(value))
        elif key == "timeout":
            kw["timeout_s"] = float(value)
        elif key == "workdir":
            kw["workdir_root"] = Path(value)
        elif key in ("run_id", "output_node", "supply_source", "tran_step", "tran_stop"):
            kw[key] = value
        else:
            raise ConfigError(f"{path}: unknown simulator key {key!r}")
    if env.get(SIMULATOR_ENV):
        kw["command"] = tuple(shlex.split(env[SIMULATOR_ENV]))
    return SpiceConfig(corner_libs=libs, **kw)
