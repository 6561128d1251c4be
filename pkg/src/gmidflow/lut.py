"""gm/Id lookup tables: build, persist, query and invert.

Tables are two dimensional, (L, Vgs) at a fixed Vds, one per device kind and
process corner. Cell values are held at 9 significant digits so a grid
survives a write/read cycle unchanged.

Interpolation is bilinear in (ln L, Vgs) on the logarithm of each stored
quantity. Drain current is exponential in Vgs below threshold and roughly
proportional to 1/L, so this is far more accurate than interpolating raw
values on the default axes. gm/Id is always recomputed from the
interpolated gm and Id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from . import device
from .device import DeviceKind, ModelConfig, OpPoint, ProcessCorner

DEFAULT_L_AXIS = (0.18, 0.25, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0)
DEFAULT_VGS_AXIS = tuple(round(0.2 + 0.02 * k, 2) for k in range(51))
DEFAULT_VDS = 0.9
MAX_WIDTH_UM = 500.0

FORMAT_TAG = "gmidlut v1"
_FIELDS = ("id_per_w", "gm_per_w", "gds_per_w", "cgg_per_w")


class LutError(ValueError):
    pass


class LutBuildError(LutError):
    pass


class LutFormatError(LutError):
    pass


class OutOfRangeError(LutError):
    pass


class UnreachableRatioError(LutError):
    def __init__(self, target: float, lo: float, hi: float, L: float):
        self.target, self.lo, self.hi = target, lo, hi
        super().__init__(f"gm/Id={target:g} 1/V unreachable at L={L:g} um; achievable range [{lo:.4g}, {hi:.4g}]")


class SizingError(LutError):
    pass


def _q9(x: float) -> float:
    return float(f"{x:.8e}")


@dataclass(frozen=True, eq=False)
class LutGrid:
    kind: DeviceKind
    corner: ProcessCorner
    vds: float
    vth: float
    l_axis: tuple[float, ...]
    vgs_axis: tuple[float, ...]
    # shape (len(l_axis), len(vgs_axis)) per field
    id_per_w: np.ndarray = field(repr=False)
    gm_per_w: np.ndarray = field(repr=False)
    gds_per_w: np.ndarray = field(repr=False)
    cgg_per_w: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in _FIELDS:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # bad cells become nan here and are reported by validate()
        with np.errstate(invalid="ignore", divide="ignore"):
            object.__setattr__(self, "_logs", {n: np.log(getattr(self, n)) for n in _FIELDS})
        object.__setattr__(self, "_log_l", np.log(np.asarray(self.l_axis)))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.l_axis), len(self.vgs_axis)

    def cell(self, i: int, j: int) -> OpPoint:
        ids = float(self.id_per_w[i, j])
        gm = float(self.gm_per_w[i, j])
        return OpPoint(
            id_per_w=ids,
            gm_per_w=gm,
            gds_per_w=float(self.gds_per_w[i, j]),
            cgg_per_w=float(self.cgg_per_w[i, j]),
            gm_over_id=gm / ids,
            vov=self.vgs_axis[j] - self.vth,
        )

    def __eq__(self, other):
        if not isinstance(other, LutGrid):
            return NotImplemented
        return (
            (self.kind, self.corner, self.vds, self.vth, self.l_axis, self.vgs_axis)
            == (other.kind, other.corner, other.vds, other.vth, other.l_axis, other.vgs_axis)
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in _FIELDS)
        )

    def validate(self) -> None:
        for name, axis in (("l_axis", self.l_axis), ("vgs_axis", self.vgs_axis)):
            if len(axis) < 4:
                raise LutFormatError(f"{name} needs at least 4 points, has {len(axis)}")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise LutFormatError(f"{name} is not strictly increasing")
        for name in _FIELDS:
            arr = getattr(self, name)
            if arr.shape != self.shape:
                raise LutFormatError(f"{name} has shape {arr.shape}, expected {self.shape}")
            if not np.all(np.isfinite(arr)):
                raise LutFormatError(f"{name} contains non-finite values")
            if not np.all(arr > 0):
                raise LutFormatError(f"{name} contains non-positive values")
        ratio = self.gm_per_w / self.id_per_w
        bad = np.argwhere(np.diff(ratio, axis=1) >= 0)
        if len(bad):
            i, j = bad[0]
            raise LutFormatError(f"gm/Id not strictly decreasing in Vgs at L={self.l_axis[i]}, Vgs={self.vgs_axis[j]}")


Evaluator = Callable[[DeviceKind, ProcessCorner, float, float, float], OpPoint]


def build_lut(
    evaluator: Evaluator,
    kind: DeviceKind,
    corner: ProcessCorner,
    l_axis: Iterable[float] = DEFAULT_L_AXIS,
    vgs_axis: Iterable[float] = DEFAULT_VGS_AXIS,
    vds: float = DEFAULT_VDS,
) -> LutGrid:
    kind, corner = DeviceKind(kind), ProcessCorner(corner)
    l_axis, vgs_axis = tuple(float(x) for x in l_axis), tuple(float(x) for x in vgs_axis)
    cols = {n: np.empty((len(l_axis), len(vgs_axis))) for n in _FIELDS}
    vth = None
    for i, L in enumerate(l_axis):
        for j, vgs in enumerate(vgs_axis):
            try:
                op = evaluator(kind, corner, L, vgs, vds)
            except ValueError as exc:
                raise LutBuildError(f"{kind.value}/{corner.value} at L={L}, Vgs={vgs}, Vds={vds}: {exc}") from exc
            for n in _FIELDS:
                cols[n][i, j] = _q9(getattr(op, n))
            if vth is None:
                vth = vgs - op.vov
    grid = LutGrid(kind, corner, float(vds), float(vth), l_axis, vgs_axis, **cols)
    grid.validate()
    return grid


def model_evaluator(config: ModelConfig = device.DEFAULT_CONFIG) -> Evaluator:
    def _eval(kind, corner, L, vgs, vds):
        return device.evaluate(kind, corner, L, vgs, vds, config)

    return _eval


def _locate(axis: tuple[float, ...], x: float, name: str) -> tuple[int, bool]:
    """Index of the cell holding ``x``; the flag is set when ``x`` sits on a node."""
    if not axis[0] <= x <= axis[-1]:
        raise OutOfRangeError(f"{name}={x:g} outside table hull [{axis[0]:g}, {axis[-1]:g}]")
    k = int(np.searchsorted(axis, x, side="right")) - 1
    k = min(k, len(axis) - 2)
    if x == axis[k]:
        return k, True
    if x == axis[k + 1]:
        return k + 1, True
    return k, False


def query(grid: LutGrid, L: float, vgs: float) -> OpPoint:
    i, on_l = _locate(grid.l_axis, L, "L")
    j, on_v = _locate(grid.vgs_axis, vgs, "Vgs")
    if on_l and on_v:
        return grid.cell(i, j)
    if on_l:
        tl, i1 = 0.0, i
    else:
        ll = grid._log_l
        tl, i1 = (math.log(L) - ll[i]) / (ll[i + 1] - ll[i]), i + 1
    if on_v:
        tv, j1 = 0.0, j
    else:
        va = grid.vgs_axis
        tv, j1 = (vgs - va[j]) / (va[j + 1] - va[j]), j + 1
    w00, w10, w01, w11 = (1 - tl) * (1 - tv), tl * (1 - tv), (1 - tl) * tv, tl * tv
    vals = {}
    for n in _FIELDS:
        a = grid._logs[n]
        vals[n] = math.exp(w00 * a[i, j] + w10 * a[i1, j] + w01 * a[i, j1] + w11 * a[i1, j1])
    return OpPoint(
        id_per_w=vals["id_per_w"],
        gm_per_w=vals["gm_per_w"],
        gds_per_w=vals["gds_per_w"],
        cgg_per_w=vals["cgg_per_w"],
        gm_over_id=vals["gm_per_w"] / vals["id_per_w"],
        vov=vgs - grid.vth,
    )


def ratio_range(grid: LutGrid, L: float) -> tuple[float, float]:
    lo = query(grid, L, grid.vgs_axis[-1]).gm_over_id
    hi = query(grid, L, grid.vgs_axis[0]).gm_over_id
    return lo, hi


def _bisect(f: Callable[[float], float], lo: float, hi: float, done: Callable[[float], bool], max_iter: int = 200) -> float:
    """Root of an increasing function ``f`` on [lo, hi]."""
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if done(val):
            return mid
        if val < 0:
            lo = mid
        else:
            hi = mid
    return mid


def invert_gm_over_id(grid: LutGrid, L: float, target_ratio: float) -> float:
    """Vgs at which the interpolated gm/Id equals ``target_ratio``."""
    lo, hi = ratio_range(grid, L)
    if not lo <= target_ratio <= hi:
        raise UnreachableRatioError(target_ratio, lo, hi, L)
    tol = 1e-4 * target_ratio
    # ratio falls with Vgs, so bisect on target - ratio
    return _bisect(
        lambda v: target_ratio - query(grid, L, v).gm_over_id,
        grid.vgs_axis[0],
        grid.vgs_axis[-1],
        lambda err: abs(err) < tol,
    )


def invert_current_density(grid: LutGrid, L: float, id_per_w: float, rel_tol: float = 1e-6) -> float:
    """Vgs at which the interpolated Id per um equals ``id_per_w``."""
    lo = query(grid, L, grid.vgs_axis[0]).id_per_w
    hi = query(grid, L, grid.vgs_axis[-1]).id_per_w
    if not lo <= id_per_w <= hi:
        raise OutOfRangeError(
            f"current density {id_per_w:.4g} A/um outside table range [{lo:.4g}, {hi:.4g}] at L={L:g} um"
        )
    return _bisect(
        lambda v: query(grid, L, v).id_per_w / id_per_w - 1.0,
        grid.vgs_axis[0],
        grid.vgs_axis[-1],
        lambda err: abs(err) < rel_tol,
    )


@dataclass(frozen=True)
class SizingResult:
    w: float
    vgs: float
    vov: float
    achieved_gm: float
    achieved_id: float


def size_for_gm(
    grid: LutGrid, L: float, target_gm: float, id_budget: float, max_w: float = MAX_WIDTH_UM
) -> SizingResult:
    """Width (um) and bias that deliver ``target_gm`` from ``id_budget`` at length ``L``."""
    if not (target_gm > 0 and id_budget > 0):
        raise SizingError(f"target_gm and id_budget must be positive, got {target_gm}, {id_budget}")
    vgs = invert_gm_over_id(grid, L, target_gm / id_budget)
    op = query(grid, L, vgs)
    w = id_budget / op.id_per_w
    if w > max_w:
        raise SizingError(f"required W={w:.4g} um exceeds limit {max_w:g} um")
    return SizingResult(w=w, vgs=vgs, vov=op.vov, achieved_gm=op.gm_per_w * w, achieved_id=op.id_per_w * w)


def _fmt_axis(axis) -> str:
    return ",".join(repr(float(x)) for x in axis)


def serialize(grid: LutGrid) -> str:
    lines = [
        FORMAT_TAG,
        f"kind={grid.kind.value}",
        f"corner={grid.corner.value}",
        f"vds={grid.vds!r}",
        f"vth={grid.vth!r}",
        f"l_axis={_fmt_axis(grid.l_axis)}",
        f"vgs_axis={_fmt_axis(grid.vgs_axis)}",
    ]
    for i in range(len(grid.l_axis)):
        for j in range(len(grid.vgs_axis)):
            lines.append(" ".join(f"{float(getattr(grid, n)[i, j]):.8e}" for n in _FIELDS))
    return "\n".join(lines) + "\n"


_HEADER_KEYS = ("kind", "corner", "vds", "vth", "l_axis", "vgs_axis")


def _finite(text: str, what: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise LutFormatError(f"{what}: not a number: {text!r}") from None
    if not math.isfinite(x):
        raise LutFormatError(f"{what}: non-finite value {text!r}")
    return x


def deserialize(text: str) -> LutGrid:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != FORMAT_TAG:
        raise LutFormatError(f"bad header: expected {FORMAT_TAG!r}, got {lines[0] if lines else ''!r}")
    if len(lines) < 1 + len(_HEADER_KEYS):
        raise LutFormatError("truncated header")
    header = {}
    for key, line in zip(_HEADER_KEYS, lines[1 : 1 + len(_HEADER_KEYS)]):
        name, sep, value = line.partition("=")
        if name != key or not sep:
            raise LutFormatError(f"expected header key {key!r}, got {line!r}")
        header[key] = value
    try:
        kind, corner = DeviceKind(header["kind"]), ProcessCorner(header["corner"])
    except ValueError as exc:
        raise LutFormatError(str(exc)) from None
    l_axis = tuple(_finite(x, "l_axis") for x in header["l_axis"].split(","))
    vgs_axis = tuple(_finite(x, "vgs_axis") for x in header["vgs_axis"].split(","))
    body = lines[1 + len(_HEADER_KEYS) :]
    n_l, n_v = len(l_axis), len(vgs_axis)
    if len(body) != n_l * n_v:
        raise LutFormatError(f"shape mismatch: axes imply {n_l}x{n_v}={n_l * n_v} cells, file has {len(body)}")
    data = np.empty((len(body), len(_FIELDS)))
    for k, line in enumerate(body):
        parts = line.split(" ")
        if len(parts) != len(_FIELDS):
            raise LutFormatError(f"cell line {k}: expected {len(_FIELDS)} values, got {line!r}")
        data[k] = [_finite(p, f"cell line {k}") for p in parts]
    cols = {n: data[:, c].reshape(n_l, n_v) for c, n in enumerate(_FIELDS)}
    grid = LutGrid(
        kind, corner, _finite(header["vds"], "vds"), _finite(header["vth"], "vth"), l_axis, vgs_axis, **cols
    )
    grid.validate()
    return grid


LutSet = Mapping[tuple[DeviceKind, ProcessCorner], LutGrid]


def lut_filename(kind: DeviceKind, corner: ProcessCorner) -> str:
    return f"{DeviceKind(kind).value}_{ProcessCorner(corner).value}.lut"


def build_lut_set(
    config: ModelConfig = device.DEFAULT_CONFIG,
    corners: Iterable[ProcessCorner] = device.CORNERS,
    kinds: Iterable[DeviceKind] = tuple(DeviceKind),
) -> dict[tuple[DeviceKind, ProcessCorner], LutGrid]:
    ev = model_evaluator(config)
    kinds = tuple(kinds)
    return {(k, ProcessCorner(c)): build_lut(ev, k, c) for c in corners for k in kinds}


def save_lut(grid: LutGrid, directory: str | Path) -> Path:
    path = Path(directory) / lut_filename(grid.kind, grid.corner)
    path.write_bytes(serialize(grid).encode())
    return path


def load_lut_dir(directory: str | Path) -> dict[tuple[DeviceKind, ProcessCorner], LutGrid]:
    out = {}
    for path in sorted(Path(directory).glob("*.lut")):
        try:
            grid = deserialize(path.read_text())
        except LutFormatError as exc:
            raise LutFormatError(f"{path}: {exc}") from None
        out[(grid.kind, grid.corner)] = grid
    if not out:
        raise LutError(f"no .lut files in {directory}")
    return out
