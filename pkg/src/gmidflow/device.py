"""Smooth weak/strong-inversion MOSFET model used in place of SPICE sweeps.

Drain current per micron of width::

    id = 2 n (kp / L) ut^2 ln^2(1 + exp((Vgs - vth) / (2 n ut))) (1 + lambda_eff Vds)

with ``lambda_eff = lambda / L``. Lengths are in microns, so ``kp / L`` is the
current scale of a 1 um wide device. PMOS quantities are magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit

from .kvconfig import ConfigError, read_kv

UT = 25.85e-3
OVERLAP_C0 = 0.2

L_RANGE = (0.15, 5.0)
VGS_RANGE = (0.0, 1.8)
VDS_MAX = 1.8


class DeviceKind(str, Enum):
    NMOS = "nmos"
    PMOS = "pmos"


class ProcessCorner(str, Enum):
    TT = "TT"
    FF = "FF"
    SS = "SS"
    FS = "FS"
    SF = "SF"


CORNERS = tuple(ProcessCorner)

# (nmos speed, pmos speed); first letter of a corner name is nmos
_CORNER_SPEEDS = {
    ProcessCorner.TT: ("typ", "typ"),
    ProcessCorner.FF: ("fast", "fast"),
    ProcessCorner.SS: ("slow", "slow"),
    ProcessCorner.FS: ("fast", "slow"),
    ProcessCorner.SF: ("slow", "fast"),
}


class DeviceDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    vth0: float
    kp: float
    n_slope: float
    lam: float
    cox_area: float
    ut: float = UT

    def __post_init__(self):
        if not self.kp > 0:
            raise ConfigError(f"kp must be positive, got {self.kp}")
        if not self.n_slope >= 1:
            raise ConfigError(f"n_slope must be >= 1, got {self.n_slope}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not self.cox_area > 0:
            raise ConfigError(f"cox_area must be positive, got {self.cox_area}")


@dataclass(frozen=True)
class OpPoint:
    id_per_w: float
    gm_per_w: float
    gds_per_w: float
    cgg_per_w: float
    gm_over_id: float
    vov: float


@dataclass(frozen=True)
class ModelConfig:
    """Base parameters for both polarities plus corner shift magnitudes."""

    nmos: ModelParams = ModelParams(vth0=0.40, kp=280e-6, n_slope=1.3, lam=0.08, cox_area=8.5e-3)
    pmos: ModelParams = ModelParams(vth0=0.45, kp=280e-6 / 2.5, n_slope=1.3, lam=0.10, cox_area=8.5e-3)
    vth_shift: float = 0.030
    kp_scale: float = 0.10

    def base(self, kind: DeviceKind) -> ModelParams:
        return self.nmos if DeviceKind(kind) is DeviceKind.NMOS else self.pmos


DEFAULT_CONFIG = ModelConfig()

_PARAM_KEYS = {"vth0": "vth0", "kp": "kp", "n_slope": "n_slope", "lambda": "lam", "cox_area": "cox_area"}


def load_model_config(path: str | Path) -> ModelConfig:
    """Read a ``key=value`` model file.

    Recognised keys: ``nmos.<p>``/``pmos.<p>`` for p in vth0, kp, n_slope,
    lambda, cox_area, plus ``vth_shift`` and ``kp_scale``. Missing keys keep
    their defaults.
    """
    raw = read_kv(path)
    cfg = DEFAULT_CONFIG
    per_kind: dict[str, dict[str, float]] = {"nmos": {}, "pmos": {}}
    top: dict[str, float] = {}
    for key, value in raw.items():
        try:
            num = float(value)
        except ValueError:
            raise ConfigError(f"{path}: {key} is not a number: {value!r}") from None
        if "." in key:
            kind, name = key.split(".", 1)
            if kind not in per_kind or name not in _PARAM_KEYS:
                raise ConfigError(f"{path}: unknown key {key!r}")
            per_kind[kind][_PARAM_KEYS[name]] = num
        elif key in ("vth_shift", "kp_scale"):
            top[key] = num
        else:
            raise ConfigError(f"{path}: unknown key {key!r}")
    return replace(
        cfg,
        nmos=replace(cfg.nmos, **per_kind["nmos"]),
        pmos=replace(cfg.pmos, **per_kind["pmos"]),
        **top,
    )


def corner_params(kind: DeviceKind, corner: ProcessCorner, config: ModelConfig = DEFAULT_CONFIG) -> ModelParams:
    kind = DeviceKind(kind)
    corner = ProcessCorner(corner)
    base = config.base(kind)
    speed = _CORNER_SPEEDS[corner][0 if kind is DeviceKind.NMOS else 1]
    if speed == "fast":
        return replace(base, vth0=base.vth0 - config.vth_shift, kp=base.kp * (1 + config.kp_scale))
    if speed == "slow":
        return replace(base, vth0=base.vth0 + config.vth_shift, kp=base.kp * (1 - config.kp_scale))
    return base


def _check_domain(L, vgs, vds):
    L, vgs, vds = np.asarray(L, float), np.asarray(vgs, float), np.asarray(vds, float)
    if not np.all((L >= L_RANGE[0]) & (L <= L_RANGE[1])):
        raise DeviceDomainError(f"L={L} outside [{L_RANGE[0]}, {L_RANGE[1]}] um")
    if not np.all((vgs >= VGS_RANGE[0]) & (vgs <= VGS_RANGE[1])):
        raise DeviceDomainError(f"Vgs={vgs} outside [{VGS_RANGE[0]}, {VGS_RANGE[1]}] V")
    if not np.all((vds > 0) & (vds <= VDS_MAX)):
        raise DeviceDomainError(f"Vds={vds} outside (0, {VDS_MAX}] V")
    return L, vgs, vds


def evaluate_arrays(p: ModelParams, L, vgs, vds):
    """Vectorised model core. Returns (id, gm, gds, cgg, gm/id, vov) arrays per um of width."""
    L, vgs, vds = _check_domain(L, vgs, vds)
    two_n_ut = 2.0 * p.n_slope * p.ut
    u = (vgs - p.vth0) / two_n_ut
    soft = np.logaddexp(0.0, u)
    lam_eff = p.lam / L
    clm = 1.0 + lam_eff * vds
    scale = 2.0 * p.n_slope * (p.kp / L) * p.ut**2
    ids = scale * soft**2 * clm
    gm = scale * 2.0 * soft * expit(u) / two_n_ut * clm
    gds = ids * lam_eff / clm
    cgg = p.cox_area * L * 1e-12 * (2.0 / 3.0 + OVERLAP_C0) * np.ones_like(vgs)
    # closed form of gm/id avoids cancellation in deep weak inversion
    gmid = expit(u) / (soft * p.n_slope * p.ut)
    return ids, gm, gds, cgg, gmid, vgs - p.vth0


def evaluate(
    kind: DeviceKind,
    corner: ProcessCorner,
    L: float,
    vgs: float,
    vds: float,
    config: ModelConfig = DEFAULT_CONFIG,
) -> OpPoint:
    p = corner_params(kind, corner, config)
    ids, gm, gds, cgg, _, vov = (float(x) for x in evaluate_arrays(p, L, vgs, vds))
    return OpPoint(ids, gm, gds, cgg, gm / ids, vov)
