"""Metric extraction from sampled AC sweeps and transient waveforms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class ExtractionError(ValueError):
    pass


class NoCrossingError(ExtractionError):
    pass


@dataclass(frozen=True)
class AcPoint:
    freq: float
    mag_db: float
    phase_deg: float


def extract_ac_metrics(sweep: Sequence[AcPoint]) -> tuple[float, float, float]:
    """(gain_db, gbw_hz, pm_deg) from an open-loop AC sweep.

    The unity-gain frequency is interpolated linearly in log-frequency between
    the two samples that bracket 0 dB; phase is interpolated at the same
    fraction. A sweep whose low-frequency phase sits near +/-180 deg (an
    inverting output) is shifted to the non-inverting convention first.
    """
    if len(sweep) < 2:
        raise ExtractionError("sweep needs at least two points")
    for a, b in zip(sweep, sweep[1:]):
        if not b.freq > a.freq:
            raise ExtractionError(f"frequency not strictly increasing at {b.freq:g} Hz")
        if abs(b.phase_deg - a.phase_deg) > 180.0:
            raise ExtractionError(f"phase not unwrapped at {b.freq:g} Hz")
    gain_db = sweep[0].mag_db
    for a, b in zip(sweep, sweep[1:]):
        if a.mag_db >= 0.0 > b.mag_db:
            t = a.mag_db / (a.mag_db - b.mag_db)
            log_f = math.log10(a.freq) + t * (math.log10(b.freq) - math.log10(a.freq))
            phase = a.phase_deg + t * (b.phase_deg - a.phase_deg)
            break
    else:
        raise NoCrossingError("magnitude never crosses 0 dB within the sweep")
    phase -= 180.0 * round(sweep[0].phase_deg / 180.0)
    pm = 180.0 + phase
    # fold into (-180, 180]
    pm = pm - 360.0 * math.ceil((pm - 180.0) / 360.0)
    return gain_db, 10.0**log_f, pm


def extract_sr(waveform: Sequence[tuple[float, float]], v_lo: float, v_hi: float) -> float:
    """10-90 % rising-edge slew rate in V/us."""
    swing = v_hi - v_lo
    if not swing > 0:
        raise ExtractionError(f"need v_hi > v_lo, got {v_lo}, {v_hi}")
    t10 = _first_rising_crossing(waveform, v_lo + 0.1 * swing)
    t90 = _first_rising_crossing(waveform, v_lo + 0.9 * swing, after=t10)
    if not t90 > t10:
        raise ExtractionError("10% and 90% crossings coincide")
    return 0.8 * swing / (t90 - t10) / 1e6


def _first_rising_crossing(waveform, level: float, after: float | None = None) -> float:
    for (t0, v0), (t1, v1) in zip(waveform, waveform[1:]):
        if after is not None and t1 < after:
            continue
        if v0 < level <= v1:
            return t0 + (level - v0) / (v1 - v0) * (t1 - t0)
    raise ExtractionError(f"waveform never rises through {level:.4g} V")
