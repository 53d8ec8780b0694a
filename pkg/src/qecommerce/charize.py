"""Characterisation of source flaws from lab measurements.

Each function turns one kind of record into one flaw parameter:

* a power-meter series (dBm) gives the intensity fluctuation ``xi``,
* interference counts at the four nominal phases give the phase shift,
* a PBS power split gives the polarisation leakage ``tan(theta)``,
* counts conditioned on the previous symbol give the pattern deviation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .security import SourceFlaws

HOEFFDING_EPS = 1e-10

_PHASE_NAMES = {"0": 0.0, "π/2": math.pi / 2, "π": math.pi, "3π/2": 3 * math.pi / 2}


class InsufficientStatisticsError(ValueError):
    """Fluctuation bounds leave a non-positive count."""


def parse_phase(text) -> float:
    """'π/2', 'pi/2', '3pi/2' or a number of radians."""
    if isinstance(text, (int, float)):
        return float(text)
    t = str(text).strip().replace("pi", "π").replace(" ", "")
    if t in _PHASE_NAMES:
        return _PHASE_NAMES[t]
    return float(t)


# --- intensity ----------------------------------------------------------

def power_fluctuation(series_dbm) -> float:
    """Largest relative deviation of the linear power from its mean."""
    p = np.asarray(series_dbm, dtype=float)
    if p.size < 2:
        raise ValueError("need at least two power samples")
    lin = 10.0 ** (p / 10.0)
    mean = lin.mean()
    return float(np.max(np.abs(lin - mean)) / mean)


def xi_from_span_db(span_db: float) -> float:
    """Relative power change for a peak-to-peak span given in dB."""
    if span_db < 0:
        raise ValueError("span must be >= 0")
    return 10.0 ** (span_db / 10.0) - 1.0


# --- phase shift --------------------------------------------------------

@dataclass(frozen=True)
class PhaseShiftRecord:
    """Counts at one nominal phase plus the phase-0 reference counts."""

    phi: float
    D1: float
    D2: float
    D1_0: float
    D2_0: float
    eta_d1: float = 0.844
    eta_d2: float = 0.855
    eps: float = HOEFFDING_EPS

    def __post_init__(self):
        if min(self.D1, self.D2, self.D1_0, self.D2_0) < 0:
            raise ValueError("counts must be >= 0")
        if not any(math.isclose(self.phi, v, abs_tol=1e-9) for v in _PHASE_NAMES.values()):
            raise ValueError("phi must be one of 0, pi/2, pi, 3pi/2")


def _hoeffding(count: float, eps: float) -> tuple[float, float]:
    if eps >= 1.0:
        return count, count
    w = math.sqrt(count / 2.0 * math.log(1.0 / eps))
    return count - w, count + w


def relative_efficiency(D1_0: float, D2_pi: float) -> float:
    """``eta_d2 / eta_d1`` from the two full-visibility settings: at phase
    0 the light goes to D1, at phase pi to D2."""
    if D1_0 <= 0 or D2_pi <= 0:
        raise ValueError("reference counts must be > 0")
    return D2_pi / D1_0


def phase_shift_bound(rec: PhaseShiftRecord, eta_ratio: float | None = None) -> float:
    """Upper bound on the phase error of one modulation setting.

    Parameters
    ----------
    rec : PhaseShiftRecord
    eta_ratio : float, optional
        ``eta_d2 / eta_d1`` to use instead of the ratio of the nameplate
        efficiencies in ``rec``; see :func:`relative_efficiency`.
    """
    if math.isclose(rec.phi, 0.0, abs_tol=1e-12):
        raise ValueError("phase 0 is the reference setting")
    phi0 = rec.phi if rec.phi <= math.pi + 1e-12 else rec.phi - math.pi
    ratio = rec.eta_d2 / rec.eta_d1 if eta_ratio is None else eta_ratio

    d1_lo, d1_hi = _hoeffding(rec.D1, rec.eps)
    d2_lo, d2_hi = _hoeffding(rec.D2, rec.eps)
    r2_lo, r2_hi = _hoeffding(rec.D2_0, rec.eps)
    pairs = ((d2_hi - r2_lo, d1_lo - r2_hi), (d2_lo - r2_hi, d1_hi - r2_lo))
    out = 0.0
    for num, den in pairs:
        if num < 0 or den <= 0:
            raise InsufficientStatisticsError(
                f"lower bound non-positive at phi={rec.phi:.4f}: num={num:.3g}, den={den:.3g}")
        est = 2 * math.atan(math.sqrt((num / ratio) / den))
        out = max(out, abs(phi0 - est))
    return out


def phase_shift_table(rows: dict, efficiency: str = "nameplate", eta_d1: float = 0.844,
                      eta_d2: float = 0.855, eps: float = HOEFFDING_EPS) -> dict:
    """Bounds for every non-zero phase of one participant pair.

    ``rows`` maps a phase (name or radians) to ``(D1, D2)``.
    ``efficiency="self"`` replaces the nameplate efficiency ratio by the
    one measured from the phase-0 and phase-pi rows.
    """
    table = {parse_phase(k): tuple(v) for k, v in rows.items()}
    if 0.0 not in table:
        raise ValueError("the phase-0 reference row is missing")
    d1_0, d2_0 = table[0.0]
    if efficiency == "self":
        if math.pi not in table:
            raise ValueError("self-calibration needs the phase-pi row")
        ratio = relative_efficiency(d1_0, table[math.pi][1])
    elif efficiency == "nameplate":
        ratio = None
    else:
        raise ValueError("efficiency must be 'nameplate' or 'self'")
    out = {}
    for phi, (d1, d2) in sorted(table.items()):
        if phi == 0.0:
            continue
        rec = PhaseShiftRecord(phi, d1, d2, d1_0, d2_0, eta_d1, eta_d2, eps)
        out[phi] = phase_shift_bound(rec, ratio)
    return out


# --- polarisation -------------------------------------------------------

def polarization_ratio(power_fast: float, power_slow: float) -> tuple[float, float]:
    """``(tan_theta, extinction_db)``; ``tan_theta`` is the power ratio."""
    if power_fast <= 0 or power_slow <= 0:
        raise ValueError("powers must be > 0")
    ratio = power_fast / power_slow
    return ratio, 10.0 * math.log10(ratio)


def tan_theta_from_db(extinction_db: float) -> float:
    return 10.0 ** (extinction_db / 10.0)


# --- pattern effect -----------------------------------------------------

@dataclass(frozen=True)
class PatternResult:
    groups: dict
    sin_psi: float
    psi: float


def pattern_deviation(table: dict) -> PatternResult:
    """Deviation of click counts conditioned on the previous symbol.

    ``table`` maps ``(previous, current)`` to a count, or ``current`` to a
    list of four counts.  Each group sharing the current symbol gives
    ``max |c - mean| / mean``; ``sin(psi)`` is the largest of these.
    """
    groups: dict = {}
    for key, value in table.items():
        if isinstance(key, tuple):
            groups.setdefault(key[1], []).append(float(value))
        else:
            groups.setdefault(key, []).extend(float(v) for v in value)
    if not groups or sum(len(g) for g in groups.values()) != 16:
        raise ValueError("a pattern table needs sixteen counts")
    dev = {}
    for cur, counts in groups.items():
        c = np.asarray(counts)
        if (c < 0).any():
            raise ValueError("counts must be >= 0")
        mean = c.mean()
        if mean == 0:
            raise ValueError(f"group {cur!r} has zero mean")
        dev[cur] = float(np.max(np.abs(c - mean)) / mean)
    s = max(dev.values())
    return PatternResult(dev, s, math.asin(min(1.0, s)))


def pattern_epsilon(alpha_sq: float, psi: float) -> float:
    """Correlation parameter of neighbouring pulses."""
    if alpha_sq <= 0:
        raise ValueError("alpha_sq must be > 0")
    if not 0 <= psi < math.pi / 2:
        raise ValueError("psi must lie in [0, pi/2)")
    return -math.expm1(alpha_sq * (2 * math.cos(psi) - 2))


# --- CSV ingestion ------------------------------------------------------

def _rows(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [r for r in csv.DictReader(fh) if any((v or "").strip() for v in r.values())]


def read_power_series(path) -> np.ndarray:
    """Last column of a CSV (header ``dbm`` or ``time,dbm``)."""
    rows = _rows(path)
    if not rows:
        raise ValueError("empty power series")
    key = list(rows[0])[-1]
    return np.array([float(r[key]) for r in rows])


def read_phase_table(path) -> dict:
    """CSV with columns ``phi,D1,D2``."""
    return {r["phi"].strip(): (float(r["D1"]), float(r["D2"])) for r in _rows(path)}


def read_pattern_table(path) -> dict:
    """CSV with columns ``previous,current,count``."""
    return {(r["previous"].strip(), r["current"].strip()): float(r["count"]) for r in _rows(path)}


def read_polarization(path) -> tuple[float, float]:
    """CSV with columns ``power_fast,power_slow`` (mW); the worst row wins."""
    rows = _rows(path)
    if not rows:
        raise ValueError("empty polarisation record")
    return max(((float(r["power_fast"]), float(r["power_slow"])) for r in rows),
               key=lambda fs: fs[0] / fs[1])


def flaws_from_records(xi: float = 0.0, delta: float = 0.0, tan_theta: float = 0.0,
                       psi: float = 0.0, mu_tha: float = 1e-7) -> SourceFlaws:
    return SourceFlaws(xi=xi, delta=delta, tan_theta=tan_theta, psi=psi, mu_tha=mu_tha)
