"""Four-phase measurement-device-independent key generation.

Two users each send a weak coherent pulse with phase 0 or pi (X basis) or
pi/2 or 3pi/2 (Y basis) to an untrusted relay that interferes them on a
beam splitter.  Equal phases light D1, opposite phases light D2.  An event
counts when exactly one detector clicks; on a D2 click the peer flips its
bit so that the two raw keys agree.

Two ways in:

* :func:`simulate` samples a parametric click model.  Events are drawn in
  aggregate, one multinomial per phase combination, so runs with 1e10
  pulses cost the same as runs with 1e4.
* :func:`replay` rebuilds a :class:`DetectionSummary` from a measured
  per-phase count table.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng

PHASES = ("0", "π/2", "π", "3π/2")
PHASE_VALUES = {"0": 0.0, "π/2": math.pi / 2, "π": math.pi, "3π/2": 3 * math.pi / 2}
BASIS = {"0": "X", "π": "X", "π/2": "Y", "3π/2": "Y"}
BIT = {"0": 0, "π": 1, "π/2": 0, "3π/2": 1}

# matched-basis rows of a detection table, in publication order
TABLE_ROWS = (
    ("0", "0"), ("0", "π"), ("π", "0"), ("π", "π"),
    ("π/2", "π/2"), ("π/2", "3π/2"), ("3π/2", "π/2"), ("3π/2", "3π/2"),
)
DETECTORS = ("D1", "D2")

DEFAULT_REP_RATE_HZ = 1e8
DEFAULT_WINDOW_S = 2e-9


class TableFormatError(ValueError):
    """A detection table is missing fields or is inconsistent."""


class InsufficientDataError(ValueError):
    """Too few events to estimate an error rate."""


def row_label(a: str, b: str) -> str:
    sep = "" if len(a) == 1 and len(b) == 1 else " "
    return f"Detected {a}{sep}{b}"


def _normalise_label(text: str) -> str:
    t = text.strip().replace("pi", "π").replace("PI", "π")
    if t.lower().startswith("detected"):
        t = t[len("detected"):]
    return t.replace(" ", "")


_LABEL_LOOKUP = {(a + b): (a, b) for a, b in TABLE_ROWS}


@dataclass
class KgpConfig:
    """Parameters of the click-model simulation.

    ``channel_loss_db`` is the loss of one arm (user to relay); the other
    arm uses ``peer_loss_db`` when given, otherwise the same value.
    Dark-count probabilities are per detection window.
    """

    N: int = 10**10
    p_x: float = 0.9
    intensity: float = 4.2e-3
    channel_loss_db: float = 10.0
    peer_loss_db: float | None = None
    eta_d1: float = 0.844
    eta_d2: float = 0.855
    p_d1: float = 4.4 * DEFAULT_WINDOW_S
    p_d2: float = 2.5 * DEFAULT_WINDOW_S
    phase_noise_sigma: float = 0.0
    bit_flip_rate: float = 0.0
    rep_rate_hz: float = DEFAULT_REP_RATE_HZ
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p_x < 1:
            raise ValueError("p_x must lie in (0, 1)")
        if self.intensity < 0:
            raise ValueError("intensity must be >= 0")
        for eta in (self.eta_d1, self.eta_d2):
            if not 0 < eta <= 1:
                raise ValueError("detector efficiencies must lie in (0, 1]")
        if self.channel_loss_db < 0 or (self.peer_loss_db or 0) < 0:
            raise ValueError("loss must be >= 0 dB")
        if self.N < 0 or self.rep_rate_hz <= 0:
            raise ValueError("N must be >= 0 and the repetition rate > 0")
        if not 0 <= self.bit_flip_rate <= 1:
            raise ValueError("bit_flip_rate must lie in [0, 1]")

    @property
    def duration_s(self) -> float:
        return self.N / self.rep_rate_hz

    @classmethod
    def from_json(cls, obj: dict) -> "KgpConfig":
        known = cls.__dataclass_fields__
        unknown = set(obj) - set(known)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class DetectionSummary:
    """Counts of one key-generation run.

    ``per_phase_counts`` maps ``(merchant_phase, peer_phase, detector)`` to
    the number of effective events.  ``N`` is the number of pulse pairs
    sent, when known.
    """

    n: int
    n_x: int
    n_y: int
    per_phase_counts: dict
    m_y: int
    duration_s: float
    N: int | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_x + self.n_y > self.n:
            raise TableFormatError(f"n_x + n_y = {self.n_x + self.n_y} exceeds n = {self.n}")
        if any(v < 0 for v in self.per_phase_counts.values()):
            raise TableFormatError("negative count")
        if self.m_y > self.n_y:
            raise TableFormatError("more Y errors than Y events")

    @property
    def m_x(self) -> int | None:
        """X-basis errors implied by the per-phase cells, if all present."""
        return _basis_errors(self.per_phase_counts, "X")

    @property
    def gain(self) -> float | None:
        return self.n / self.N if self.N else None

    def table(self) -> dict:
        """Matched-basis rows keyed by their printed label."""
        return {
            row_label(a, b): {d: int(self.per_phase_counts.get((a, b, d), 0)) for d in DETECTORS}
            for a, b in TABLE_ROWS
        }

    def to_json(self) -> dict:
        out = {"n": self.n, "n_x": self.n_x, "n_y": self.n_y, "m_y": self.m_y,
               "duration_s": self.duration_s, "N": self.N}
        out.update(self.table())
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out


@dataclass
class SiftedKeys:
    merchant_bits: np.ndarray
    peer_bits: np.ndarray
    E_b_x: float
    E_b_y: float

    def __post_init__(self):
        if self.merchant_bits.shape != self.peer_bits.shape:
            raise ValueError("sifted strings differ in length")

    def __len__(self):
        return int(self.merchant_bits.size)


@dataclass(frozen=True)
class ErrorRates:
    E_b_x: float
    E_b_y: float
    m_y: int
    n_y: int
    n_x: int
    x_source: str


def _basis_errors(counts: dict, basis: str) -> int | None:
    total = 0
    for a, b in TABLE_ROWS:
        if BASIS[a] != basis:
            continue
        wrong = "D2" if BIT[a] == BIT[b] else "D1"
        key = (a, b, wrong)
        if key not in counts:
            return None
        total += int(counts[key])
    return total


# --- simulation ---------------------------------------------------------

def _arm_transmittance(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def _outcome_probs(cfg: KgpConfig, dtheta: float, nodes, weights) -> tuple[float, float]:
    """P(only D1 clicks), P(only D2 clicks) for a nominal phase difference,
    averaged over Gaussian phase noise."""
    ta = _arm_transmittance(cfg.channel_loss_db)
    tb = _arm_transmittance(cfg.channel_loss_db if cfg.peer_loss_db is None else cfg.peer_loss_db)
    a = cfg.intensity
    phase = dtheta + cfg.phase_noise_sigma * nodes
    common = a * (ta + tb) / 2
    cross = a * math.sqrt(ta * tb) * np.cos(phase)
    mu1 = np.maximum(common + cross, 0.0)
    mu2 = np.maximum(common - cross, 0.0)
    # no-click probabilities of each detector
    q1 = (1 - cfg.p_d1) * np.exp(-cfg.eta_d1 * mu1)
    q2 = (1 - cfg.p_d2) * np.exp(-cfg.eta_d2 * mu2)
    only1 = float(np.dot(weights, (1 - q1) * q2))
    only2 = float(np.dot(weights, q1 * (1 - q2)))
    return only1, only2


def _quadrature(sigma: float, order: int = 48):
    if sigma == 0:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


def simulate(config: KgpConfig) -> tuple[DetectionSummary, SiftedKeys]:
    """Sample one key-generation run from the click model."""
    cfg = config
    gen = _rng.stream(cfg.seed, "kgp", "events")
    nodes, weights = _quadrature(cfg.phase_noise_sigma)

    p_phase = {ph: (cfg.p_x if BASIS[ph] == "X" else 1 - cfg.p_x) / 2 for ph in PHASES}
    combos = [(a, b) for a in PHASES for b in PHASES]
    pair_p = np.array([p_phase[a] * p_phase[b] for a, b in combos])
    pulses = gen.multinomial(int(cfg.N), pair_p / pair_p.sum())

    counts: dict = {}
    for (a, b), npulse in zip(combos, pulses):
        only1, only2 = _outcome_probs(cfg, PHASE_VALUES[a] - PHASE_VALUES[b], nodes, weights)
        c1, c2, _ = gen.multinomial(int(npulse), [only1, only2, max(0.0, 1 - only1 - only2)])
        counts[(a, b, "D1")] = int(c1)
        counts[(a, b, "D2")] = int(c2)

    n = sum(counts.values())
    n_x = sum(v for (a, b, _), v in counts.items() if BASIS[a] == BASIS[b] == "X")
    n_y = sum(v for (a, b, _), v in counts.items() if BASIS[a] == BASIS[b] == "Y")
    m_y = _basis_errors(counts, "Y")

    merchant, peer = [], []
    for a, b in TABLE_ROWS[:4]:
        for det in DETECTORS:
            c = counts[(a, b, det)]
            merchant.append(np.full(c, BIT[a], dtype=np.uint8))
            peer.append(np.full(c, BIT[b] ^ (det == "D2"), dtype=np.uint8))
    merchant = np.concatenate(merchant) if merchant else np.zeros(0, np.uint8)
    peer = np.concatenate(peer) if peer else np.zeros(0, np.uint8)
    order = _rng.stream(cfg.seed, "kgp", "order").permutation(merchant.size)
    merchant, peer = merchant[order], peer[order]
    if cfg.bit_flip_rate > 0 and peer.size:
        flips = _rng.stream(cfg.seed, "kgp", "flips").random(peer.size) < cfg.bit_flip_rate
        peer = peer ^ flips.astype(np.uint8)

    notes = []
    if n == 0:
        notes.append("no effective events")
        warnings.warn("simulation produced no effective events", RuntimeWarning, stacklevel=2)
    summary = DetectionSummary(n=n, n_x=n_x, n_y=n_y, per_phase_counts=counts, m_y=m_y,
                               duration_s=cfg.duration_s, N=int(cfg.N), warnings=notes)
    e_x = float(np.count_nonzero(merchant != peer)) / merchant.size if merchant.size else 0.0
    e_y = m_y / n_y if n_y else 0.0
    return summary, SiftedKeys(merchant, peer, e_x, e_y)


# --- replay -------------------------------------------------------------

def _cells_from_table(table: dict) -> dict:
    counts = {}
    for key, value in table.items():
        if not isinstance(key, str) or not key.strip().lower().startswith("detected"):
            continue
        if isinstance(value, dict):
            items = value.items()
            body = key
        else:
            body, _, det = key.rpartition(" ")
            items = [(det, value)]
        pair = _LABEL_LOOKUP.get(_normalise_label(body))
        if pair is None:
            raise TableFormatError(f"unknown row label {key!r}")
        for det, v in items:
            det = det.strip().upper()
            if det not in DETECTORS:
                raise TableFormatError(f"unknown detector {det!r} in {key!r}")
            counts[(pair[0], pair[1], det)] = int(v)
    return counts


def replay(table: dict, duration_s: float, N: int | None = None) -> DetectionSummary:
    """Summary of a measured run from its per-phase count table.

    ``table`` holds ``n``, ``n_x``, ``n_y`` and sixteen cells keyed either
    ``{"Detected 0π": {"D1": .., "D2": ..}}`` or flat ``{"Detected 0π D1": ..}``.
    ``pi`` is accepted in place of the Greek letter.
    """
    if not table:
        raise TableFormatError("empty detection table")
    missing = [k for k in ("n", "n_x", "n_y") if k not in table]
    if missing:
        raise TableFormatError(f"missing fields: {missing}")
    counts = _cells_from_table(table)
    absent = [row_label(a, b) + " " + d for a, b in TABLE_ROWS for d in DETECTORS
              if (a, b, d) not in counts]
    if absent:
        raise TableFormatError(f"missing cells: {absent}")
    if N is None and table.get("N") is not None:
        N = int(table["N"])
    return DetectionSummary(
        n=int(table["n"]), n_x=int(table["n_x"]), n_y=int(table["n_y"]),
        per_phase_counts=counts, m_y=_basis_errors(counts, "Y"),
        duration_s=float(duration_s), N=N,
    )


def load_table(path) -> dict:
    """Read a detection table from JSON or from a two-column CSV
    (``field,value``; cells named ``Detected 0π D1``)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip().lower() == "field":
        rows = rows[1:]
    out = {}
    for r in rows:
        if len(r) < 2:
            raise TableFormatError(f"bad CSV row {r!r}")
        out[r[0].strip()] = float(r[1]) if r[0].strip() == "duration_s" else int(r[1])
    return out


# --- estimation ---------------------------------------------------------

def estimate(summary: DetectionSummary, sifted: SiftedKeys | None = None,
             e_b_x: float | None = None) -> ErrorRates:
    """Bit error rates of both bases.

    The X-basis rate comes from comparing sifted strings when given, else
    from ``e_b_x`` when given, else from the X-basis error cells.
    """
    if summary.n_y <= 0:
        raise InsufficientDataError("no Y-basis events")
    e_y = summary.m_y / summary.n_y
    if sifted is not None and len(sifted):
        e_x = float(np.count_nonzero(sifted.merchant_bits != sifted.peer_bits)) / len(sifted)
        src = "sifted"
    elif e_b_x is not None:
        e_x, src = float(e_b_x), "given"
    elif summary.m_x is not None and summary.n_x > 0:
        e_x, src = summary.m_x / summary.n_x, "cells"
    else:
        raise InsufficientDataError("no source for the X-basis error rate")
    return ErrorRates(E_b_x=e_x, E_b_y=e_y, m_y=summary.m_y, n_y=summary.n_y,
                      n_x=summary.n_x, x_source=src)
