"""Cascade reconciliation with fixed-length segments.

Each pass permutes the block with a pre-agreed permutation, cuts it into
``segment_bits``-long segments and compares segment parities.  Segments
whose parities differ are bisected until the faulty bit is found.  From
the second pass on, every corrected bit flips the parity of the segment
that held it in each earlier pass; those segments are bisected again, and
so on until no odd segment is left.  Reconciliation stops after a pass in
which every parity agreed, or after ``max_passes``.

Key A is the reference; key B is corrected.  Only A's parities count as
disclosed.  A final 64-bit checksum, also disclosed, tells whether the
keys still differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import bits as _bits
from . import rng as _rng

CHECKSUM_BITS = 64
_CHECKSUM_PRIME = 2**64 - 59


@dataclass(frozen=True)
class CascadeConfig:
    block_bits: int = 2**20
    segment_bits: int = 600
    max_passes: int = 3
    permutation_seed: int = 0

    def __post_init__(self):
        if self.segment_bits < 2:
            raise ValueError("segment_bits must be >= 2")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if self.block_bits < self.segment_bits:
            raise ValueError("block_bits must be >= segment_bits")


class Disclosure(NamedTuple):
    """One parity bit sent by the holder of key A.

    ``path`` is empty for a segment parity and holds the bisection steps
    (0 = left half) that led to the half whose parity was sent.
    """

    block: int
    pass_no: int
    segment: int
    parity: int
    path: tuple = ()


@dataclass
class CascadeResult:
    corrected_peer_key: np.ndarray
    leaked_bits: int
    passes_used: int
    residual_mismatch: bool
    corrections: int = 0
    checksum_bits: int = CHECKSUM_BITS
    transcript: list = field(default_factory=list, repr=False)

    @property
    def leak_ec(self) -> int:
        """All bits disclosed: parities plus the checksum."""
        return self.leaked_bits + self.checksum_bits

    def efficiency(self, error_rate: float) -> float:
        """Parity leakage over the Shannon limit ``len * H(e)``."""
        from .security import binary_entropy

        return self.leaked_bits / (self.corrected_peer_key.size * binary_entropy(error_rate))


def checksum(key, seed: int) -> int:
    """64-bit polynomial hash of a bit string at a seed-derived point."""
    data = _bits.bits_to_bytes(key)
    data += b"\x00" * (-len(data) % 4)
    words = np.frombuffer(data, dtype=">u4").tolist()
    point = 2 + int(_rng.stream(seed, "cascade", "checksum").integers(0, 2**63)) % (_CHECKSUM_PRIME - 3)
    acc = len(_bits.as_bits(key))
    for w in words:
        acc = (acc * point + w) % _CHECKSUM_PRIME
    return acc


class _Block:
    """Cascade state for one block; ``b`` is corrected in place."""

    def __init__(self, a, b, cfg: CascadeConfig, block_no: int, log: list):
        self.a, self.b = a, b
        self.cfg = cfg
        self.block_no = block_no
        self.log = log
        self.perms = []     # permuted order per pass
        self.where = []     # original index -> permuted position per pass
        self.a_perm = []    # a in pass order
        self.b_perm = []    # b in pass order, kept in step with b
        self.odd = []       # per-segment parity mismatch per pass
        self.corrections = 0

    def _bisect(self, p: int, s: int) -> int:
        seg = self.cfg.segment_bits
        lo = s * seg
        hi = min(lo + seg, self.a.size)
        # prefix parities: parity of [i, j) is P[j] ^ P[i]
        ca = [0, *(np.cumsum(self.a_perm[p][lo:hi], dtype=np.int64) & 1).tolist()]
        cb = [0, *(np.cumsum(self.b_perm[p][lo:hi], dtype=np.int64) & 1).tolist()]
        left, right = 0, hi - lo
        path = []
        while right - left > 1:
            mid = left + (right - left + 1) // 2
            pa = ca[mid] ^ ca[left]
            self.log.append(Disclosure(self.block_no, p + 1, s, pa, (*path, 0)))
            if pa != cb[mid] ^ cb[left]:
                right = mid
                path.append(0)
            else:
                left = mid
                path.append(1)
        return int(self.perms[p][lo + left])

    def _flip(self, i: int, upto: int) -> list:
        self.b[i] ^= 1
        self.corrections += 1
        seg = self.cfg.segment_bits
        touched = []
        for q in range(len(self.perms)):
            pos = int(self.where[q][i])
            self.b_perm[q][pos] ^= 1
            if q > upto:
                continue
            s = pos // seg
            self.odd[q][s] ^= 1
            if self.odd[q][s]:
                touched.append((q, s))
        return touched

    def run_pass(self, p: int) -> bool:
        """Run pass ``p`` (0-based); return True if every parity agreed."""
        cfg = self.cfg
        size = self.a.size
        perm = _rng.stream(cfg.permutation_seed, "cascade", self.block_no, p).permutation(size)
        where = np.empty(size, dtype=np.int64)
        where[perm] = np.arange(size)
        self.perms.append(perm)
        self.where.append(where)
        ap, bp = self.a[perm], self.b[perm]
        self.a_perm.append(ap)
        self.b_perm.append(bp)

        starts = np.arange(0, size, cfg.segment_bits)
        pa = np.add.reduceat(ap, starts) & 1
        pb = np.add.reduceat(bp, starts) & 1
        block_no, pass_no = self.block_no, p + 1
        self.log.extend(Disclosure(block_no, pass_no, s, bit) for s, bit in enumerate(pa.tolist()))
        odd = (pa ^ pb).astype(np.uint8)
        self.odd.append(odd)
        clean = not odd.any()

        for s in np.flatnonzero(odd).tolist():
            work = [(p, s)]
            while work:
                q, t = work.pop()
                if not self.odd[q][t]:
                    continue
                work.extend(self._flip(self._bisect(q, t), p))
        return clean


def reconcile(key_a, key_b, cfg: CascadeConfig | None = None) -> CascadeResult:
    """Correct ``key_b`` towards ``key_a``."""
    cfg = cfg or CascadeConfig()
    a = _bits.as_bits(key_a)
    b = _bits.as_bits(key_b).copy()
    if a.size != b.size:
        raise ValueError(f"key lengths differ: {a.size} != {b.size}")
    log: list = []
    passes_used = 0
    corrections = 0
    for block_no, start in enumerate(range(0, a.size, cfg.block_bits)):
        stop = min(start + cfg.block_bits, a.size)
        blk = _Block(a[start:stop], b[start:stop], cfg, block_no, log)
        used = cfg.max_passes
        for p in range(cfg.max_passes):
            if blk.run_pass(p):
                used = p + 1
                break
        passes_used = max(passes_used, used)
        corrections += blk.corrections
    residual = a.size > 0 and checksum(a, cfg.permutation_seed) != checksum(b, cfg.permutation_seed)
    return CascadeResult(
        corrected_peer_key=b, leaked_bits=len(log), passes_used=passes_used,
        residual_mismatch=bool(residual), corrections=corrections, transcript=log,
    )


def expected_bisection_cost(length: int) -> int:
    """Parities sent to locate one error in a segment of ``length`` bits."""
    return math.ceil(math.log2(length)) if length > 1 else 0
