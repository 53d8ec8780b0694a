"""One-time universal hashing with an LFSR-based Toeplitz matrix.

A tag is ``H(x2, x3) . C  XOR  x4`` where the n x m matrix ``H`` has the
successive LFSR states ``x3, W x3, W^2 x3, ...`` as columns and ``W`` is the
companion matrix of the irreducible polynomial generated from ``x2``::

        | p_{n-1} p_{n-2} ... p_1 p_0 |
        |    1       0    ...  0   0  |
    W = |    0       1    ...  0   0  |
        |   ...                       |
        |    0       0    ...  1   0  |

State vectors are read top to bottom, so bit 0 of ``x3`` is ``a_n``.
Contracts given as bytes are expanded MSB-first.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import bits as _bits
from .gf2 import Gf2Poly, gen_irreducible


class KeyReuseError(RuntimeError):
    """A one-time signing key was asked to sign a second time."""


def _message_bits(message) -> np.ndarray:
    if isinstance(message, (bytes, bytearray, memoryview)):
        return _bits.bytes_to_bits(bytes(message))
    return _bits.as_bits(message)


def lfsr_hash(message, poly: Gf2Poly, init) -> np.ndarray:
    """``H . message`` over GF(2) without materialising ``H``.

    Parameters
    ----------
    message : bytes or bit array
        The m-bit input; bytes are expanded MSB-first.
    poly : Gf2Poly
        Feedback polynomial of degree n.
    init : bit array
        The n-bit initial state ``(a_n, ..., a_1)``.

    Returns
    -------
    ndarray of uint8, shape (n,)
    """
    msg = _message_bits(message)
    state_bits = _bits.as_bits(init)
    n = poly.degree
    if n < 1 or state_bits.size != n:
        raise ValueError(f"initial state has {state_bits.size} bits, polynomial degree is {n}")
    if msg.size < 1:
        raise ValueError("message must be non-empty")
    state = _bits.bits_to_int(state_bits)
    if state == 0:
        raise ValueError("initial state must not be all-zero")

    taps = poly.value ^ (1 << n)  # bit k holds p_k
    top = n - 1
    acc = 0
    for bit in msg.tolist():
        if bit:
            acc ^= state
        state = (state >> 1) | (((state & taps).bit_count() & 1) << top)
    return _bits.int_to_bits(acc, n)


@dataclass(eq=False)
class SignatureKeys:
    """One ``3n``-bit signing key split as ``(x2, x3, x4)``.

    ``x2`` seeds the irreducible polynomial, ``x3`` is the LFSR initial
    state and ``x4`` the one-time pad on the tag.  The instance is
    single-use for signing; verification may be repeated.
    """

    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    consumed: bool = field(default=False, compare=False)
    uses: int = field(default=0, compare=False)

    def __post_init__(self):
        self.x2 = _bits.as_bits(self.x2).copy()
        self.x3 = _bits.as_bits(self.x3).copy()
        self.x4 = _bits.as_bits(self.x4).copy()
        if not (self.x2.size == self.x3.size == self.x4.size) or self.x2.size == 0:
            raise ValueError("x2, x3 and x4 must be non-empty and equally long")
        self._lock = threading.Lock()
        self._poly: Gf2Poly | None = None

    @property
    def n(self) -> int:
        return int(self.x2.size)

    @classmethod
    def from_block(cls, block) -> "SignatureKeys":
        b = _bits.as_bits(block)
        if b.size % 3:
            raise ValueError("a key block must hold 3n bits")
        n = b.size // 3
        return cls(b[:n], b[n:2 * n], b[2 * n:])

    def to_block(self) -> np.ndarray:
        return np.concatenate([self.x2, self.x3, self.x4])

    def __xor__(self, other: "SignatureKeys") -> "SignatureKeys":
        if other.n != self.n:
            raise ValueError("key lengths differ")
        return SignatureKeys(self.x2 ^ other.x2, self.x3 ^ other.x3, self.x4 ^ other.x4)

    def same_material(self, other: "SignatureKeys") -> bool:
        return bool(np.array_equal(self.to_block(), other.to_block()))

    def copy(self) -> "SignatureKeys":
        return SignatureKeys(self.x2, self.x3, self.x4)

    @property
    def poly(self) -> Gf2Poly:
        if self._poly is None:
            self._poly = gen_irreducible(self.n, self.x2)
        return self._poly

    def consume(self):
        with self._lock:
            if self.consumed:
                raise KeyReuseError("signing key already used")
            self.consumed = True
            self.uses += 1

    def touch(self):
        with self._lock:
            self.uses += 1

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "x2": _bits.bits_to_hex(self.x2),
            "x3": _bits.bits_to_hex(self.x3),
            "x4": _bits.bits_to_hex(self.x4),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SignatureKeys":
        n = int(obj["n"])
        return cls(*(_bits.hex_to_bits(obj[k], n) for k in ("x2", "x3", "x4")))


@dataclass(frozen=True)
class SignatureTag:
    bits: np.ndarray

    @property
    def n(self) -> int:
        return int(self.bits.size)

    def to_hex(self) -> str:
        return _bits.bits_to_hex(self.bits)

    @classmethod
    def from_hex(cls, text: str, n: int) -> "SignatureTag":
        return cls(_bits.hex_to_bits(text, n))

    def __eq__(self, other):
        return isinstance(other, SignatureTag) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.to_hex())


def _tag(contract, keys: SignatureKeys) -> np.ndarray:
    return lfsr_hash(contract, keys.poly, keys.x3) ^ keys.x4


def sign(contract, keys: SignatureKeys) -> SignatureTag:
    """Tag ``contract`` and mark ``keys`` as spent."""
    if _message_bits(contract).size == 0:
        raise ValueError("contract must be non-empty")
    keys.consume()
    return SignatureTag(_tag(contract, keys))


def verify(contract, tag: SignatureTag, keys: SignatureKeys) -> bool:
    """Recompute the tag of ``contract`` under ``keys`` and compare."""
    if tag.n != keys.n:
        raise ValueError(f"tag has {tag.n} bits, keys have n={keys.n}")
    keys.touch()
    return bool(np.array_equal(_tag(contract, keys), tag.bits))


def lfsr_hash_batch(messages, polys, inits, n: int) -> np.ndarray:
    """Vectorised :func:`lfsr_hash` for n <= 63.

    Parameters
    ----------
    messages : array of 0/1, shape (m,) or (T, m)
        One message shared by all lanes, or one per lane.
    polys, inits : array of uint64, shape (T,)
        Packed feedback polynomials (degree ``n``) and initial states, with
        string index 0 of the state as the most significant bit.

    Returns
    -------
    ndarray of uint64, shape (T,)
        Packed ``H . message``; an all-zero initial state hashes to zero.
    """
    if not 1 <= n <= 63:
        raise ValueError("batch hashing supports 1 <= n <= 63")
    msgs = np.asarray(messages, dtype=np.uint64)
    polys = np.asarray(polys, dtype=np.uint64)
    state = np.asarray(inits, dtype=np.uint64).copy()
    taps = polys ^ np.uint64(1 << n)
    top = np.uint64(n - 1)
    one = np.uint64(1)
    acc = np.zeros_like(state)
    for j in range(msgs.shape[-1]):
        bit = msgs[..., j]
        acc ^= state * bit
        fb = np.bitwise_count(state & taps).astype(np.uint64) & one
        state = (state >> one) | (fb << top)
    return acc
