"""Polynomials over GF(2), irreducibility testing and random irreducible
polynomial generation.

A polynomial is packed into a Python int: bit ``k`` of the int is the
coefficient of ``x**k``.  Read most-significant bit first, the binary
expansion is therefore the degree-descending coefficient string, e.g.
``x^8 + x^7 + x^6 + x + 1`` <-> ``0b111000011`` <-> ``"111000011"``.

Random irreducible polynomials are produced with the generating
algorithm: fix an irreducible ``f`` of degree ``n``, map a random seed to
an element ``g`` of GF(2^n) = GF(2)[x]/f, run Berlekamp-Massey on the
constant terms of ``g^0, g^1, ..., g^(2n-1) mod f`` and return the
connection polynomial it finds (the minimal polynomial of ``g^-1``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import bits as _bits


class GenerationError(RuntimeError):
    """The retry budget of :func:`gen_irreducible` was exhausted."""


@dataclass(frozen=True, order=True)
class Gf2Poly:
    """Immutable polynomial over GF(2), packed into an int."""

    value: int = 0

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("polynomial value must be non-negative")

    @classmethod
    def from_bits(cls, bits) -> "Gf2Poly":
        """Build from a degree-descending bit string such as ``"101111011"``."""
        return cls(_bits.bits_to_int(bits))

    @classmethod
    def from_hex(cls, text: str) -> "Gf2Poly":
        return cls(int(text, 16))

    @classmethod
    def from_exponents(cls, *exps: int) -> "Gf2Poly":
        v = 0
        for e in exps:
            v ^= 1 << e
        return cls(v)

    @property
    def degree(self) -> int:
        """Degree; -1 for the zero polynomial."""
        return self.value.bit_length() - 1

    @property
    def is_zero(self) -> bool:
        return self.value == 0

    def to_bits(self) -> str:
        return format(self.value, "b") if self.value else "0"

    def to_hex(self) -> str:
        return format(self.value, "x")

    def exponents(self) -> list[int]:
        return [k for k in range(self.degree, -1, -1) if self.value >> k & 1]

    def coeff(self, k: int) -> int:
        return self.value >> k & 1

    def __add__(self, other):
        return Gf2Poly(self.value ^ _val(other))

    __sub__ = __add__
    __xor__ = __add__

    def __mul__(self, other):
        return Gf2Poly(clmul(self.value, _val(other)))

    def __mod__(self, other):
        return Gf2Poly(poly_mod(self.value, _val(other)))

    def __floordiv__(self, other):
        return Gf2Poly(poly_divmod(self.value, _val(other))[0])

    def __call__(self, x: int) -> int:
        """Evaluate at x in GF(2)."""
        if x & 1:
            return self.value.bit_count() & 1
        return self.value & 1

    def __str__(self):
        if not self.value:
            return "0"
        terms = []
        for k in self.exponents():
            terms.append("1" if k == 0 else "x" if k == 1 else f"x^{k}")
        return " + ".join(terms)


def _val(p) -> int:
    return p.value if isinstance(p, Gf2Poly) else int(p)


# --- packed-int kernels -------------------------------------------------

_SPREAD = np.zeros(256, dtype=">u2")
for _i in range(256):
    _SPREAD[_i] = sum(((_i >> k) & 1) << (2 * k) for k in range(8))
del _i


def clmul(a: int, b: int) -> int:
    """Carry-less product of two packed polynomials."""
    if a.bit_count() < b.bit_count():
        a, b = b, a
    if b.bit_count() <= 16:
        c = 0
        while b:
            low = b & -b
            c ^= a << (low.bit_length() - 1)
            b ^= low
        return c
    # 4-bit window over b
    table = [0] * 16
    for k in range(1, 16):
        table[k] = table[k & (k - 1)] ^ (a << ((k & -k).bit_length() - 1))
    c = 0
    for shift in range((b.bit_length() + 3) // 4 * 4 - 4, -1, -4):
        c = (c << 4) ^ table[(b >> shift) & 15]
    return c


def square(a: int) -> int:
    """Square of a packed polynomial (bit spreading)."""
    if a < 256:
        return int(_SPREAD[a])
    raw = np.frombuffer(a.to_bytes((a.bit_length() + 7) // 8, "big"), dtype=np.uint8)
    return int.from_bytes(_SPREAD[raw].tobytes(), "big")


def poly_divmod(a: int, m: int) -> tuple[int, int]:
    if m == 0:
        raise ZeroDivisionError("division by the zero polynomial")
    n = m.bit_length() - 1
    q = 0
    while True:
        d = a.bit_length() - 1
        if d < n:
            return q, a
        q ^= 1 << (d - n)
        a ^= m << (d - n)


def poly_mod(a: int, m: int) -> int:
    if m == 0:
        raise ZeroDivisionError("division by the zero polynomial")
    n = m.bit_length() - 1
    if a.bit_length() <= n:
        return a
    tail = m ^ (1 << n)
    if tail.bit_count() <= 16:
        # sparse modulus: fold the high part through x^n = tail; each fold
        # drops at least n - deg(tail) degrees
        mask = (1 << n) - 1
        while a.bit_length() > n:
            a = (a & mask) ^ clmul(a >> n, tail)
        return a
    while True:
        d = a.bit_length() - 1
        if d < n:
            return a
        a ^= m << (d - n)


def poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, poly_mod(a, b)
    return a


def _prime_factors(n: int) -> list[int]:
    out, d = [], 2
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


# --- public operations --------------------------------------------------

def poly_mul_mod(a: Gf2Poly, b: Gf2Poly, m: Gf2Poly) -> Gf2Poly:
    """Return ``a*b mod m`` over GF(2)."""
    m = _val(m)
    if m.bit_length() < 2:
        raise ValueError("modulus must have degree >= 1")
    return Gf2Poly(poly_mod(clmul(poly_mod(_val(a), m), poly_mod(_val(b), m)), m))


def is_irreducible(p: Gf2Poly) -> bool:
    """Rabin's test: ``x^(2^n) = x mod p`` and ``gcd(x^(2^(n/d)) - x, p) = 1``
    for every prime ``d | n``.  Powers are built by repeated squaring."""
    pv = _val(p)
    n = pv.bit_length() - 1
    if n < 1:
        raise ValueError("irreducibility is defined for degree >= 1")
    x = poly_mod(2, pv)
    wanted = {n // d for d in _prime_factors(n)}
    powers = {}
    t = x
    for k in range(1, n + 1):
        t = poly_mod(square(t), pv)
        if k in wanted:
            powers[k] = t
    if t != x:
        return False
    return all(poly_gcd(pv, powers[k] ^ x) == 1 for k in wanted)


def linear_complexity(seq) -> tuple[int, Gf2Poly]:
    """Berlekamp-Massey over GF(2).

    Returns ``(L, C)`` where ``L`` is the length of the shortest LFSR
    producing ``seq`` and ``C(x) = 1 + c_1 x + ... + c_L x^L`` its
    connection polynomial: ``s_i = c_1 s_{i-1} + ... + c_L s_{i-L}``.
    """
    s = _bits.as_bits(seq)
    conn, prev = 1, 1
    L, m = 0, -1
    window = 0
    for N, bit in enumerate(s.tolist()):
        # bit j of window is s_{N-j}, aligned with c_j
        window = (window << 1) | bit
        if (conn & window).bit_count() & 1:
            saved = conn
            conn ^= prev << (N - m)
            if 2 * L <= N:
                L, prev, m = N + 1 - L, saved, N
    return L, Gf2Poly(conn)


def berlekamp_massey(seq) -> Gf2Poly:
    """Connection polynomial of the shortest LFSR generating ``seq``.

    For a sequence ``a_i = (g^i mod f)(0)`` the result is the minimal
    polynomial of ``g^-1``; :func:`reciprocal` of it annihilates ``g``.
    An all-zero sequence gives the degenerate polynomial ``1``.
    """
    return linear_complexity(seq)[1]


def reciprocal(p: Gf2Poly, degree: int | None = None) -> Gf2Poly:
    """``x^d p(1/x)`` with ``d = deg p`` unless given."""
    d = p.degree if degree is None else degree
    if d < 0:
        return Gf2Poly(0)
    return Gf2Poly(int(format(p.value, "0{}b".format(d + 1))[::-1], 2))


def lfsr_sequence(conn: Gf2Poly, init, length: int) -> np.ndarray:
    """Run the LFSR with connection polynomial ``conn`` from ``init``.

    ``init`` supplies the first ``len(init)`` terms (the register length);
    later terms follow ``s_i = sum_j c_j s_{i-j}``.
    """
    out = list(_bits.as_bits(init).tolist())
    L = len(out)
    taps = [j for j in range(1, L + 1) if conn.value >> j & 1]
    while len(out) < length:
        i = len(out)
        out.append(sum(out[i - j] for j in taps) & 1)
    return np.array(out[:length], dtype=np.uint8)


def _exps(*exps: int) -> int:
    return sum(1 << e for e in exps)


# Base irreducibles f(x) for the generating algorithm.  n=8 is
# x^8+x^7+x^6+x+1; the others are what find_sparse_irreducible returns
# (lowest-weight, then lexicographically smallest), frozen so that start-up
# does not pay for the search.  Degrees beyond the powers of two are the
# substring lengths chosen by the optimiser for the bundled datasets.
PRESET_IRREDUCIBLES: dict[int, int] = {
    2: _exps(2, 1, 0),
    4: _exps(4, 1, 0),
    8: _exps(8, 7, 6, 1, 0),
    16: _exps(16, 5, 3, 1, 0),
    32: _exps(32, 7, 3, 2, 0),
    64: _exps(64, 4, 3, 1, 0),
    128: _exps(128, 7, 2, 1, 0),
    256: _exps(256, 10, 5, 2, 0),
    512: _exps(512, 8, 5, 2, 0),
    1024: _exps(1024, 19, 6, 1, 0),
    775: _exps(775, 93, 0),
    781: _exps(781, 17, 16, 2, 0),
    1257: _exps(1257, 289, 0),
    1279: _exps(1279, 216, 0),
    1899: _exps(1899, 13, 6, 1, 0),
    1971: _exps(1971, 20, 5, 4, 0),
    5684: _exps(5684, 87, 0),
}


def _has_small_factor(pv: int, limit: int) -> bool:
    """True if ``pv`` has an irreducible factor of degree <= limit (Ben-Or
    prefix); cheap rejection before the full test."""
    n = pv.bit_length() - 1
    x = poly_mod(2, pv)
    t = x
    for i in range(1, min(limit, n // 2) + 1):
        t = poly_mod(square(t), pv)
        if poly_gcd(pv, t ^ x) != 1:
            return True
    return False


@functools.lru_cache(maxsize=None)
def find_sparse_irreducible(n: int) -> Gf2Poly:
    """First irreducible trinomial ``x^n+x^k+1`` (smallest k), else the first
    pentanomial ``x^n+x^a+x^b+x^c+1`` in lexicographic (a, b, c) order."""
    if n < 1:
        raise ValueError("degree must be >= 1")
    if n == 1:
        return Gf2Poly(0b11)
    top = (1 << n) | 1

    def ok(v):
        return not _has_small_factor(v, 16) and is_irreducible(Gf2Poly(v))

    # x^n+x^k+1 and x^n+x^(n-k)+1 are reciprocal, so k <= n/2 suffices
    for k in range(1, n // 2 + 1):
        if ok(top | 1 << k):
            return Gf2Poly(top | 1 << k)
    for a in range(3, n):
        for b in range(2, a):
            for c in range(1, b):
                if ok(top | 1 << a | 1 << b | 1 << c):
                    return Gf2Poly(top | 1 << a | 1 << b | 1 << c)
    raise AssertionError(f"no sparse irreducible of degree {n}")  # pragma: no cover


def preset_irreducible(n: int) -> Gf2Poly:
    """Base polynomial ``f`` of degree ``n``."""
    if n in PRESET_IRREDUCIBLES:
        return Gf2Poly(PRESET_IRREDUCIBLES[n])
    return find_sparse_irreducible(n)


def _seed_int(seed, n: int) -> int:
    if isinstance(seed, int):
        v = seed
    else:
        s = _bits.as_bits(seed)
        if s.size != n:
            raise ValueError(f"seed must have {n} bits, got {s.size}")
        v = _bits.bits_to_int(s)
    if v >> n:
        raise ValueError(f"seed does not fit in {n} bits")
    if v == 0:
        raise ValueError("seed must not be all-zero")
    return v


def _constant_terms(g: int, f: int, count: int) -> np.ndarray:
    """``[ (g^i mod f)(0) for i in range(count) ]``."""
    n = f.bit_length() - 1
    # 8-bit window table for multiplication by the fixed element g
    table = [0] * 256
    for k in range(1, 256):
        table[k] = table[k & (k - 1)] ^ (g << ((k & -k).bit_length() - 1))
    out = np.empty(count, dtype=np.uint8)
    cur = 1
    for i in range(count):
        out[i] = cur & 1
        prod = 0
        for shift in range((cur.bit_length() + 7) // 8 * 8 - 8, -1, -8):
            prod = (prod << 8) ^ table[(cur >> shift) & 255]
        cur = poly_mod(prod, f)
    return out


def minimal_polynomial(g: Gf2Poly, f: Gf2Poly) -> Gf2Poly:
    """Minimal polynomial of ``g`` in GF(2)[x]/f."""
    fv = _val(f)
    n = fv.bit_length() - 1
    L, conn = linear_complexity(_constant_terms(poly_mod(_val(g), fv), fv, 2 * n))
    return reciprocal(conn, L)


RETRY_BUDGET = 64


def gen_irreducible(n: int, seed, f: Gf2Poly | None = None) -> Gf2Poly:
    """Random degree-``n`` irreducible polynomial determined by ``seed``.

    The result is the Berlekamp-Massey connection polynomial of the
    constant-term sequence of the powers of ``g``, i.e. the minimal
    polynomial of ``g^-1``; it is irreducible of degree ``n`` whenever
    ``g`` lies in no proper subfield of GF(2^n).

    ``seed`` holds the degree-descending coefficients of ``g`` (an n-bit
    string, array or int).  When the result comes out shorter than ``n``,
    ``g`` is replaced by ``x*g + 1 mod f`` and the computation repeated, at
    most ``RETRY_BUDGET`` times.
    """
    fpoly = preset_irreducible(n) if f is None else Gf2Poly(_val(f))
    if fpoly.degree != n:
        raise ValueError(f"base polynomial has degree {fpoly.degree}, expected {n}")
    fv = fpoly.value
    g = poly_mod(_seed_int(seed, n), fv)
    for _ in range(RETRY_BUDGET + 1):
        h = berlekamp_massey(_constant_terms(g, fv, 2 * n))
        if h.degree == n:
            return h
        g = poly_mod((g << 1) ^ 1, fv)
    raise GenerationError(f"no degree-{n} minimal polynomial after {RETRY_BUDGET} retries")


def gen_irreducible_batch(n: int, seeds, f: Gf2Poly | None = None) -> np.ndarray:
    """:func:`gen_irreducible` for many integer seeds at once (n <= 31).

    Returns the packed polynomials as ``uint64``.  Seeds that need the
    retry rule fall back to the scalar routine.
    """
    if not 1 <= n <= 31:
        raise ValueError("batch generation supports 1 <= n <= 31")
    fv = (preset_irreducible(n) if f is None else Gf2Poly(_val(f))).value
    if fv.bit_length() - 1 != n:
        raise ValueError("base polynomial degree does not match n")
    seeds = np.asarray(seeds, dtype=np.uint64)
    if seeds.size and (int(seeds.min()) == 0 or int(seeds.max()) >> n):
        raise ValueError(f"seeds must be non-zero and fit in {n} bits")
    one, top, f64 = np.uint64(1), np.uint64(1 << n), np.uint64(fv)

    g = seeds.copy()
    cur = np.ones_like(g)
    seq = np.empty((2 * n, g.size), dtype=np.uint64)
    for i in range(2 * n):
        seq[i] = cur & one
        acc = np.zeros_like(g)
        a = cur
        for bit in range(n):
            acc ^= a * ((g >> np.uint64(bit)) & one)
            a = a << one
            a ^= f64 * ((a & top) >> np.uint64(n))
        cur = acc

    # Berlekamp-Massey, one lane per seed; bit j of ``win`` is s_{N-j}
    C = np.ones_like(g)
    B = np.ones_like(g)
    L = np.zeros(g.size, dtype=np.int64)
    m = np.ones(g.size, dtype=np.int64)
    win = np.zeros_like(g)
    for N in range(2 * n):
        win = (win << one) | seq[N]
        d = (np.bitwise_count(C & win) & 1).astype(bool)
        T = C
        C = np.where(d, C ^ (B << m.astype(np.uint64)), C)
        grow = d & (2 * L <= N)
        B = np.where(grow, T, B)
        L = np.where(grow, N + 1 - L, L)
        m = np.where(grow, 1, m + 1)

    short = np.flatnonzero((C >> np.uint64(n)) != one)
    for i in short.tolist():
        C[i] = gen_irreducible(n, int(seeds[i]), Gf2Poly(fv)).value
    return C
