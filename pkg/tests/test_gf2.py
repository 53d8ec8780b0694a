import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qecommerce import bits
from qecommerce.gf2 import (PRESET_IRREDUCIBLES, GenerationError, Gf2Poly, berlekamp_massey,
                            clmul, find_sparse_irreducible, gen_irreducible,
                            gen_irreducible_batch, is_irreducible, linear_complexity,
                            lfsr_sequence, minimal_polynomial, poly_divmod, poly_gcd,
                            poly_mul_mod, preset_irreducible, reciprocal)

F8 = Gf2Poly.from_exponents(8, 7, 6, 1, 0)
EXAMPLE_RESULT = Gf2Poly.from_bits("101111011")

polys = st.integers(min_value=0, max_value=(1 << 80) - 1)
nonzero = st.integers(min_value=1, max_value=(1 << 40) - 1)


def test_poly_notation_roundtrip():
    p = Gf2Poly.from_bits("101111011")
    assert p.value == 0b101111011
    assert p.degree == 8
    assert str(p) == "x^8 + x^6 + x^5 + x^4 + x^3 + x + 1"
    assert Gf2Poly.from_hex(p.to_hex()) == p
    assert p.exponents() == [8, 6, 5, 4, 3, 1, 0]


def test_mul_mod_small_cases():
    x = Gf2Poly(0b10)
    assert poly_mul_mod(x, x, Gf2Poly(0b111)) == Gf2Poly(0b11)
    g = Gf2Poly(0b1011011)
    assert poly_mul_mod(Gf2Poly(1), g, F8) == g


def test_mul_mod_against_schoolbook():
    a = Gf2Poly.from_exponents(6, 5, 4, 3, 2)
    assert poly_mul_mod(a, a, F8).value == 0b1110100
    assert oracles.mod(oracles.mul(a.value, a.value), F8.value) == 0b1110100


def test_mul_mod_zero_modulus_rejected():
    with pytest.raises(ValueError):
        poly_mul_mod(Gf2Poly(3), Gf2Poly(3), Gf2Poly(1))


@given(polys, polys)
def test_clmul_matches_schoolbook(a, b):
    assert clmul(a, b) == oracles.mul(a, b)


@given(polys, polys, polys)
def test_clmul_ring_laws(a, b, c):
    assert clmul(a, b) == clmul(b, a)
    assert clmul(a, b ^ c) == clmul(a, b) ^ clmul(a, c)


@given(polys, nonzero)
def test_divmod_identity(a, m):
    q, r = poly_divmod(a, m)
    assert clmul(q, m) ^ r == a
    assert r.bit_length() < m.bit_length()


@given(nonzero, nonzero)
def test_gcd_divides_both(a, b):
    g = poly_gcd(a, b)
    assert poly_divmod(a, g)[1] == 0
    assert poly_divmod(b, g)[1] == 0


@pytest.mark.parametrize("value,expected", [(0b111, True), (0b101, False), (0b11, True),
                                            (EXAMPLE_RESULT.value, True)])
def test_is_irreducible_examples(value, expected):
    assert is_irreducible(Gf2Poly(value)) is expected


def test_is_irreducible_exhaustive_to_degree_10():
    for p in range(2, 1 << 11):
        assert is_irreducible(Gf2Poly(p)) == oracles.irreducible_by_trial_division(p), bin(p)


def test_preset_table_is_irreducible():
    for n, v in PRESET_IRREDUCIBLES.items():
        if n <= 1279:
            assert is_irreducible(Gf2Poly(v)), n
            assert Gf2Poly(v).degree == n


def test_sparse_search_is_lowest_weight():
    p = find_sparse_irreducible(8)
    assert is_irreducible(p)
    assert p == Gf2Poly.from_exponents(8, 4, 3, 1, 0)


def test_preset_n8_is_example_base():
    assert preset_irreducible(8) == F8


def test_berlekamp_massey_worked_example():
    assert berlekamp_massey("1000001010111110") == EXAMPLE_RESULT


def test_berlekamp_massey_constant_and_short():
    assert berlekamp_massey("11") == Gf2Poly(0b11)
    L, conn = linear_complexity("101101")
    assert (L, conn.value) == oracles.shortest_lfsr_bruteforce([1, 0, 1, 1, 0, 1])


@settings(max_examples=150)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=12))
def test_linear_complexity_matches_bruteforce(seq):
    L, conn = linear_complexity(seq)
    assert L == oracles.shortest_lfsr_bruteforce(seq)[0]
    assert np.array_equal(lfsr_sequence(conn, seq[:L], len(seq)), np.array(seq, dtype=np.uint8))


@given(st.integers(1, (1 << 30) - 1))
def test_reciprocal_involution(v):
    p = Gf2Poly(v | 1)
    assert reciprocal(reciprocal(p)) == p


def test_gen_irreducible_seed_example():
    t = time.perf_counter()
    p = gen_irreducible(8, "01111100", F8)
    elapsed = time.perf_counter() - t
    assert p == EXAMPLE_RESULT
    assert elapsed < 0.05


def test_gen_irreducible_degree_two():
    assert gen_irreducible(2, "10") == Gf2Poly(0b111)


def test_gen_irreducible_is_minimal_polynomial_of_inverse():
    f = F8.value
    for seed in range(2, 256, 7):
        p = gen_irreducible(8, seed, F8)
        if oracles.minimal_polynomial_linalg(seed, f).bit_length() - 1 != 8:
            continue  # seed lies in a subfield and was retried
        inv = oracles.inverse_mod(seed, f)
        assert p.value == oracles.minimal_polynomial_linalg(inv, f)


def test_gen_irreducible_random_seeds_pass_trial_division():
    rng = np.random.default_rng(1)
    seeds = rng.integers(1, 256, 1000)
    for s in seeds.tolist():
        p = gen_irreducible(8, s)
        assert p.degree == 8
        assert oracles.irreducible_by_trial_division(p.value)


def test_gen_irreducible_retries_subfield_seed():
    # g = 1 has minimal polynomial x + 1; the retry rule moves it out
    p = gen_irreducible(8, 1, F8)
    assert p.degree == 8 and is_irreducible(p)


def test_gen_irreducible_rejects_bad_inputs():
    with pytest.raises(ValueError):
        gen_irreducible(8, 0)
    with pytest.raises(ValueError):
        gen_irreducible(8, "0111")
    with pytest.raises(ValueError):
        gen_irreducible(8, 3, Gf2Poly(0b111))


def test_generation_error_is_runtime_error():
    assert issubclass(GenerationError, RuntimeError)


def test_minimal_polynomial_annihilates():
    g = Gf2Poly(0b1011011)
    mp = minimal_polynomial(g, F8)
    acc = 0
    power = 1
    for k in range(mp.degree + 1):
        if mp.coeff(k):
            acc ^= power
        power = poly_mul_mod(Gf2Poly(power), g, F8).value
    assert acc == 0


@pytest.mark.parametrize("n", [2, 5, 8, 13, 16])
def test_batch_matches_scalar(n):
    seeds = np.arange(1, min(1 << n, 600))
    batch = gen_irreducible_batch(n, seeds)
    for s, p in zip(seeds.tolist(), batch.tolist()):
        assert p == gen_irreducible(n, s).value


def test_batch_rejects_zero_seed():
    with pytest.raises(ValueError):
        gen_irreducible_batch(8, [0, 1])


def test_seed_bit_order():
    # seed strings are degree-descending
    assert bits.bits_to_int("01111100") == 0b01111100
