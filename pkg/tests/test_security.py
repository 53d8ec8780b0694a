import math
from types import SimpleNamespace

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qecommerce import data
from qecommerce.kgp import replay
from qecommerce.security import (ConvergenceError, InfeasibleError, SecurityBudget, SourceFlaws,
                                 binary_entropy, coin_imbalance, fidelity_imperfect,
                                 forgery_probability, gamma_u, guess_probability, kato_delta,
                                 max_message_bits, min_entropy, optimize_n, phase_error_bounds,
                                 phase_error_from_coin, security_tradeoff)

C1_FLAWS = SourceFlaws(xi=0.0072, delta=0.035, tan_theta=1e-3, psi=math.asin(5.89e-3), mu_tha=1e-7)
# frozen from tests/oracles.py (mpmath, 50 digits)
GAMMA_REF = 0.063813828295281388857
H_C1_REF = 50.669184684735932862
# frozen from oracles.coin_max_zoom at Q = n/N of the 20 dB row
DELTA_C1_ABS_REF = 0.0372748405


@pytest.mark.parametrize("x,h", [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0), (0.25, 0.8112781244591328)])
def test_binary_entropy_values(x, h):
    assert binary_entropy(x) == pytest.approx(h, abs=1e-12)


@given(st.floats(0.0, 1.0))
def test_binary_entropy_symmetric_and_matches_mpmath(x):
    assert binary_entropy(x) == pytest.approx(binary_entropy(1 - x), abs=1e-12)
    assert binary_entropy(x) == pytest.approx(float(oracles.h2(x)), abs=1e-12)


def test_binary_entropy_rejects_out_of_range():
    with pytest.raises(ValueError):
        binary_entropy(1.2)


def test_gamma_u_reference():
    assert gamma_u(1e3, 1e6, 0.05, 1e-10) == pytest.approx(GAMMA_REF, rel=1e-12)


@settings(max_examples=200)
@given(st.integers(1, 10**7), st.integers(1, 10**7), st.floats(1e-4, 0.4999), st.floats(1e-15, 0.5))
def test_gamma_u_nonnegative_and_matches_mpmath(l, k, lam, eps):
    g = gamma_u(l, k, lam, eps)
    assert g >= 0
    ref = oracles.gamma_u(l, k, lam, eps)
    if ref > 0:
        assert g == pytest.approx(float(ref), rel=1e-9)


def test_gamma_u_grows_as_eps_shrinks():
    vals = [gamma_u(1e3, 1e6, 0.05, e) for e in (1e-2, 1e-5, 1e-10, 1e-15)]
    assert vals == sorted(vals)


def test_kato_values():
    assert kato_delta(1e6, 1e-10) == pytest.approx(3393.07, abs=0.01)
    assert kato_delta(1e6, 1.0) == 0.0
    assert kato_delta(4e6, 1e-10) == pytest.approx(2 * kato_delta(1e6, 1e-10))
    assert kato_delta(1e6, 1e-10) == pytest.approx(float(oracles.kato(1e6, 1e-10)), rel=1e-14)


def test_phase_error_from_coin_values():
    assert phase_error_from_coin(0.0, 0.1) == pytest.approx(0.36, abs=1e-12)
    for e in (0.0, 0.01, 0.2):
        assert phase_error_from_coin(e, 0.0) == pytest.approx(e, abs=1e-12)
    assert phase_error_from_coin(0.3, 0.5) == 1.0


@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_phase_error_matches_bisection_oracle(e_b, delta):
    got = phase_error_from_coin(e_b, delta)
    assert got == pytest.approx(float(oracles.phase_error_max(e_b, delta)), abs=1e-9)


@given(st.floats(0.0, 0.3), st.floats(0.0, 0.4), st.floats(0.0, 0.1))
def test_phase_error_monotone_in_delta(e_b, d, step):
    assert phase_error_from_coin(e_b, min(0.5, d + step)) >= phase_error_from_coin(e_b, d) - 1e-15


def test_guess_probability():
    assert guess_probability(0) == 1.0
    assert guess_probability(1) == 0.5
    assert guess_probability(20) == pytest.approx(9.54e-7, rel=1e-3)


def test_pattern_epsilon_relation():
    f = SourceFlaws(psi=5.58e-3)
    expect = 1 - math.exp(7.4e-3 * (2 * math.cos(5.58e-3) - 2))
    assert f.pattern_epsilon(7.4e-3) == pytest.approx(expect, rel=1e-12)
    assert f.pattern_epsilon(7.4e-3) == pytest.approx(2.30e-7, rel=1e-2)


def test_vacuum_limit_overlap_is_one():
    assert abs(fidelity_imperfect(SourceFlaws.ideal(), 1e-12)) == pytest.approx(1.0, abs=1e-9)


def test_full_pattern_correlation_kills_overlap():
    f = SourceFlaws(epsilon_pattern=0.999999999)
    assert abs(fidelity_imperfect(f, 4.2e-3)) < 1e-8


def test_zero_flaws_zero_imbalance():
    assert coin_imbalance(SourceFlaws.ideal(), 4.2e-3, 5e-4) == pytest.approx(0.0, abs=1e-9)


def test_ideal_reference_removes_the_flawless_part():
    # the flawless product itself is below one, so only "ideal" maps it to zero
    absolute = coin_imbalance(SourceFlaws.ideal(), 4.2e-3, 5e-4, reference="absolute")
    assert absolute > 0


def test_coin_imbalance_matches_independent_oracle():
    Q = 5463449 / 1e10
    got = coin_imbalance(C1_FLAWS, 4.2e-3, Q, reference="absolute")
    flaws = dict(xi=0.0072, delta=0.035, tan_theta=1e-3, psi=math.asin(5.89e-3), mu_tha=1e-7)
    m = min(oracles.coin_max_zoom(flaws, 4.2e-3, s) for s in (1, -1))
    assert got == pytest.approx((1 - m) / (2 * Q), rel=1e-7)
    assert got == pytest.approx(DELTA_C1_ABS_REF, rel=1e-7)


def test_coin_imbalance_grid_independent():
    Q = 5463449 / 1e10
    a = coin_imbalance(C1_FLAWS, 4.2e-3, Q, grid=64)
    b = coin_imbalance(C1_FLAWS, 4.2e-3, Q, grid=128)
    assert a == pytest.approx(b, abs=1e-6)


@pytest.mark.parametrize("name,values", [("delta", [0.0, 0.01, 0.03, 0.06]),
                                         ("psi", [0.0, 0.003, 0.006, 0.012]),
                                         ("tan_theta", [0.0, 1e-3, 3e-3, 1e-2])])
def test_coin_imbalance_monotone(name, values):
    out = []
    for v in values:
        f = SourceFlaws(xi=0.0, delta=0.0, tan_theta=0.0, psi=0.0, mu_tha=0.0)
        setattr(f, name, v)
        out.append(coin_imbalance(f, 4.2e-3, 5e-4))
    assert all(b >= a - 1e-12 for a, b in zip(out, out[1:]))


def test_coin_imbalance_input_checks():
    with pytest.raises(ValueError):
        coin_imbalance(C1_FLAWS, 4.2e-3, 0.0)
    with pytest.raises(ValueError):
        coin_imbalance(C1_FLAWS, 4.2e-3, 1e-3, reference="other")


def test_convergence_error_carries_best():
    err = ConvergenceError("stalled", 0.1)
    assert err.best == 0.1


def test_source_flaws_validation_and_json():
    with pytest.raises(ValueError):
        SourceFlaws(xi=-1)
    f = SourceFlaws(0.01, 0.02, 0.003, 0.004)
    assert SourceFlaws.from_json(f.to_json()) == f


def test_min_entropy_limits():
    budget = SecurityBudget()
    assert min_entropy(100, 10**12, 0, 0.0, budget) == pytest.approx(100, rel=1e-6)
    assert min_entropy(100, 10**6, 0, 0.5, budget) == 0.0


def test_min_entropy_reference_value():
    assert min_entropy(1257, 4424989, 59209, 0.28) == pytest.approx(H_C1_REF, rel=1e-10)
    ref = float(oracles.min_entropy(1257, 4424989, 59209, 0.28))
    assert min_entropy(1257, 4424989, 59209, 0.28) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=60)
@given(st.integers(50, 5000), st.floats(0.0, 0.4), st.integers(0, 10**5))
def test_min_entropy_bounded(l, e, leak):
    h = min_entropy(l, 10**7, leak, e)
    assert 0 <= h <= l


def test_saturated_y_errors_give_no_entropy():
    b = phase_error_bounds(10**6, 10**4, 5000, Delta=0.01)
    assert min_entropy(500, 10**6, 0, b.E_p_bar) == 0.0


def test_phase_error_chain_steps():
    b = phase_error_bounds(4424989, 60019, 38, Delta=0.02)
    e_y = (38 + kato_delta(60019, 1e-10)) / 60019
    assert b.E_b_y_star == pytest.approx(e_y, rel=1e-12)
    assert b.E_p_star == pytest.approx(phase_error_from_coin(e_y, 0.02), rel=1e-12)
    assert b.E_p_bar == pytest.approx(b.E_p_star + kato_delta(4424989, 1e-10) / 4424989, rel=1e-12)
    assert phase_error_bounds(10, 10, 0, E_p=0.28).E_p_bar == 0.28
    with pytest.raises(ValueError):
        phase_error_bounds(10, 10, 0)


def _c1():
    return replay(data.detection_table("C1"), 100.0)


def test_optimize_twenty_db_row():
    r = optimize_n(_c1(), 59209, E_p=0.28)
    assert r.SR_per_second == pytest.approx(11.83, rel=0.10)
    assert r.H_n == pytest.approx(H_C1_REF, rel=1e-10)
    assert r.eps_for <= 5e-10
    assert r.eps_tot == max(r.eps_rob, r.eps_rep, r.eps_for)
    assert r.SR_per_run == r.n_x / (3 * r.n_star)
    assert 0 <= r.H_n <= r.n_star
    # n_star is minimal
    assert math.log2(428072) + 1 - min_entropy(r.n_star - 1, r.n_x, 59209, 0.28) > math.log2(5e-10)


def test_optimize_twenty_five_db_row():
    s = replay(data.detection_table("TP2"), 100.0)
    assert optimize_n(s, 18129, E_p=0.373).SR_per_second == pytest.approx(0.82, rel=0.10)


def test_longer_messages_need_longer_keys():
    s = _c1()
    assert optimize_n(s, 59209, E_p=0.28, m=2 * 428072).n_star >= optimize_n(s, 59209, E_p=0.28).n_star


def test_infeasible_when_key_too_short():
    s = SimpleNamespace(n_x=90, n_y=10, m_y=0, duration_s=1.0)
    with pytest.raises(InfeasibleError):
        optimize_n(s, 0, E_p=0.01)


def test_expected_injection_is_stricter():
    s = _c1()
    up = optimize_n(s, 59209, E_p=0.28, inject="upper")
    ex = optimize_n(s, 59209, E_p=0.28, inject="expected")
    assert ex.n_star >= up.n_star


def test_budget_sums():
    b = SecurityBudget()
    assert b.eps_rob == pytest.approx(2 * b.eps_EC + 2 * b.eps_prime)
    with pytest.raises(ValueError):
        SecurityBudget(eps_EC=0.0)


def test_tradeoff_and_message_limit():
    h = 50.0
    assert forgery_probability(h, 428072) == pytest.approx(428072 * 2.0 ** (1 - h))
    sizes = [10**3, 10**6, 10**9]
    t = security_tradeoff(h, sizes)
    assert list(t) == sorted(t)
    m = max_message_bits(h, 5e-10)
    assert forgery_probability(h, m) <= 5e-10 < forgery_probability(h, m + 1)


def test_mpmath_precision_setting_is_high():
    assert mpmath.mp.dps >= 30


def test_gamma_u_tiny_rate_does_not_underflow():
    g = gamma_u(50, 10**7, 5e-324, 1e-10)
    assert math.isfinite(g) and g >= 0
    assert min_entropy(50, 10**7, 0, 5e-324) <= 50
