"""Finite-key security calculus for one-time universal hash signatures.

The chain from detection counts to a signature rate:

1. lift the Y-basis error count to an expectation bound (Kato),
2. turn it into a phase-error bound with the quantum-coin inequality,
3. lift the phase-error count back to an observation bound (Kato),
4. add the sampling-without-replacement correction for an l-bit substring,
5. compute the extractable entropy ``H_n`` of that substring,
6. find the smallest ``n = l`` whose forgery probability
   ``m * 2**(1 - H_n)`` meets the target.

Logarithms are base 2 in entropies and natural inside the fluctuation
bounds.  Bounds are rounded outward by one ulp so that a computed
``H_n`` never exceeds the exact value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

_UP = math.inf
_DOWN = -math.inf


class InfeasibleError(ValueError):
    """No substring length meets the security target."""


class ConvergenceError(RuntimeError):
    """Refinement did not converge; ``best`` holds the conservative value."""

    def __init__(self, msg, best):
        super().__init__(msg)
        self.best = best


def _up(x: float) -> float:
    return math.nextafter(x, _UP)


def _down(x: float) -> float:
    return math.nextafter(x, _DOWN)


# --- elementary bounds --------------------------------------------------

def binary_entropy(x: float) -> float:
    """Shannon entropy of a Bernoulli(x) variable, in bits."""
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"probability out of range: {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def gamma_u(l: float, k: float, lam: float, eps: float) -> float:
    """Upper fluctuation of an error rate when an ``l``-bit sample is
    drawn without replacement from ``l + k`` bits with overall rate ``lam``.
    """
    if l < 1 or k < 1:
        raise ValueError("l and k must be >= 1")
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie strictly between 0 and 1")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    s = l + k
    A = max(l, k)
    # sum of logs: the product underflows for tiny lam or eps
    G = s / (l * k) * (math.log(s) - math.log(2 * math.pi * l * k) - math.log(lam)
                       - math.log1p(-lam) - 2 * math.log(eps))
    if G <= 0:
        return 0.0
    num = (1 - 2 * lam) * A * G / s + math.sqrt(A**2 * G**2 / s**2 + 4 * lam * (1 - lam) * G)
    return max(0.0, num / (2 + 2 * A**2 * G / s**2))


def kato_delta(n: float, eps_F: float) -> float:
    """Deviation term of the Kato concentration inequality."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if not 0.0 < eps_F <= 1.0:
        raise ValueError("eps_F must lie in (0, 1]")
    return math.sqrt(0.5 * n * math.log(1.0 / eps_F))


def _coin_slack(e_b: float, e_p: float) -> float:
    return math.sqrt(e_b * e_p) + math.sqrt((1 - e_b) * (1 - e_p))


def phase_error_from_coin(E_b_y: float, Delta: float) -> float:
    """Largest phase-error rate compatible with a Y-basis error rate and a
    coin imbalance.

    Writing ``E_b_y = sin^2 a`` and ``E_p = sin^2 b`` turns the constraint
    into ``cos(b - a) >= 1 - 2 Delta``, so ``b = a + arccos(1 - 2 Delta)``
    capped at pi/2.
    """
    if not 0.0 <= E_b_y <= 1.0:
        raise ValueError("E_b_y must lie in [0, 1]")
    if not 0.0 <= Delta <= 0.5:
        raise ValueError("Delta must lie in [0, 0.5]")
    a = math.asin(math.sqrt(E_b_y))
    b = a + math.acos(1 - 2 * Delta)
    e_p = 1.0 if b >= math.pi / 2 else math.sin(b) ** 2
    if _coin_slack(E_b_y, e_p) < 1 - 2 * Delta - 1e-12:
        e_p = _phase_error_bisect(E_b_y, Delta)
    return e_p


def _phase_error_bisect(E_b_y: float, Delta: float) -> float:
    # slack is unimodal in E_p with its peak at E_p = E_b_y
    target = 1 - 2 * Delta
    if _coin_slack(E_b_y, 1.0) >= target:
        return 1.0
    lo, hi = E_b_y, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _coin_slack(E_b_y, mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def guess_probability(H_n: float) -> float:
    if H_n < 0:
        raise ValueError("entropy must be >= 0")
    return 2.0 ** (-H_n)


# --- source flaws and the quantum coin ----------------------------------

@dataclass
class SourceFlaws:
    """Imperfections of a phase-encoded weak coherent source.

    ``epsilon_pattern`` may be left as None, in which case it is derived
    from ``psi`` at the pulse intensity in use.
    """

    xi: float = 0.0
    delta: float = 0.0
    tan_theta: float = 0.0
    psi: float = 0.0
    mu_tha: float = 1e-7
    epsilon_pattern: float | None = None

    def __post_init__(self):
        for name in ("xi", "delta", "tan_theta", "psi", "mu_tha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.epsilon_pattern is not None and not 0 <= self.epsilon_pattern < 1:
            raise ValueError("epsilon_pattern must lie in [0, 1)")

    @classmethod
    def ideal(cls) -> "SourceFlaws":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def is_ideal(self) -> bool:
        return (self.xi == self.delta == self.tan_theta == self.psi == self.mu_tha == 0
                and not self.epsilon_pattern)

    def pattern_epsilon(self, alpha_sq: float) -> float:
        if self.epsilon_pattern is not None:
            return self.epsilon_pattern
        return 1.0 - math.exp(alpha_sq * (2 * math.cos(self.psi) - 2))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SourceFlaws":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})


def _overlap(beta: complex, gamma: complex) -> complex:
    """<beta|gamma> for coherent states."""
    return np.exp(-(abs(beta) ** 2 + abs(gamma) ** 2) / 2 + np.conj(beta) * gamma)


def _coin_overlap(flaws: SourceFlaws, alpha_sq: float, eps: float,
                  dx: float = 0.0, dy: float = 0.0) -> complex:
    amp = math.sqrt(alpha_sq)
    e = np.exp(1j * flaws.delta)
    x0, x1 = amp, -e * amp
    y0, y1 = 1j * e * amp, -1j * e * amp
    cos2 = 1.0 / (1.0 + flaws.tan_theta**2)
    pre = 0.25 * (1 - eps) * math.exp(-flaws.mu_tha) * cos2
    px, py = np.exp(-1j * dx), np.exp(1j * dy)
    return pre * (
        (1 - 1j) * _overlap(x0, y0)
        + (1 - 1j) * _overlap(x1, y1) * px * py
        + (1 + 1j) * _overlap(x0, y1) * py
        + (1 + 1j) * _overlap(x1, y0) * px
    )


def fidelity_imperfect(flaws: SourceFlaws, alpha_sq: float, sign: int = +1,
                       delta_x: float = 0.0, delta_y: float = 0.0) -> complex:
    """Overlap of the X- and Y-basis coin states of a flawed source.

    The actual intensity is ``alpha_sq * (1 + sign * xi)``.  ``delta_x`` and
    ``delta_y`` are relative phases of the bit-1 branch of each coin.
    """
    if alpha_sq <= 0:
        raise ValueError("alpha_sq must be > 0")
    actual = alpha_sq * (1 + sign * flaws.xi)
    return complex(_coin_overlap(flaws, actual, flaws.pattern_epsilon(alpha_sq), delta_x, delta_y))


def _max_coin_product(flaws: SourceFlaws, alpha_sq: float, sign: int, grid: int) -> tuple[float, bool]:
    """``max |<Y,dy|X,dx>| * |<Y|X>|``; the phase in front is maximised
    in closed form.  Returns (value, refined)."""
    eps = flaws.pattern_epsilon(alpha_sq)
    actual = alpha_sq * (1 + sign * flaws.xi)
    base = abs(_coin_overlap(flaws, actual, eps))
    t = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
    dx, dy = np.meshgrid(t, t, indexing="ij")
    vals = np.abs(_coin_overlap(flaws, actual, eps, dx, dy))
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best_grid = float(vals[i, j])

    res = optimize.minimize(
        lambda v: -abs(_coin_overlap(flaws, actual, eps, v[0], v[1])),
        x0=[t[i], t[j]], method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000},
    )
    best = max(best_grid, -float(res.fun))
    return best * base, bool(res.success)


def coin_imbalance(flaws: SourceFlaws, alpha_sq: float, Q: float, grid: int = 64,
                   reference: str = "ideal", strict: bool = False) -> float:
    """Coin imbalance ``Delta`` from the overlap of the basis coin states.

    ``reference="absolute"`` returns ``(1 - M) / (2Q)`` with ``M`` the
    maximised overlap product.  ``reference="ideal"`` divides ``M`` by the
    same product for a flawless source at the same intensity, so only
    source flaws contribute.  The worse of the two intensity extremes
    ``(1 +/- xi)`` is used.
    """
    if not 0.0 < Q <= 1.0:
        raise ValueError("Q must lie in (0, 1]")
    if reference not in ("ideal", "absolute"):
        raise ValueError("reference must be 'ideal' or 'absolute'")
    worst = math.inf
    stalled = False
    for sign in (+1, -1) if flaws.xi else (+1,):
        m, ok = _max_coin_product(flaws, alpha_sq, sign, grid)
        stalled |= not ok
        worst = min(worst, m)
    if reference == "ideal":
        if flaws.is_ideal():
            return 0.0
        ideal, _ = _max_coin_product(SourceFlaws.ideal(), alpha_sq, +1, grid)
        worst = worst / ideal
    delta = max(0.0, (1.0 - worst) / (2 * Q))
    delta = min(delta, 0.5)
    if stalled and strict:
        raise ConvergenceError("overlap refinement stalled", delta)
    return delta


# --- budget and entropy -------------------------------------------------

@dataclass(frozen=True)
class SecurityBudget:
    eps_EC: float = 1e-10
    eps_bar: float = 1e-10
    eps_F: float = 1e-10
    eps_prime: float = 1e-10
    eps_tot_target: float = 5e-10

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not 0.0 < v < 1.0:
                raise ValueError(f"{k} must lie in (0, 1)")

    @property
    def eps_rob(self) -> float:
        return 2 * self.eps_EC + 2 * self.eps_prime

    @property
    def eps_rep(self) -> float:
        return 2 * self.eps_prime


@dataclass(frozen=True)
class PhaseErrorBounds:
    E_b_y_star: float | None
    E_p_star: float | None
    E_p_bar: float


INJECT_MODES = ("upper", "expected")


def phase_error_bounds(n_x: int, n_y: int, m_y: float, Delta: float | None = None,
                       budget: SecurityBudget | None = None, E_p: float | None = None,
                       inject: str = "upper") -> PhaseErrorBounds:
    """Upper bound on the X-basis phase-error rate.

    Either ``Delta`` drives the full chain, or a measured ``E_p`` is
    injected: ``inject="upper"`` takes it as the final bound,
    ``inject="expected"`` as the expectation bound before the last Kato
    lift.
    """
    budget = budget or SecurityBudget()
    if n_x <= 0:
        raise ValueError("n_x must be > 0")
    if E_p is not None:
        if inject not in INJECT_MODES:
            raise ValueError(f"inject must be one of {INJECT_MODES}")
        if inject == "upper":
            return PhaseErrorBounds(None, None, float(E_p))
        e_y_star, e_p_star = None, float(E_p)
    else:
        if Delta is None:
            raise ValueError("need Delta or E_p")
        if n_y <= 0:
            raise ValueError("n_y must be > 0")
        e_y_star = min(1.0, _up((m_y + kato_delta(n_y, budget.eps_F)) / n_y))
        e_p_star = phase_error_from_coin(e_y_star, Delta)
    m_p_bar = n_x * e_p_star + kato_delta(n_x, budget.eps_F)
    return PhaseErrorBounds(e_y_star, e_p_star, min(1.0, _up(m_p_bar / n_x)))


def min_entropy(l: int, n_x: int, leak_EC: float, E_p_bar: float,
                budget: SecurityBudget | None = None) -> float:
    """Extractable entropy of an ``l``-bit substring of the X-basis key."""
    budget = budget or SecurityBudget()
    if not 1 <= l <= n_x:
        raise ValueError("need 1 <= l <= n_x")
    if E_p_bar >= 0.5:
        return 0.0
    k = n_x - l
    g = gamma_u(l, k, E_p_bar, budget.eps_bar) if k >= 1 and E_p_bar > 0 else 0.0
    e_l = _up(E_p_bar + g)
    if e_l >= 0.5:
        return 0.0
    per_bit = _down(1.0 - binary_entropy(e_l))
    per_bit = _down(per_bit - leak_EC / n_x)
    per_bit = _down(per_bit - math.log2(2 / budget.eps_EC) / n_x)
    return max(0.0, _down(l * per_bit))


def forgery_log2(H_n: float, m: int) -> float:
    """log2 of ``m * 2**(1 - H_n)``."""
    return math.log2(m) + 1.0 - H_n


def forgery_probability(H_n: float, m: int) -> float:
    return min(1.0, 2.0 ** forgery_log2(H_n, m))


def max_message_bits(H_n: float, eps_target: float) -> int:
    """Longest message that keeps the forgery probability within target."""
    return int(math.floor(eps_target * 2.0 ** (H_n - 1.0)))


@dataclass
class SecurityResult:
    H_n: float
    n_star: int
    SR_per_run: float
    SR_per_second: float
    eps_rob: float
    eps_rep: float
    eps_for: float
    eps_tot: float
    n_x: int
    m: int
    leak_EC: float
    bounds: PhaseErrorBounds
    Delta: float | None = None
    E_p_bar_l: float = 0.0
    search: dict = field(default_factory=dict)

    @property
    def signatures_per_run(self) -> int:
        return self.n_x // (3 * self.n_star)

    def to_json(self) -> dict:
        return {
            "n_x": self.n_x, "m": self.m, "leak_EC": self.leak_EC, "Delta": self.Delta,
            "E_b_y_star": self.bounds.E_b_y_star, "E_p_star": self.bounds.E_p_star,
            "E_p_bar": self.bounds.E_p_bar, "E_p_bar_l": self.E_p_bar_l,
            "H_n": self.H_n, "n_star": self.n_star,
            "eps_rob": self.eps_rob, "eps_rep": self.eps_rep,
            "eps_for": self.eps_for, "eps_tot": self.eps_tot,
            "SR_per_run": self.SR_per_run, "SR_per_second": self.SR_per_second,
            "search": self.search,
        }


def _eps_for_at(l, n_x, leak, e_bar, budget, m):
    return forgery_log2(min_entropy(l, n_x, leak, e_bar, budget), m)


def optimize_n(summary, leak_EC: float, budget: SecurityBudget | None = None, m: int = 428072,
               Delta: float | None = None, E_p: float | None = None, inject: str = "upper",
               duration_s: float | None = None) -> SecurityResult:
    """Smallest substring length meeting the forgery target, and the rate.

    ``summary`` needs ``n_x``, ``n_y``, ``m_y`` and ``duration_s``.
    """
    budget = budget or SecurityBudget()
    if m < 1:
        raise ValueError("m must be >= 1")
    n_x = int(summary.n_x)
    duration = float(summary.duration_s if duration_s is None else duration_s)
    if duration <= 0:
        raise ValueError("duration must be > 0")
    bounds = phase_error_bounds(n_x, int(summary.n_y), summary.m_y, Delta, budget, E_p, inject)
    log_target = math.log2(budget.eps_tot_target)
    upper = n_x // 3
    if upper < 1:
        raise InfeasibleError("fewer than 3 sifted bits")

    def ok(l):
        return _eps_for_at(l, n_x, leak_EC, bounds.E_p_bar, budget, m) <= log_target

    # exponential bracket
    probes = []
    hi = 1
    while True:
        probes.append((hi, _eps_for_at(hi, n_x, leak_EC, bounds.E_p_bar, budget, m)))
        if probes[-1][1] <= log_target or hi >= upper:
            break
        hi = min(upper, hi * 2)
    if probes[-1][1] > log_target:
        raise InfeasibleError(f"no n <= {upper} reaches eps_for <= {budget.eps_tot_target:g}")
    lo = probes[-2][0] if len(probes) > 1 else 0
    vals = [v for _, v in probes]
    monotone = all(b <= a for a, b in zip(vals, vals[1:]))

    if monotone:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
        n_star, method = hi, "bisection"
    else:
        n_star = next(l for l in range(1, hi + 1) if ok(l))
        method = "linear"

    H = min_entropy(n_star, n_x, leak_EC, bounds.E_p_bar, budget)
    k = n_x - n_star
    g = gamma_u(n_star, k, bounds.E_p_bar, budget.eps_bar) if k >= 1 and 0 < bounds.E_p_bar < 1 else 0.0
    eps_for = forgery_probability(H, m)
    sr = n_x / (3 * n_star)
    return SecurityResult(
        H_n=H, n_star=n_star, SR_per_run=sr, SR_per_second=sr / duration,
        eps_rob=budget.eps_rob, eps_rep=budget.eps_rep, eps_for=eps_for,
        eps_tot=max(budget.eps_rob, budget.eps_rep, eps_for),
        n_x=n_x, m=m, leak_EC=leak_EC, bounds=bounds, Delta=Delta,
        E_p_bar_l=bounds.E_p_bar + g,
        search={"method": method, "probes": len(probes)},
    )


def security_tradeoff(H_n: float, message_bits) -> np.ndarray:
    """Forgery probability for each message length at fixed entropy."""
    return np.array([forgery_probability(H_n, int(m)) for m in message_bits])
