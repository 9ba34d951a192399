"""Closed-form sample-complexity quantities.

Inputs are the shortest branch ``f``, the depth ``delta`` (both in coalescent
units), the duplication and loss rates ``lam`` and ``mu``, the species count
``n`` and the failure probability ``eps``. The rates must differ: every
formula here is stated for a non-critical birth-death process.

The chain assembled by :func:`sample_size_bound` is

* ``gamma = 1 - exp(-f)``
* ``sigma_lb``: lower bound on the chance that a family has a copy in every
  species of a quartet
* ``alpha_ub = max(1, exp((lam - mu) delta))``: upper bound on the expected
  number of copies entering any vertex
* ``delta_prime_lb = (2/3) min(gamma, 1/8) sigma^3 / alpha^3``
* ``kstar_req = 8 log(n/eps) / delta_prime^2``
* ``k_req = max(2 kstar / sigma, 8 log(n/eps) / sigma^2)``, never above the
  closed form ``2304 alpha^6 / (sigma^7 gamma^2) log(n/eps)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

CRITICAL_MSG = "lambda == mu is not supported: the bounds assume a non-critical process (mu != lambda)"


class CriticalRatesError(ValueError):
    """Raised for equal duplication and loss rates."""


def _check_rates(lam: float, mu: float) -> None:
    if not (lam >= 0 and mu >= 0) or math.isinf(lam) or math.isinf(mu):
        raise ValueError(f"rates must be finite and nonnegative, got lambda={lam}, mu={mu}")
    if lam == mu:
        raise CriticalRatesError(CRITICAL_MSG)


def gamma(f: float) -> float:
    """Chance that two lineages coalesce within a branch of length ``f``."""
    if not f > 0:
        raise ValueError(f"f must be positive, got {f}")
    return -math.expm1(-f)


def q_func(t: float, lam: float, mu: float) -> float:
    """``lam (1 - e^{-rt}) / (lam - mu e^{-rt})`` with ``r = lam - mu``.

    Written as ``lam (-expm1(-rt)) / (r - mu expm1(-rt))`` so that it stays
    accurate when ``lam`` and ``mu`` are close.
    """
    _check_rates(lam, mu)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    r = lam - mu
    em = math.expm1(-r * t)
    return lam * (-em) / (r - mu * em)


def extinction_prob(t: float, lam: float, mu: float) -> float:
    """Chance that a single copy leaves no descendant after time ``t``."""
    _check_rates(lam, mu)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    r = lam - mu
    em = math.expm1(-r * t)
    # (mu / lam) q(t) with lam cancelled, so lam = 0 is fine
    return mu * (-em) / (r - mu * em)


def sigma_lower_bound(lam: float, mu: float, delta: float) -> float:
    """Lower bound on the chance of a copy in each of four species."""
    _check_rates(lam, mu)
    if not delta > 0:
        raise ValueError(f"depth must be positive, got {delta}")
    if mu > lam:
        return (math.exp(-(mu - lam) * delta) * (1.0 - lam / mu)) ** 4
    return (1.0 - mu / lam) ** 4


def alpha_upper_bound(lam: float, mu: float, delta: float) -> float:
    """Upper bound on the expected number of copies entering a vertex."""
    if not delta > 0:
        raise ValueError(f"depth must be positive, got {delta}")
    return max(1.0, math.exp((lam - mu) * delta))


def delta_prime_lower_bound(gamma: float, sigma: float, alpha: float) -> float:
    """``(2/3) min(gamma, 1/8) sigma^3 / alpha^3``."""
    if not (0 < gamma <= 1 and 0 < sigma <= 1 and alpha >= 1):
        raise ValueError(f"out of range: gamma={gamma}, sigma={sigma}, alpha={alpha}")
    return (2.0 / 3.0) * min(gamma, 0.125) * sigma**3 / alpha**3


def _log_term(n: int, eps: float) -> tuple[float, bool]:
    v = math.log(n / eps)
    if v <= 0:
        return 0.0, True
    return v, False


def kstar_requirement(n: int, eps: float, delta_prime: float) -> float:
    """``8 log(n/eps) / delta_prime^2`` (0 when the log is not positive)."""
    if not delta_prime > 0:
        raise ValueError(f"delta_prime must be positive, got {delta_prime}")
    lg, _ = _log_term(n, eps)
    return 8.0 * lg / delta_prime**2


def closed_form_bound(gamma: float, sigma: float, alpha: float, n: int, eps: float) -> float:
    """``2304 alpha^6 / (sigma^7 gamma^2) log(n/eps)`` (log clamped at 0)."""
    if not (0 < gamma <= 1 and 0 < sigma <= 1 and alpha >= 1):
        raise ValueError(f"out of range: gamma={gamma}, sigma={sigma}, alpha={alpha}")
    lg, _ = _log_term(n, eps)
    return 2304.0 * alpha**6 / (sigma**7 * gamma**2) * lg


@dataclass(frozen=True)
class BoundInputs:
    """Parameters of the sample-size bound.

    Attributes
    ----------
    f : float
        Shortest branch length.
    delta : float
        Depth of the species tree.
    lam, mu : float
        Duplication and loss rates (distinct).
    n : int
        Number of species.
    eps : float
        Failure probability in (0, 1).
    """

    f: float
    delta: float
    lam: float
    mu: float
    n: int
    eps: float

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"f must be positive, got {self.f}")
        if not self.delta >= self.f:
            raise ValueError(f"depth {self.delta} must be at least f={self.f}")
        _check_rates(self.lam, self.mu)
        if self.n < 4:
            raise ValueError(f"need n >= 4, got {self.n}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")


@dataclass(frozen=True)
class BoundOutputs:
    """Every factor of the bound, plus its closed form.

    ``degenerate`` is set when ``log(n/eps) <= 0``; the log term is then
    clamped to 0.
    """

    gamma: float
    sigma_lb: float
    alpha_ub: float
    delta_prime_lb: float
    kstar_req: float
    k_req: float
    k_closed_form: float
    log_term: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def sample_size_bound(inputs: BoundInputs) -> BoundOutputs:
    """Assemble the number of gene trees sufficient for exact recovery."""
    g = gamma(inputs.f)
    s = sigma_lower_bound(inputs.lam, inputs.mu, inputs.delta)
    a = alpha_upper_bound(inputs.lam, inputs.mu, inputs.delta)
    dp = delta_prime_lower_bound(g, s, a)
    lg, degenerate = _log_term(inputs.n, inputs.eps)
    ks = 8.0 * lg / dp**2
    k = max(2.0 * ks / s, 8.0 * lg / s**2)
    closed = closed_form_bound(g, s, a, inputs.n, inputs.eps)
    return BoundOutputs(g, s, a, dp, ks, k, closed, lg, degenerate)


def asymptotic_shape(inputs: BoundInputs, c: float = 1.0, c_prime: float = 1.0) -> float:
    """Asymptotic form of the bound with caller-chosen constants.

    Returns ``c_prime / f^2 * exp(c |mu - lam| delta) / (1 - min(lam/mu, mu/lam))^c * log(n/eps)``.
    The constants are not fixed by theory, so this is only meant for
    plotting trends.
    """
    lg, _ = _log_term(inputs.n, inputs.eps)
    lo, hi = sorted((inputs.lam, inputs.mu))
    ratio = 1.0 - lo / hi
    return c_prime / inputs.f**2 * math.exp(c * abs(inputs.mu - inputs.lam) * inputs.delta) / ratio**c * lg
