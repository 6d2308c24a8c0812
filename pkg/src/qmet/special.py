r"""Poisson race probability :math:`P[X \le Y]` and the special functions behind it.

For independent ``X ~ Pois(mu1)`` and ``Y ~ Pois(mu2)`` the race probability is
the Skellam CDF at zero.  Forward values come from a truncated double sum,
gradients from the closed-form Marcum-Q derivatives written with the
exponentially scaled Bessel functions ``I_0^e`` and ``I_1^e``.

Everything here accepts scalars or numpy arrays (broadcast elementwise).
Scalar inputs give Python floats back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

__all__ = [
    "PoissonRatePair",
    "RaceGradient",
    "bessel_i_scaled",
    "poisson_race_prob",
    "poisson_race_grad",
    "poisson_race_oracle",
    "skellam_cdf_shifted",
    "marcum_q",
]

# series below this argument, large-argument expansion above (for small orders)
BESSEL_SWITCH = 15.0
# mu2 below this uses the analytic limit of d/dmu2
MU2_LIMIT = 1e-12
DEFAULT_TOL = 1e-14


@dataclass(frozen=True)
class PoissonRatePair:
    mu1: float
    mu2: float

    def __post_init__(self):
        for name in ("mu1", "mu2"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v!r}")


@dataclass(frozen=True)
class RaceGradient:
    d_mu1: float
    d_mu2: float

    def __iter__(self):
        return iter((self.d_mu1, self.d_mu2))


def _scalar_out(x, *like):
    if all(np.ndim(v) == 0 and not isinstance(v, np.ndarray) for v in like):
        return float(x)
    return x


def _check_rates(mu1, mu2):
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if np.isnan(mu1).any() or np.isnan(mu2).any():
        raise ValueError("Poisson rates must not be NaN")
    if not (np.isfinite(mu1).all() and np.isfinite(mu2).all()):
        raise ValueError("Poisson rates must be finite")
    if (mu1 < 0).any() or (mu2 < 0).any():
        raise ValueError("Poisson rates must be non-negative")
    return np.broadcast_arrays(mu1, mu2)


def _unpack(rates, mu2):
    if isinstance(rates, PoissonRatePair):
        return rates.mu1, rates.mu2
    if mu2 is None:
        mu1, mu2 = rates
        return mu1, mu2
    return rates, mu2


# ---------------------------------------------------------------------------
# Bessel I_n^e


def _ive_series(n: int, x: np.ndarray) -> np.ndarray:
    # sum_m (x/2)^(2m+n) / (m! (m+n)!) * e^-x, all terms positive
    half = x / 2.0
    with np.errstate(divide="ignore"):
        log_t0 = xlogy(n, half) - gammaln(n + 1.0) - x
    term = np.exp(log_t0)
    total = term.copy()
    q = half * half
    m = 0
    while True:
        term = term * q / ((m + 1.0) * (m + 1.0 + n))
        total += term
        m += 1
        if not np.any(term > total * 1e-17):
            break
        if m > 5000:  # pragma: no cover - x is capped well below this
            break
    return total


def _ive_asymptotic(n: int, x: np.ndarray) -> np.ndarray:
    # Hankel expansion, truncated at the smallest term
    mu = 4.0 * n * n
    total = np.ones_like(x)
    term = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 200):
        nxt = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        active &= np.abs(nxt) < np.abs(term)
        if not active.any():
            break
        total = np.where(active, total + nxt, total)
        term = np.where(active, nxt, term)
        active &= np.abs(term) > 1e-18 * np.abs(total)
    return total / np.sqrt(2.0 * np.pi * x)


def bessel_i_scaled(order, x):
    """Return ``exp(-x) * I_order(x)`` for integer ``order >= 0`` and ``x >= 0``.

    Ascending series up to ``x = 15`` (or ``2 * order**2`` for larger orders),
    large-argument expansion beyond.  Relative accuracy is ~1e-14.
    """
    if int(order) != order or order < 0:
        raise ValueError(f"order must be a non-negative integer, got {order!r}")
    n = int(order)
    xa = np.asarray(x, dtype=np.float64)
    if np.isnan(xa).any() or (xa < 0).any():
        raise ValueError("bessel_i_scaled requires x >= 0")
    flat = np.atleast_1d(xa).ravel()
    out = np.empty_like(flat)
    switch = max(BESSEL_SWITCH, 2.0 * n * n)
    small = flat <= switch
    if small.any():
        out[small] = _ive_series(n, flat[small])
    if (~small).any():
        out[~small] = _ive_asymptotic(n, flat[~small])
    out = out.reshape(xa.shape)
    return _scalar_out(out, x)


# ---------------------------------------------------------------------------
# Truncated Poisson sums


def _poisson_cutoff(mu_max: float, tol: float) -> int:
    """Smallest K with P[Pois(mu_max) > K] < tol (Chernoff bound, so conservative)."""
    if mu_max <= 0:
        return 1
    k = int(math.ceil(mu_max)) + 1
    log_tol = math.log(tol)
    while True:
        # P[X >= k] <= exp(-mu) (e mu / k)^k for k > mu
        log_bound = -mu_max + k * (1.0 + math.log(mu_max) - math.log(k))
        if log_bound < log_tol:
            return k
        k += max(1, int(math.sqrt(mu_max)))


def _log_pmf(mu: np.ndarray, ks: np.ndarray) -> np.ndarray:
    # log P[Pois(mu) = k], with 0^0 = 1 handled by xlogy
    return xlogy(ks, mu[..., None]) - mu[..., None] - gammaln(ks + 1.0)


def _race_sum(mu1, mu2, shift: int, tol: float) -> np.ndarray:
    """P[X <= Y + shift] as sum_k pmf_X(k) * P[Y >= k - shift]."""
    mu1, mu2 = np.broadcast_arrays(np.asarray(mu1, float), np.asarray(mu2, float))
    if mu1.size == 0:
        return np.zeros(mu1.shape)
    K = _poisson_cutoff(float(mu1.max()), tol)
    ks = np.arange(K + 1, dtype=np.float64)
    pmf_x = np.exp(_log_pmf(mu1, ks))
    # P[Y >= k - shift] for k = 0..K
    thresh = ks - shift
    jmax = int(max(thresh.max(), 1))
    js = np.arange(jmax, dtype=np.float64)
    pmf_y = np.exp(_log_pmf(mu2, js))
    cdf_below = np.concatenate(
        [np.zeros(mu2.shape + (1,)), np.cumsum(pmf_y, axis=-1)], axis=-1
    )  # cdf_below[..., t] = P[Y < t] = P[Y <= t-1]
    t = np.clip(thresh, 0, jmax).astype(int)
    sf = 1.0 - cdf_below[..., t]
    sf = np.where(thresh <= 0, 1.0, sf)
    return np.clip(np.sum(pmf_x * sf, axis=-1), 0.0, 1.0)


def poisson_race_prob(rates, mu2=None, *, tol: float = DEFAULT_TOL):
    """P[X <= Y] for independent ``X ~ Pois(mu1)``, ``Y ~ Pois(mu2)``.

    Accepts a :class:`PoissonRatePair`, a ``(mu1, mu2)`` tuple, or two
    arguments (scalars or arrays).
    """
    mu1, mu2 = _unpack(rates, mu2)
    a, b = _check_rates(mu1, mu2)
    out = _race_sum(a, b, 0, tol)
    # the two degenerate branches are exact
    out = np.where(a == 0, 1.0, out)
    out = np.where((b == 0) & (a > 0), np.exp(-a), out)
    return _scalar_out(out, mu1, mu2)


def poisson_race_grad(rates, mu2=None):
    """Exact partial derivatives of :func:`poisson_race_prob`.

    Returns a :class:`RaceGradient` for scalar input, or a ``(d_mu1, d_mu2)``
    tuple of arrays for array input.
    """
    m1, m2 = _unpack(rates, mu2)
    scalar = np.ndim(m1) == 0 and np.ndim(m2) == 0
    a, b = _check_rates(m1, m2)
    x = 2.0 * np.sqrt(a * b)
    damp = np.exp(-((np.sqrt(a) - np.sqrt(b)) ** 2))
    d1 = -damp * bessel_i_scaled(0, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sqrt(np.where(b > 0, a / b, 0.0))
        d2 = ratio * damp * bessel_i_scaled(1, x)
    # I_1(x) ~ x/2 as x -> 0, giving mu1 * exp(-mu1)
    d2 = np.where(b < MU2_LIMIT, a * np.exp(-a), d2)
    d2 = np.where(a == 0, 0.0, d2)
    if scalar:
        return RaceGradient(float(d1), float(d2))
    return d1, d2


def skellam_cdf_shifted(rates, n: int, mu2=None, *, tol: float = DEFAULT_TOL):
    """P[X <= Y + n] for integer ``n`` (the Skellam(mu1, mu2) CDF at ``n``)."""
    if int(n) != n:
        raise ValueError("n must be an integer")
    mu1, mu2 = _unpack(rates, mu2)
    a, b = _check_rates(mu1, mu2)
    out = _race_sum(a, b, int(n), tol)
    if n >= 0:
        out = np.where(a == 0, 1.0, out)
    return _scalar_out(out, mu1, mu2)


def marcum_q(m: int, a, b, *, tol: float = DEFAULT_TOL):
    """Generalized Marcum Q-function ``Q_m(a, b)`` for integer ``m >= 1``.

    Uses the Poisson-mixture form
    ``Q_m(a, b) = sum_j Pois(j; a^2/2) * P[Pois(b^2/2) <= m - 1 + j]``.
    """
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    m = int(m)
    aa = np.asarray(a, dtype=np.float64)
    bb = np.asarray(b, dtype=np.float64)
    if (aa < 0).any() or (bb < 0).any():
        raise ValueError("marcum_q requires a, b >= 0")
    lam, z = np.broadcast_arrays(aa * aa / 2.0, bb * bb / 2.0)
    J = _poisson_cutoff(float(lam.max()) if lam.size else 0.0, tol)
    js = np.arange(J + 1, dtype=np.float64)
    w = np.exp(_log_pmf(lam, js))
    imax = m + J
    i_s = np.arange(imax, dtype=np.float64)
    cdf = np.cumsum(np.exp(_log_pmf(z, i_s)), axis=-1)  # P[Pois(z) <= i]
    cols = (m - 1 + js).astype(int)
    out = np.clip(np.sum(w * cdf[..., cols], axis=-1), 0.0, 1.0)
    return _scalar_out(out, a, b)


def poisson_race_oracle(rates, mu2=None, tol: float = 1e-12) -> float:
    """Reference value of P[X <= Y] by plain scalar summation.

    Sums ``pmf(mu1, k) * P[Pois(mu2) >= k]`` for ``k = 0..K`` where the
    neglected tail mass of ``Pois(mu1)`` past ``K`` is below ``tol``.  Written
    with scalar ``math`` calls only; used as ground truth in tests.
    """
    if tol > 1e-6:
        raise ValueError("oracle tolerance must be <= 1e-6")
    mu1, mu2 = _unpack(rates, mu2)
    PoissonRatePair(float(mu1), float(mu2))  # validates
    mu1, mu2 = float(mu1), float(mu2)
    if mu1 == 0.0:
        return 1.0
    total = 0.0
    mass = 0.0
    # running P[Y >= k]
    y_pmf = math.exp(-mu2)
    y_sf = 1.0
    k = 0
    while True:
        log_p = k * math.log(mu1) - mu1 - math.lgamma(k + 1)
        p = math.exp(log_p)
        total += p * y_sf
        mass += p
        if k > mu1 and 1.0 - mass < tol:
            break
        y_sf -= y_pmf
        y_pmf = y_pmf * mu2 / (k + 1)
        k += 1
        if k > 100000:  # pragma: no cover
            break
    return min(max(total, 0.0), 1.0)
