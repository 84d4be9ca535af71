"""Cutpoint vectors and the blocked Metropolis-Hastings cutpoint update.

The MH kernel here is shared by the Bayesian ordered probit sampler and the
ordinal sum-of-trees sampler: given current latent means it proposes every
free cutpoint from a sequentially truncated normal and accepts the block as a
whole, with the latent utilities integrated out of the likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

from .stats import ncdf, std_truncnorm


@dataclass(frozen=True)
class CutPoints:
    """Ordered thresholds ``gamma[0] = -inf < gamma[1] < ... < gamma[K] = +inf``.

    ``pinned`` records that ``gamma[1]`` is fixed at 0 (the identification
    used by the Bayesian samplers).
    """

    gamma: np.ndarray
    pinned: bool = False

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 1 or g.size < 3:
            raise ValueError("need at least two categories (K + 1 >= 3 thresholds)")
        if g[0] != -np.inf or g[-1] != np.inf:
            raise ValueError("outer thresholds must be -inf and +inf")
        if not np.all(np.diff(g) > 0):
            raise ValueError(f"cutpoints must be strictly increasing: {g}")
        if self.pinned and g[1] != 0.0:
            raise ValueError("pinned cutpoints require gamma[1] == 0")
        object.__setattr__(self, "gamma", g)

    @classmethod
    def from_interior(cls, interior, pinned: bool = False) -> "CutPoints":
        return cls(np.concatenate([[-np.inf], np.asarray(interior, float), [np.inf]]), pinned)

    @property
    def K(self) -> int:
        return self.gamma.size - 1

    @property
    def interior(self) -> np.ndarray:
        return self.gamma[1:-1]


# ---------------------------------------------------------------------------
# numerically careful log P(lo < Z <= hi) for Z ~ N(0, 1)

@numba.njit(cache=True)
def log_upper_tail(a):
    """log(1 - Phi(a)), accurate far into the right tail."""
    if a < 30.0:
        return math.log(ncdf(-a))
    # asymptotic Mills-ratio expansion
    r = 1.0 / (a * a)
    return -0.5 * a * a - math.log(a) - 0.5 * math.log(2 * math.pi) + math.log(1 - r + 3 * r * r)


@numba.njit(cache=True)
def log_interval_prob(a, b):
    if not b > a:
        return -np.inf
    if b < 0.0:
        a, b = -b, -a
    if a > 0.0:
        la = log_upper_tail(a)
        lb = log_upper_tail(b) if b < np.inf else -np.inf
        if lb == -np.inf:
            return la
        d = lb - la
        if d >= 0.0:
            return -np.inf
        return la + math.log(-math.expm1(d))
    p = ncdf(b) - ncdf(a)
    if p <= 0.0:
        return -np.inf
    return math.log(p)


@numba.njit(cache=True)
def ordinal_loglik(gamma, fits, y):
    """sum_i log(Phi(gamma[y_i] - f_i) - Phi(gamma[y_i - 1] - f_i)); labels are 1..K."""
    total = 0.0
    for i in range(fits.size):
        total += log_interval_prob(gamma[y[i] - 1] - fits[i], gamma[y[i]] - fits[i])
        if total == -np.inf:
            return total
    return total


@numba.njit(cache=True)
def propose_cutpoints(gen, gamma, sigma):
    """Sequential truncated-normal proposal; returns (proposal, log Hastings correction)."""
    K = gamma.size - 1
    prop = gamma.copy()
    for k in range(2, K):
        lo = (prop[k - 1] - gamma[k]) / sigma
        hi = (gamma[k + 1] - gamma[k]) / sigma
        prop[k] = gamma[k] + sigma * std_truncnorm(gen, lo, hi)
    log_corr = 0.0
    for k in range(2, K):
        num = ncdf((gamma[k + 1] - gamma[k]) / sigma) - ncdf((prop[k - 1] - gamma[k]) / sigma)
        den = ncdf((prop[k + 1] - prop[k]) / sigma) - ncdf((gamma[k - 1] - prop[k]) / sigma)
        log_corr += math.log(num) - math.log(den)
    return prop, log_corr


@numba.njit(cache=True)
def cutpoint_mh(gen, gamma, fits, y, sigma):
    """One blocked MH update of the free cutpoints gamma[2..K-1], in place.

    Returns True on acceptance. With K = 2 there is nothing to update and the
    step reports acceptance.
    """
    K = gamma.size - 1
    if K <= 2:
        return True
    prop, log_corr = propose_cutpoints(gen, gamma, sigma)
    log_ar = ordinal_loglik(prop, fits, y) - ordinal_loglik(gamma, fits, y) + log_corr
    if math.log(gen.random()) < log_ar:
        gamma[:] = prop
        return True
    return False


def adapt_sigma(sigma: float, rate: float) -> float:
    """Burn-in step-size rule: widen above 0.5 acceptance, shrink below 0.25."""
    if rate > 0.5:
        return sigma * 1.2
    if rate < 0.25:
        return sigma * 0.8
    return sigma


def initial_cutpoints(y: np.ndarray, K: int) -> tuple[np.ndarray, float]:
    """Pinned starting cutpoints and the latent offset mu0 from label frequencies.

    ``gamma_k = q(F_k) - q(F_1)`` with ``q`` the normal quantile and ``F_k``
    the empirical cumulative frequency, and ``mu0 = q(1 - F_1)``. Empty
    categories get a small positive spacing so the vector stays increasing.
    """
    counts = np.bincount(y, minlength=K + 1)[1:].astype(float)
    n = counts.sum()
    cum = np.cumsum(counts) / n
    cum = np.clip(cum, 0.5 / n, 1 - 0.5 / n)
    q = special.ndtri(cum[:-1])
    gamma = np.empty(K + 1)
    gamma[0], gamma[-1] = -np.inf, np.inf
    gamma[1:K] = q - q[0]
    for k in range(2, K):
        if gamma[k] <= gamma[k - 1]:
            gamma[k] = gamma[k - 1] + 0.1
    mu0 = float(-q[0])
    return gamma, mu0
