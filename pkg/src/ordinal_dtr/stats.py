"""Seeded random streams and the scalar probability kernels.

Everything stochastic in the package draws from a :class:`SeededRng`, which
wraps a :class:`numpy.random.Generator` keyed by ``(seed, stream_id)``. The
underlying generator object is passed straight into the numba kernels below,
so jitted samplers and Python code share one reproducible draw sequence.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)

# right-tail threshold (in standard deviations) beyond which inverse-CDF
# sampling is replaced by rejection sampling
TAIL_SWITCH = 3.0


class SeededRng:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Distinct stream ids give independent streams (they are distinct spawn
    keys of one :class:`numpy.random.SeedSequence`), so replications can run
    in any order or in parallel without changing their draws.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, *parts) -> "SeededRng":
        """Independent stream derived from this one's seed and ``parts``."""
        return SeededRng(self.seed, derive_stream(self.stream_id, *parts))

    # thin delegation, enough for the call sites in this package
    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def derive_stream(*parts) -> int:
    """Hash an arbitrary tuple of labels to a 64-bit stream id."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Simplex:
    """Probability vector over K ordered categories."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("simplex must be a nonempty vector")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"simplex entries must lie in [0, 1], got {p}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"simplex entries must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, k):
        return self.probs[k]


# ---------------------------------------------------------------------------
# scalar kernels

@numba.njit(cache=True)
def ncdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@numba.njit(cache=True)
def npdf(x):
    return math.exp(-0.5 * x * x) / SQRT2PI


_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


@numba.njit(cache=True)
def nquantile(p):
    # Acklam's rational approximation followed by one Halley step
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    e = ncdf(x) - p
    u = e * SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@numba.njit(cache=True)
def _tail_draw(gen, a, b):
    """Standard normal restricted to (a, b] with a >= TAIL_SWITCH."""
    if b - a < 1.0 / a:
        while True:
            z = a + (b - a) * gen.random()
            if z > a and gen.random() <= math.exp(0.5 * (a * a - z * z)):
                return z
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + gen.exponential(1.0 / alpha)
        if z <= a or z > b:
            continue
        if gen.random() <= math.exp(-0.5 * (z - alpha) ** 2):
            return z


@numba.njit(cache=True)
def std_truncnorm(gen, a, b):
    """Standard normal restricted to (a, b]."""
    if a >= TAIL_SWITCH:
        return _tail_draw(gen, a, b)
    if b <= -TAIL_SWITCH:
        while True:
            z = -_tail_draw(gen, -b, -a)
            if z > a:
                return z
    flip = a > 0.0
    if flip:
        lo, hi = -b, -a
    else:
        lo, hi = a, b
    plo = ncdf(lo)
    phi = ncdf(hi)
    while True:
        z = nquantile(plo + (phi - plo) * gen.random())
        if flip:
            z = -z
        if a < z <= b:
            return z


@numba.njit(cache=True)
def truncnorm(gen, mean, lo, hi):
    return mean + std_truncnorm(gen, lo - mean, hi - mean)


@numba.njit(cache=True)
def truncnorm_fill(gen, means, lo, hi, out):
    for i in range(means.size):
        m = means[i]
        out[i] = m + std_truncnorm(gen, lo[i] - m, hi[i] - m)


# ---------------------------------------------------------------------------
# public scalar API

def normal_cdf(x: float) -> float:
    """Standard normal CDF; saturates at 0 and 1."""
    return float(special.ndtr(x))


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile needs p in (0, 1), got {p!r}")
    return float(special.ndtri(p))


def expit(x: float) -> float:
    return float(special.expit(x))


def sample_truncated_normal(rng: SeededRng, mean: float, lo: float, hi: float) -> float:
    """Draw from N(mean, 1) restricted to the half-open interval (lo, hi]."""
    if not lo < hi:
        raise ValueError(f"empty truncation interval ({lo}, {hi}]")
    return truncnorm(rng.generator, float(mean), float(lo), float(hi))


def sample_truncated_normals(rng: SeededRng, means, lo, hi) -> np.ndarray:
    """Vectorised :func:`sample_truncated_normal`."""
    means = np.ascontiguousarray(means, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), means.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), means.shape).copy()
    if np.any(lo >= hi):
        raise ValueError("empty truncation interval")
    out = np.empty_like(means)
    truncnorm_fill(rng.generator, means, lo, hi, out)
    return out


def sample_multinomial(rng: SeededRng, probs) -> int:
    """Return a category index in 1..K drawn with probabilities ``probs``."""
    if not isinstance(probs, Simplex):
        probs = Simplex(np.asarray(probs, dtype=float))
    cum = np.cumsum(probs.probs)
    k = int(np.searchsorted(cum, rng.generator.random(), side="right"))
    return min(k, len(probs) - 1) + 1


def sample_categories(rng: SeededRng, probs: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws (labels 1..K) from an (n, K) probability matrix."""
    probs = np.asarray(probs, dtype=float)
    cum = np.cumsum(probs, axis=1)
    u = rng.generator.random(probs.shape[0])
    k = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(k, probs.shape[1] - 1) + 1


def sample_signed_bernoulli(rng: SeededRng, p, size=None):
    """+1 with probability ``p`` and -1 otherwise (``p`` may be an array)."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probability outside [0, 1]")
    if size is None and p.ndim == 0:
        return 1 if rng.generator.random() < p else -1
    u = rng.generator.random(size if size is not None else p.shape)
    return np.where(u < p, 1, -1)
