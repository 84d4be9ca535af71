"""Ordinal BART: a hybrid MH/Gibbs sampler over forest, cutpoints and latent utilities.

Each iteration

1. sweeps the forest against ``z - mu0`` with the outcome variance fixed at 1,
2. updates the free cutpoints with the blocked truncated-normal MH step,
3. redraws every latent utility ``z_i ~ N(mu0 + f(x_i), 1)`` restricted to
   the bracket ``(gamma[y_i - 1], gamma[y_i]]``.

The offset ``mu0 = Phi^{-1}(1 - p1)``, with ``p1`` the share of the lowest
category, centres the latent scale so that the pinned ``gamma[1] = 0`` sits
at the right place without the trees having to learn a large constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import bart
from .bart import BartHyper, Forest, SplitRules, predict_kernel, predict_snapshot, sweep_kernel
from .cutpoints import CutPoints, adapt_sigma, cutpoint_mh, initial_cutpoints, ordinal_loglik
from .probit import SamplerDivergence, prob_matrix
from .stats import SeededRng, Simplex, truncnorm

Z_LIMIT = 50.0
DIVERGENCE_PATIENCE = 20
ADAPT_WINDOW = 100


@dataclass
class ObartHyper:
    """Sampler settings. ``sigma_mh`` defaults to ``0.5 / K``."""

    K: int
    bart: BartHyper = field(default_factory=BartHyper)
    sigma_mh: float | None = None
    mu0: float | None = None
    adapt_burnin: bool = True

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("need K >= 2 categories")
        if self.sigma_mh is None:
            self.sigma_mh = 0.5 / self.K
        if not self.sigma_mh > 0:
            raise ValueError("sigma_mh must be positive")


@dataclass
class ObartState:
    forest: Forest
    z: np.ndarray
    gamma: np.ndarray
    mu0: float
    mh_accept_count: int = 0
    proposal_count: int = 0

    @property
    def cutpoints(self) -> CutPoints:
        return CutPoints(self.gamma.copy(), pinned=True)

    def latent_means(self) -> np.ndarray:
        return self.mu0 + self.forest.cached_total()


@dataclass
class ObartPosterior:
    """Kept draws: cutpoints plus latent means at registered query rows.

    ``queries[name]`` has shape ``(n_draws, n_rows)`` and holds
    ``mu0 + f(x)`` for each kept draw. Forest snapshots are kept only when
    requested, in which case arbitrary new rows can be queried too.
    """

    gamma: np.ndarray
    queries: dict
    mu0: float
    K: int
    burn_in: int
    acceptance_rate: float
    snapshots: list | None = None

    @property
    def n_draws(self) -> int:
        return self.gamma.shape[0]

    def latent_means(self, where) -> np.ndarray:
        """Per-draw latent means for a registered query name or a feature matrix."""
        if isinstance(where, str):
            return self.queries[where]
        if self.snapshots is None:
            raise ValueError("forest snapshots were not kept; register query rows before fitting")
        X = np.atleast_2d(np.asarray(where, dtype=float))
        return np.stack([self.mu0 + predict_snapshot(s, X) for s in self.snapshots])

    def category_probs(self, where) -> np.ndarray:
        """(draws, rows, K) category probabilities."""
        f = self.latent_means(where)
        return np.stack([prob_matrix(self.gamma[d], f[d]) for d in range(self.n_draws)])


# ---------------------------------------------------------------------------

def cutpoint_log_posterior(cutpoints, fits, labels) -> float:
    """Log posterior of the cutpoints under a flat prior, i.e. the ordinal log-likelihood.

    ``fits`` are total latent means. Returns -inf for an impossible
    configuration, including a non-increasing cutpoint vector.
    """
    g = cutpoints.gamma if isinstance(cutpoints, CutPoints) else np.asarray(cutpoints, dtype=float)
    if np.any(np.diff(g) <= 0):
        return -np.inf
    return float(ordinal_loglik(g, np.ascontiguousarray(fits, dtype=float),
                                np.ascontiguousarray(labels, dtype=np.int64)))


def mh_cutpoint_step(rng: SeededRng, state: ObartState, hyper: ObartHyper, y) -> bool:
    """Blocked MH update of the free cutpoints given the current forest; then rebracket z."""
    y = np.ascontiguousarray(y, dtype=np.int64)
    means = state.latent_means()
    acc = bool(cutpoint_mh(rng.generator, state.gamma, means, y, hyper.sigma_mh))
    state.proposal_count += 1
    state.mh_accept_count += int(acc)
    if acc:
        _draw_latents(rng.generator, means, state.gamma, y, state.z)
    return acc


@numba.njit(cache=True)
def _draw_latents(gen, means, gamma, y, z):
    zmax = 0.0
    for i in range(means.size):
        z[i] = truncnorm(gen, means[i], gamma[y[i] - 1], gamma[y[i]])
        if abs(z[i]) > zmax:
            zmax = abs(z[i])
    return zmax


@numba.njit(cache=True)
def _iteration(gen, X, y, z, mu0, gamma, sigma_mh, smu2, alpha, beta_d, mix, cuts, ncuts,
               var, cut, left, right, parent, depth, mu, leaf_of, fits, stats):
    n = y.size
    targets = np.empty(n)
    for i in range(n):
        targets[i] = z[i] - mu0
    total = sweep_kernel(gen, X, targets, 1.0, smu2, alpha, beta_d, mix, cuts, ncuts,
                         var, cut, left, right, parent, depth, mu, leaf_of, fits, stats)
    for i in range(n):
        total[i] += mu0
    acc = cutpoint_mh(gen, gamma, total, y, sigma_mh)
    zmax = _draw_latents(gen, total, gamma, y, z)
    return acc, zmax


class ObartSampler:
    """A single OBART chain that can be restarted on new labels (warm start)."""

    def __init__(self, X, y, hyper: ObartHyper, rng: SeededRng, rules: SplitRules | None = None):
        self.X = np.ascontiguousarray(X, dtype=float)
        y = np.ascontiguousarray(y, dtype=np.int64)
        if y.shape != (self.X.shape[0],):
            raise ValueError("labels must align with feature rows")
        if np.unique(y).size < 2:
            raise ValueError("need at least two observed categories")
        if y.min() < 1 or y.max() > hyper.K:
            raise ValueError(f"labels must lie in 1..{hyper.K}")
        if y.size < 10:
            raise ValueError("need at least 10 observations")
        self.hyper = hyper
        self.rng = rng
        self.y = y
        gamma, mu0 = initial_cutpoints(y, hyper.K)
        if hyper.mu0 is not None:
            mu0 = float(hyper.mu0)
        forest = Forest(self.X, hyper.bart.M, rules=rules)
        z = np.empty(y.size)
        _draw_latents(rng.generator, np.full(y.size, mu0), gamma, y, z)
        self.state = ObartState(forest, z, gamma, mu0)
        self.sigma_mh = float(hyper.sigma_mh)
        self._mix = np.asarray(hyper.bart.proposal_mix, dtype=float)
        self._far = 0

    def set_labels(self, y):
        """Swap in new labels, redrawing latents inside their new brackets."""
        y = np.ascontiguousarray(y, dtype=np.int64)
        if y.shape != self.y.shape:
            raise ValueError("new labels must have the same length")
        self.y = y
        _draw_latents(self.rng.generator, self.state.latent_means(), self.state.gamma, y, self.state.z)

    def step(self) -> bool:
        s, h, f = self.state, self.hyper.bart, self.state.forest
        acc, zmax = _iteration(self.rng.generator, self.X, self.y, s.z, s.mu0, s.gamma,
                               self.sigma_mh, float(h.sigma_mu) ** 2, h.alpha, h.beta_depth,
                               self._mix, f.rules.cuts, f.rules.ncuts, f.var, f.cut, f.left,
                               f.right, f.parent, f.depth, f.mu, f.leaf_of, f.fits, f.move_stats)
        s.proposal_count += 1
        s.mh_accept_count += int(acc)
        self._far = self._far + 1 if zmax > Z_LIMIT else 0
        if self._far >= DIVERGENCE_PATIENCE:
            raise SamplerDivergence(f"latent utilities beyond +/-{Z_LIMIT:g} for "
                                    f"{DIVERGENCE_PATIENCE} consecutive iterations")
        return acc

    def burn(self, n_iter: int, adapt: bool | None = None):
        adapt = self.hyper.adapt_burnin if adapt is None else adapt
        window = 0
        for t in range(n_iter):
            window += self.step()
            if adapt and (t + 1) % ADAPT_WINDOW == 0:
                self.sigma_mh = adapt_sigma(self.sigma_mh, window / ADAPT_WINDOW)
                window = 0
        self.state.mh_accept_count = 0
        self.state.proposal_count = 0

    @property
    def acceptance_rate(self) -> float:
        s = self.state
        return s.mh_accept_count / s.proposal_count if s.proposal_count else float("nan")

    def query(self, X) -> np.ndarray:
        f = self.state.forest
        if np.shape(X)[1] != f.n_features:
            raise ValueError(f"expected {f.n_features} features, got {np.shape(X)[1]}")
        return self.state.mu0 + predict_kernel(f.var, f.cut, f.left, f.right, f.mu,
                                               np.ascontiguousarray(X, dtype=float))

    def sample(self, n_draws: int, queries: dict | None = None, thin: int = 1,
               keep_forests: bool = False, burn_in: int = 0) -> ObartPosterior:
        """Run ``n_draws * thin`` iterations, keeping every ``thin``-th state."""
        queries = queries or {}
        qs = {k: np.ascontiguousarray(v, dtype=float) for k, v in queries.items()}
        gam = np.empty((n_draws, self.hyper.K + 1))
        out = {k: np.empty((n_draws, v.shape[0])) for k, v in qs.items()}
        snaps = [] if keep_forests else None
        for d in range(n_draws):
            for _ in range(thin):
                self.step()
            gam[d] = self.state.gamma
            for k, v in qs.items():
                out[k][d] = self.query(v)
            if keep_forests:
                snaps.append(self.state.forest.snapshot())
        return ObartPosterior(gam, out, self.state.mu0, self.hyper.K, burn_in,
                              self.acceptance_rate, snaps)


def fit(X, y, K: int, n_draws: int, burn_in: int, rng: SeededRng, hyper: ObartHyper | None = None,
        queries: dict | None = None, thin: int = 1, keep_forests: bool = False) -> ObartPosterior:
    """Fit OBART to features ``X`` and labels ``y`` in 1..K.

    ``queries`` maps names to feature matrices whose latent means are
    stored for every kept draw. The training rows are always registered
    under ``"train"``.
    """
    hyper = hyper if hyper is not None else ObartHyper(K=K)
    if hyper.K != K:
        raise ValueError("hyper.K disagrees with K")
    sampler = ObartSampler(X, y, hyper, rng)
    sampler.burn(burn_in)
    q = {"train": sampler.X}
    q.update(queries or {})
    return sampler.sample(n_draws, q, thin=thin, keep_forests=keep_forests, burn_in=burn_in)


def posterior_category_probs(posterior: ObartPosterior, x) -> list[Simplex]:
    """One Simplex per kept draw for a single feature vector ``x``.

    ``x`` may also be ``(query_name, row_index)`` for a registered query.
    """
    if isinstance(x, tuple) and isinstance(x[0], str):
        f = posterior.queries[x[0]][:, x[1]]
    else:
        f = posterior.latent_means(np.atleast_2d(x))[:, 0]
    out = []
    for d in range(posterior.n_draws):
        p = prob_matrix(posterior.gamma[d], f[d:d + 1])[0]
        out.append(Simplex(p / p.sum()))
    return out
