"""Linear-latent ordered probit: maximum likelihood and Gibbs sampling.

The latent utility is ``Z = f(h, a) + eps`` with ``eps ~ N(0, 1)`` and

    f(h, a) = beta . h_main + (zeta . h_int) * a,

and the label is ``k`` when ``gamma[k-1] < Z <= gamma[k]``. Two
parameterisations are used: the MLE drops the intercept and frees every
interior cutpoint, the Bayesian sampler keeps an intercept and pins
``gamma[1] = 0``. Both describe the same category probabilities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .cutpoints import CutPoints, adapt_sigma, cutpoint_mh, initial_cutpoints
from .stats import SeededRng, Simplex, truncnorm_fill

INTERCEPT = "(intercept)"
COEF_GUARD = 20.0
DIVERGENCE_GUARD = 100.0


class RankDeficientError(ValueError):
    pass


class SamplerDivergence(RuntimeError):
    pass


class SeparationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    """Which history columns enter the main and the treatment-interaction blocks.

    ``names`` is the column order of the history matrices handed to the
    model; ``main`` and ``interaction`` list the columns (or ``INTERCEPT``)
    of each block.
    """

    names: tuple
    main: tuple
    interaction: tuple

    @classmethod
    def full(cls, names, intercept: bool = True) -> "FeatureSpec":
        names = tuple(names)
        main = ((INTERCEPT,) if intercept else ()) + names
        return cls(names, main, (INTERCEPT,) + names)

    @property
    def has_intercept(self) -> bool:
        return INTERCEPT in self.main

    def _block(self, H, cols):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape[1] != len(self.names):
            raise ValueError(f"history has {H.shape[1]} columns, spec expects {len(self.names)}")
        out = np.empty((H.shape[0], len(cols)))
        for j, c in enumerate(cols):
            out[:, j] = 1.0 if c == INTERCEPT else H[:, self.names.index(c)]
        return out

    def main_block(self, H):
        return self._block(H, self.main)

    def interaction_block(self, H):
        return self._block(H, self.interaction)

    def design(self, H, a):
        a = np.asarray(a, dtype=float).reshape(-1, 1)
        return np.hstack([self.main_block(H), self.interaction_block(H) * a])


@dataclass
class LinearProbitModel:
    beta: np.ndarray
    zeta: np.ndarray
    cutpoints: CutPoints
    spec: FeatureSpec
    labels: np.ndarray | None = None  # original labels of occupied categories
    K: int | None = None
    cov: np.ndarray | None = None
    loglik: float = np.nan
    grad_norm: float = np.nan

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if self.beta.size != len(self.spec.main) or self.zeta.size != len(self.spec.interaction):
            raise ValueError("coefficient sizes do not match the feature spec")
        if self.K is None:
            self.K = self.cutpoints.K
        if self.labels is None:
            self.labels = np.arange(1, self.K + 1)

    @property
    def coef(self):
        return np.concatenate([self.beta, self.zeta])


def latent_mean(model: LinearProbitModel, h, a):
    """beta . h_main + (zeta . h_int) * a; scalar for one row, vector for many."""
    H = np.atleast_2d(np.asarray(h, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), (H.shape[0],))
    f = model.spec.main_block(H) @ model.beta + (model.spec.interaction_block(H) @ model.zeta) * a
    return float(f[0]) if np.ndim(h) == 1 else f


def psi(model: LinearProbitModel, h):
    """Treatment contrast f(h, +1) - f(h, -1) = 2 zeta . h_int."""
    H = np.atleast_2d(np.asarray(h, dtype=float))
    out = 2.0 * (model.spec.interaction_block(H) @ model.zeta)
    return float(out[0]) if np.ndim(h) == 1 else out


def prob_matrix(gamma, f):
    """(n, K) category probabilities Phi(gamma_k - f) - Phi(gamma_{k-1} - f).

    Differences are taken on whichever tail keeps precision.
    """
    gamma = np.asarray(gamma, dtype=float)
    f = np.atleast_1d(np.asarray(f, dtype=float))
    d = gamma[None, :] - f[:, None]
    lo, hi = d[:, :-1], d[:, 1:]
    upper = lo > 0
    p = np.where(upper, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum(axis=1, keepdims=True)


def expand_probs(p, labels, K):
    """Scatter probabilities of occupied categories back onto 1..K."""
    if p.shape[-1] == K:
        return p
    out = np.zeros(p.shape[:-1] + (K,))
    out[..., np.asarray(labels) - 1] = p
    return out


def category_probs(model: LinearProbitModel, h, a) -> Simplex:
    f = latent_mean(model, np.asarray(h, dtype=float).reshape(1, -1), a)
    p = expand_probs(prob_matrix(model.cutpoints.gamma, f)[0], model.labels, model.K)
    return Simplex(p)


def collapse_empty(y, K):
    """Relabel so that every category in 1..K_eff is observed.

    An empty category is merged into its lower neighbour, which amounts to
    renumbering the observed labels consecutively. Returns the relabelled
    vector, K_eff and the original label of each internal category.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.min() < 1 or y.max() > K:
        raise ValueError(f"labels must lie in 1..{K}")
    labels = np.unique(y)
    if labels.size < 2:
        raise ValueError("need at least two observed categories")
    remap = np.zeros(K + 1, dtype=np.int64)
    remap[labels] = np.arange(1, labels.size + 1)
    return remap[y], labels.size, labels


# ---------------------------------------------------------------------------
# maximum likelihood

def _derivatives(X, y, gamma, w, weights):
    """Log-likelihood, gradient and Hessian in (coef, interior gamma) space."""
    n, P = X.shape
    K = gamma.size - 1
    f = X @ w
    b = gamma[y] - f
    a = gamma[y - 1] - f
    upper = a > 0
    P_i = np.where(upper, special.ndtr(-a) - special.ndtr(-b), special.ndtr(b) - special.ndtr(a))
    P_i = np.maximum(P_i, 1e-300)
    ll = float(np.sum(weights * np.log(P_i)))
    bf = np.where(np.isfinite(b), b, 0.0)
    af = np.where(np.isfinite(a), a, 0.0)
    phib = np.where(np.isfinite(b), np.exp(-0.5 * bf * bf) / np.sqrt(2 * np.pi), 0.0)
    phia = np.where(np.isfinite(a), np.exp(-0.5 * af * af) / np.sqrt(2 * np.pi), 0.0)
    bphib = bf * phib
    aphia = af * phia
    gb = phib / P_i
    ga = -phia / P_i
    hbb = -bphib / P_i - gb * gb
    haa = aphia / P_i - ga * ga
    hab = -ga * gb

    E_hi = np.zeros((n, K - 1))
    E_lo = np.zeros((n, K - 1))
    rows = np.arange(n)
    m_hi = y < K
    m_lo = y > 1
    E_hi[rows[m_hi], y[m_hi] - 1] = 1.0
    E_lo[rows[m_lo], y[m_lo] - 2] = 1.0

    gf = -(gb + ga)
    grad = np.concatenate([X.T @ (weights * gf), E_hi.T @ (weights * gb) + E_lo.T @ (weights * ga)])
    hff = weights * (hbb + haa + 2 * hab)
    hfhi = -weights * (hbb + hab)
    hflo = -weights * (haa + hab)
    H = np.empty((P + K - 1, P + K - 1))
    H[:P, :P] = X.T @ (hff[:, None] * X)
    Hwg = X.T @ (hfhi[:, None] * E_hi + hflo[:, None] * E_lo)
    H[:P, P:] = Hwg
    H[P:, :P] = Hwg.T
    cross = E_hi.T @ ((weights * hab)[:, None] * E_lo)
    H[P:, P:] = (E_hi.T @ ((weights * hbb)[:, None] * E_hi)
                 + E_lo.T @ ((weights * haa)[:, None] * E_lo) + cross + cross.T)
    return ll, grad, H


def _theta_to_gamma(theta_c):
    interior = theta_c[0] + np.concatenate([[0.0], np.cumsum(np.exp(theta_c[1:]))])
    return np.concatenate([[-np.inf], interior, [np.inf]])


def fit_mle_design(X, y, K, weights=None, tol=1e-9, max_iter=200):
    """Newton ascent on the ordered-probit log-likelihood for a fixed design.

    Cutpoints are optimised through ``gamma_1`` and log-increments so the
    ordering constraint never binds. Returns ``(coef, gamma, cov, loglik,
    grad_norm)`` where ``cov`` is the inverse observed information in
    (coef, interior gamma) coordinates.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n, P = X.shape
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if P and np.linalg.matrix_rank(X) < P:
        raise RankDeficientError(f"design matrix has rank {np.linalg.matrix_rank(X)} < {P} columns")
    counts = np.bincount(y, weights=weights, minlength=K + 1)[1:]
    cum = np.clip(np.cumsum(counts)[:-1] / counts.sum(), 1e-6, 1 - 1e-6)
    g0 = special.ndtri(cum)
    g0 = np.maximum.accumulate(g0 + 1e-3 * np.arange(K - 1))
    theta = np.concatenate([np.zeros(P), [g0[0]], np.log(np.maximum(np.diff(g0), 1e-3))])

    def evaluate(theta):
        gamma = _theta_to_gamma(theta[P:])
        ll, g, H = _derivatives(X, y, gamma, theta[:P], weights)
        return gamma, ll, g, H

    gamma, ll, g, H = evaluate(theta)
    for _ in range(max_iter):
        # chain rule to (coef, gamma_1, eta)
        m = K - 1
        J = np.zeros((m, m))
        J[:, 0] = 1.0
        incr = np.exp(theta[P + 1:])
        for k in range(1, m):
            J[k, 1:k + 1] = incr[:k]
        T = np.eye(P + m)
        T[P:, P:] = J
        gt = T.T @ g
        Ht = T.T @ H @ T
        gg = g[P:]
        for j in range(1, m):
            Ht[P + j, P + j] += incr[j - 1] * gg[j:].sum()
        try:
            step = -np.linalg.solve(Ht, gt)
            if gt @ step <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = gt / max(1.0, np.abs(np.diag(Ht)).max())
        t = 1.0
        while True:
            cand = theta + t * step
            c_gamma, c_ll, c_g, c_H = evaluate(cand)
            if np.isfinite(c_ll) and c_ll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-12:
                break
        theta, gamma, ll_old, ll, g, H = cand, c_gamma, ll, c_ll, c_g, c_H
        if np.linalg.norm(g) <= tol * max(1.0, weights.sum() / n) or abs(ll - ll_old) < 1e-15 * max(1, abs(ll)):
            break
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.full_like(H, np.nan)
    return theta[:P], gamma, cov, ll, float(np.linalg.norm(g))


def fit_mle(H, a, y, K: int, spec: FeatureSpec, weights=None) -> LinearProbitModel:
    """Frequentist ordered probit on histories ``H``, actions ``a`` and labels ``y``.

    ``spec`` must not contain an intercept (cutpoints are all free).
    """
    if spec.has_intercept:
        raise ValueError("MLE parameterisation frees all cutpoints; drop the intercept")
    y_eff, K_eff, labels = collapse_empty(y, K)
    X = spec.design(H, a)
    coef, gamma, cov, ll, gnorm = fit_mle_design(X, y_eff, K_eff, weights)
    if np.any(np.abs(coef) > COEF_GUARD):
        warnings.warn("coefficient magnitude above guard; possible separation", SeparationWarning)
    pm = len(spec.main)
    return LinearProbitModel(coef[:pm], coef[pm:], CutPoints(gamma), spec, labels, K, cov, ll, gnorm)


# ---------------------------------------------------------------------------
# Gibbs sampling

@dataclass
class ProbitPosterior:
    beta: np.ndarray    # (draws, main)
    zeta: np.ndarray    # (draws, interaction)
    gamma: np.ndarray   # (draws, K_eff + 1)
    spec: FeatureSpec
    labels: np.ndarray
    K: int
    burn_in: int
    acceptance_rate: float

    @property
    def n_draws(self):
        return self.beta.shape[0]

    def model(self, d: int) -> LinearProbitModel:
        return LinearProbitModel(self.beta[d], self.zeta[d], CutPoints(self.gamma[d], pinned=True),
                                 self.spec, self.labels, self.K)

    def latent_means(self, H, a):
        """(draws, n) latent means at histories ``H`` under actions ``a``."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (np.atleast_2d(H).shape[0],))
        return self.beta @ self.spec.main_block(H).T + (self.zeta @ self.spec.interaction_block(H).T) * a

    def psi(self, H):
        return 2.0 * (self.zeta @ self.spec.interaction_block(H).T)

    def category_probs(self, H, a):
        """(draws, n, K) category probabilities."""
        f = self.latent_means(H, a)
        out = np.empty(f.shape + (self.gamma.shape[1] - 1,))
        for d in range(f.shape[0]):
            out[d] = prob_matrix(self.gamma[d], f[d])
        return expand_probs(out, self.labels, self.K)


@dataclass
class ProbitGibbsSampler:
    """Albert-Chib data augmentation with a blocked MH cutpoint update.

    Each iteration draws the coefficients given the latent utilities, then
    the cutpoints with the utilities integrated out, then the utilities from
    their truncated-normal full conditionals. Keeping the sampler object
    allows warm restarts on relabelled data.
    """

    X: np.ndarray
    y: np.ndarray
    K: int
    rng: SeededRng
    prior_sd: float = 10.0
    sigma_mh: float | None = None
    coef: np.ndarray = field(init=False)
    gamma: np.ndarray = field(init=False)
    z: np.ndarray = field(init=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        n, P = self.X.shape
        if np.linalg.matrix_rank(self.X) < P:
            raise RankDeficientError("design matrix is rank deficient")
        if self.sigma_mh is None:
            self.sigma_mh = 0.5 / self.K
        prec = self.X.T @ self.X + np.eye(P) / self.prior_sd ** 2
        self._chol = linalg.cho_factor(prec, lower=True)
        self._L = np.linalg.cholesky(prec)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.gamma, mu0 = initial_cutpoints(self.y, self.K)
        self.coef = np.zeros(P)
        if P and np.allclose(self.X[:, 0], 1.0):
            self.coef[0] = mu0
        self.z = np.empty(n)
        self._draw_z()
        self.accepted = 0
        self.proposed = 0

    def set_labels(self, y):
        """Swap in new labels (same design) and redraw utilities to match."""
        self.y = np.asarray(y, dtype=np.int64)
        self._draw_z()

    def _draw_z(self):
        f = self.X @ self.coef
        truncnorm_fill(self.rng.generator, f, self.gamma[self.y - 1], self.gamma[self.y], self.z)

    def step(self):
        P = self.X.shape[1]
        mean = linalg.cho_solve(self._chol, self.X.T @ self.z)
        eps = self.rng.generator.standard_normal(P)
        self.coef = mean + linalg.solve_triangular(self._L.T, eps, lower=False)
        if np.any(np.abs(self.coef) > DIVERGENCE_GUARD):
            raise SamplerDivergence("ordered probit coefficients exceeded the divergence guard")
        f = self.X @ self.coef
        if self.K > 2:
            self.proposed += 1
            self.accepted += cutpoint_mh(self.rng.generator, self.gamma, f, self.y, self.sigma_mh)
        truncnorm_fill(self.rng.generator, f, self.gamma[self.y - 1], self.gamma[self.y], self.z)

    def run(self, n_iter: int, burn_in: int = 0, adapt: bool = True, thin: int = 1):
        """Advance the chain; return kept (coef, gamma) draws after ``burn_in``."""
        coefs, gammas = [], []
        window_acc, window_prop = self.accepted, self.proposed
        for it in range(n_iter):
            self.step()
            if adapt and it < burn_in and (it + 1) % 100 == 0 and self.proposed > window_prop:
                rate = (self.accepted - window_acc) / (self.proposed - window_prop)
                self.sigma_mh = adapt_sigma(self.sigma_mh, rate)
                window_acc, window_prop = self.accepted, self.proposed
            if it == burn_in - 1:
                self.accepted = self.proposed = 0
            if it >= burn_in and (it - burn_in) % thin == 0:
                coefs.append(self.coef.copy())
                gammas.append(self.gamma.copy())
        return np.array(coefs).reshape(-1, self.X.shape[1]), np.array(gammas).reshape(-1, self.K + 1)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 1.0


def gibbs_fit(H, a, y, K: int, spec: FeatureSpec, n_draws: int, burn_in: int,
              rng: SeededRng, prior_sd: float = 10.0, thin: int = 1) -> ProbitPosterior:
    """Bayesian ordered probit with N(0, prior_sd^2) coefficient priors and flat cutpoint priors."""
    if not spec.has_intercept:
        raise ValueError("the Bayesian parameterisation pins gamma_1 = 0 and needs an intercept")
    y_eff, K_eff, labels = collapse_empty(y, K)
    X = spec.design(H, a)
    if INTERCEPT != spec.main[0]:
        raise ValueError("intercept must be the first main-block column")
    sampler = ProbitGibbsSampler(X, y_eff, K_eff, rng, prior_sd)
    coefs, gammas = sampler.run(burn_in + n_draws * thin, burn_in, thin=thin)
    pm = len(spec.main)
    return ProbitPosterior(coefs[:, :pm], coefs[:, pm:], gammas, spec, labels, K, burn_in,
                           sampler.acceptance_rate)
