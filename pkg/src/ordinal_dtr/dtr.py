"""Two-stage dynamic treatment regimes for ordinal outcomes.

Three estimators share one result type:

* ordinal Q-learning: a stage-2 ordered-probit MLE, pseudo-outcomes for the
  participants whose stage-2 action was not optimal, and a stage-1 MLE
  averaged over repeated pseudo-outcome draws; intervals from an
  m-out-of-n bootstrap;
* backward-induction Gibbs (BIG) sampling with a Bayesian ordered probit
  (``"bp"``) or ordinal BART (``"obart"``) stage model: every stage-2
  posterior draw imputes its own pseudo-outcomes and contributes one
  stage-1 draw.

Stage histories are ``H1 = x1`` and ``H2 = (x1, a1, x2)``. Every fit reports
the treatment contrast ``psi(h) = f(h, +1) - f(h, -1)`` on the training rows
and on any registered query rows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import obart as _obart
from .bart import BartHyper
from .probit import (FeatureSpec, LinearProbitModel, ProbitGibbsSampler, SamplerDivergence,
                     SeparationWarning, collapse_empty, expand_probs, fit_mle, gibbs_fit,
                     prob_matrix)
from .stats import SeededRng, sample_categories

ESTIMATORS = ("qlearning", "bml-bp", "bml-obart")
TRUE_TIE_TOL = 1e-10


# ---------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class Trajectory:
    x1: np.ndarray
    a1: int
    x2: np.ndarray
    a2: int
    y2: int


@dataclass
class TwoStageDataset:
    """Column-stored two-stage trajectories with labels in 1..K."""

    x1: np.ndarray
    a1: np.ndarray
    x2: np.ndarray
    a2: np.ndarray
    y2: np.ndarray
    K: int
    x1_names: tuple = ()
    x2_names: tuple = ()
    label_map: dict | None = None  # original label -> 1..K

    def __post_init__(self):
        self.x1 = np.atleast_2d(np.asarray(self.x1, dtype=float))
        self.x2 = np.asarray(self.x2, dtype=float).reshape(self.x1.shape[0], -1)
        self.a1 = np.asarray(self.a1, dtype=np.int64)
        self.a2 = np.asarray(self.a2, dtype=np.int64)
        self.y2 = np.asarray(self.y2, dtype=np.int64)
        n = self.x1.shape[0]
        for name in ("a1", "a2", "y2"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per trajectory")
        for name in ("a1", "a2"):
            bad = np.flatnonzero(np.abs(getattr(self, name)) != 1)
            if bad.size:
                raise ValueError(f"{name} must be +/-1; first bad row {bad[0]}")
        if self.y2.min() < 1 or self.y2.max() > self.K:
            raise ValueError(f"y2 must lie in 1..{self.K}")
        if np.unique(self.y2).size < 2:
            raise ValueError("need at least two observed outcome categories")
        if not self.x1_names:
            self.x1_names = tuple(f"x1{j + 1}" for j in range(self.x1.shape[1]))
        if not self.x2_names:
            self.x2_names = tuple(f"x2{j + 1}" for j in range(self.x2.shape[1]))
        self.x1_names, self.x2_names = tuple(self.x1_names), tuple(self.x2_names)

    @classmethod
    def from_trajectories(cls, trajectories, K: int, **kw) -> "TwoStageDataset":
        t = list(trajectories)
        return cls(np.array([r.x1 for r in t]), [r.a1 for r in t], np.array([r.x2 for r in t]),
                   [r.a2 for r in t], [r.y2 for r in t], K, **kw)

    def __len__(self):
        return self.x1.shape[0]

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    def __getitem__(self, i) -> Trajectory:
        return Trajectory(self.x1[i], int(self.a1[i]), self.x2[i], int(self.a2[i]), int(self.y2[i]))

    @property
    def h1_names(self) -> tuple:
        return self.x1_names

    @property
    def h2_names(self) -> tuple:
        return self.x1_names + ("a1",) + self.x2_names

    @property
    def H1(self) -> np.ndarray:
        return self.x1

    @property
    def H2(self) -> np.ndarray:
        return stage2_history(self.x1, self.a1, self.x2)

    def subset(self, idx) -> "TwoStageDataset":
        idx = np.asarray(idx)
        return TwoStageDataset(self.x1[idx], self.a1[idx], self.x2[idx], self.a2[idx], self.y2[idx],
                               self.K, self.x1_names, self.x2_names, self.label_map)


def stage2_history(x1, a1, x2) -> np.ndarray:
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    a1 = np.broadcast_to(np.asarray(a1, dtype=float), (x1.shape[0],))
    return np.hstack([x1, a1[:, None], np.asarray(x2, dtype=float).reshape(x1.shape[0], -1)])


# ---------------------------------------------------------------------------
# contrasts, rules and intervals

def optimal_action(psi_value: float, tol: float = 0.0) -> tuple[int, bool]:
    """(+1 or -1, tie flag). A tie (|psi| <= tol) reports +1 with both actions optimal."""
    if not np.isfinite(psi_value):
        raise ValueError("psi must be finite")
    if abs(psi_value) <= tol:
        return 1, True
    return (1 if psi_value > 0 else -1), False


def optimal_actions(psi, tol: float = 0.0):
    """Vectorised :func:`optimal_action`; returns (actions, ties)."""
    psi = np.asarray(psi, dtype=float)
    ties = np.abs(psi) <= tol
    return np.where(psi < 0, -1, 1), ties


def credible_interval(draws, level: float = 0.95, axis: int = 0):
    """Equal-tailed interval from linear-interpolation (type-7) quantiles."""
    d = np.asarray(draws, dtype=float)
    if d.shape[axis] < 2:
        raise ValueError("need at least two draws")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    q = np.quantile(d, [(1 - level) / 2, (1 + level) / 2], axis=axis)
    return q[0], q[1]


@dataclass
class PsiEstimate:
    """Point estimate and 95% interval of psi on one set of rows."""

    point: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    draws: np.ndarray | None = None

    @classmethod
    def from_draws(cls, draws, level: float = 0.95) -> "PsiEstimate":
        draws = np.asarray(draws, dtype=float)
        lo, hi = credible_interval(draws, level)
        return cls(np.median(draws, axis=0), lo, hi, draws)

    @property
    def mean(self) -> np.ndarray:
        return self.point if self.draws is None else self.draws.mean(axis=0)

    @property
    def actions(self) -> np.ndarray:
        return optimal_actions(self.point)[0]


@dataclass
class DtrFitResult:
    estimator: str
    psi: dict  # (stage, rowset name) -> PsiEstimate
    diagnostics: dict = field(default_factory=dict)

    def estimate(self, stage: int, name: str = "train") -> PsiEstimate:
        return self.psi[(stage, name)]

    def actions(self, stage: int, name: str = "train") -> np.ndarray:
        return self.psi[(stage, name)].actions

    def psi_table(self, name: str = "train"):
        """Rows (id, stage, psi_point, lo, hi, action, tie_flag) for CSV output."""
        rows = []
        for stage in (1, 2):
            if (stage, name) not in self.psi:
                continue
            e = self.psi[(stage, name)]
            acts, ties = optimal_actions(e.point)
            for i in range(e.point.size):
                rows.append((i, stage, e.point[i], e.lo[i], e.hi[i], int(acts[i]), bool(ties[i])))
        return rows


def _queries(data: TwoStageDataset, queries1, queries2):
    q1 = {"train": data.H1}
    q1.update({k: np.atleast_2d(np.asarray(v, float)) for k, v in (queries1 or {}).items()})
    q2 = {"train": data.H2}
    q2.update({k: np.atleast_2d(np.asarray(v, float)) for k, v in (queries2 or {}).items()})
    return q1, q2


# ---------------------------------------------------------------------------
# Q-learning

def _pseudo_outcomes(rng: SeededRng, y2, a2, d2, probs_opt):
    """Keep y2 where the observed stage-2 action was optimal, else draw from probs_opt."""
    y1 = y2.copy()
    miss = a2 != d2
    if np.any(miss):
        y1[miss] = sample_categories(rng, probs_opt[miss])
    return y1


def _mle_probs(model: LinearProbitModel, H, a):
    from .probit import latent_mean
    p = prob_matrix(model.cutpoints.gamma, latent_mean(model, H, a))
    return expand_probs(p, model.labels, model.K)


def _qlearning_models(data: TwoStageDataset, R_ql: int, rng: SeededRng, stages=(1, 2)):
    """Stage-2 MLE and (optionally) the R_ql-averaged stage-1 MLE."""
    spec2 = FeatureSpec.full(data.h2_names, intercept=False)
    H2 = data.H2
    m2 = fit_mle(H2, data.a2, data.y2, data.K, spec2)
    if 1 not in stages:
        return m2, None
    from .probit import psi as lin_psi
    d2 = optimal_actions(lin_psi(m2, H2))[0]
    probs = _mle_probs(m2, H2, d2)
    spec1 = FeatureSpec.full(data.h1_names, intercept=False)
    betas, zetas, gammas = [], [], []
    for r in range(R_ql):
        y1 = _pseudo_outcomes(rng.child("ql", r), data.y2, data.a2, d2, probs)
        m1 = fit_mle(data.H1, data.a1, y1, data.K, spec1)
        betas.append(m1.beta)
        zetas.append(m1.zeta)
        if m1.cutpoints.K == data.K:
            gammas.append(m1.cutpoints.gamma)
    from .cutpoints import CutPoints
    gamma = np.mean(gammas, axis=0) if gammas else m1.cutpoints.gamma
    m1 = LinearProbitModel(np.mean(betas, axis=0), np.mean(zetas, axis=0), CutPoints(gamma),
                           spec1, None, data.K)
    return m2, m1


def _qlearning_psi(data, R_ql, rng, q1, q2, stages=(1, 2)) -> dict:
    from .probit import psi as lin_psi
    m2, m1 = _qlearning_models(data, R_ql, rng, stages)
    out = {(2, k): lin_psi(m2, v) for k, v in q2.items()}
    if m1 is not None:
        out.update({(1, k): lin_psi(m1, v) for k, v in q1.items()})
    return out


@dataclass
class BootstrapConfig:
    """m-out-of-n bootstrap settings.

    ``p_hat`` or ``m`` override the pilot-based choice of resample size.
    ``R_ql`` is the number of pseudo-outcome repetitions inside each
    replicate.
    """

    B: int = 1000
    alpha_tune: float = 0.05
    R_ql: int = 5
    p_hat: float | None = None
    m: int | None = None
    max_fail: float = 0.05
    level: float = 0.95

    def __post_init__(self):
        if self.B < 100:
            raise ValueError("need B >= 100 bootstrap replicates")


def resample_size(n: int, p_hat: float, alpha_tune: float) -> int:
    """m = ceil(n^((1 + alpha (1 - p)) / (1 + alpha)))."""
    if not 0 <= p_hat <= 1:
        raise ValueError("p_hat must lie in [0, 1]")
    return int(math.ceil(n ** ((1 + alpha_tune * (1 - p_hat)) / (1 + alpha_tune)) - 1e-9))


def _boot_draws(data, estimator, m, B, rng, tag, max_fail):
    draws, fails = [], 0
    for b in range(B):
        r = rng.child(tag, b)
        idx = r.integers(0, data.n, m)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SeparationWarning)
                draws.append(estimator(data.subset(idx), r))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            fails += 1
            if fails > max_fail * B:
                raise RuntimeError(f"bootstrap aborted: {fails} of {b + 1} replicates failed")
    return draws, fails


def _hybrid_interval(est, boot, n, m, level):
    d = math.sqrt(m) * (np.asarray(boot) - est)
    qlo, qhi = np.quantile(d, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return est - qhi / math.sqrt(n), est - qlo / math.sqrt(n)


def m_out_of_n_bootstrap(data: TwoStageDataset, estimator, config: BootstrapConfig, rng: SeededRng,
                         estimate: dict | None = None, regular_key=(2, "train")):
    """Percentile-type intervals from size-m resamples of the trajectories.

    ``estimator(dataset, rng)`` returns a dict of psi vectors evaluated on
    fixed rows. With ``d* = sqrt(m) (psi* - psi_hat)`` the interval is
    ``(psi_hat - q_hi(d*)/sqrt(n), psi_hat - q_lo(d*)/sqrt(n))``.

    Unless fixed in ``config``, ``m`` follows from ``p_hat``, the share of
    training rows whose pilot (m = n, B/5 replicates) stage-2 interval
    contains zero.
    """
    n = data.n
    est = estimate if estimate is not None else estimator(data, rng.child("full"))
    info = {}
    if config.m is not None:
        m, p_hat = int(config.m), config.p_hat
    else:
        p_hat = config.p_hat
        if p_hat is None:
            pilot, pf = _boot_draws(data, estimator, n, max(config.B // 5, 20), rng, "pilot",
                                    config.max_fail)
            lo, hi = _hybrid_interval(est[regular_key], [p[regular_key] for p in pilot], n, n,
                                      config.level)
            p_hat = float(np.mean((lo <= 0) & (hi >= 0)))
            info["pilot_failures"] = pf
        m = resample_size(n, p_hat, config.alpha_tune)
    draws, fails = _boot_draws(data, estimator, m, config.B, rng, "boot", config.max_fail)
    out = {}
    for k, v in est.items():
        lo, hi = _hybrid_interval(v, [d[k] for d in draws], n, m, config.level)
        out[k] = (lo, hi)
    info.update(m=m, p_hat=p_hat, failures=fails, B=config.B)
    return out, info


def qlearning_fit(data: TwoStageDataset, R_ql: int, rng: SeededRng,
                  bootstrap: BootstrapConfig | None = None, queries1=None, queries2=None,
                  stages=(1, 2)) -> DtrFitResult:
    """Ordinal Q-learning with R_ql pseudo-outcome repetitions at stage 1.

    Without ``bootstrap`` the intervals are degenerate (lo = hi = point).
    ``stages=(2,)`` fits stage 2 only.
    """
    if R_ql < 1:
        raise ValueError("R_ql must be positive")
    q1, q2 = _queries(data, queries1, queries2)
    est = _qlearning_psi(data, R_ql, rng.child("point"), q1, q2, stages)
    diag = {"R_ql": R_ql}
    if bootstrap is not None:
        R_b = bootstrap.R_ql

        def estimator(d, r):
            return _qlearning_psi(d, R_b, r, q1, q2, stages)

        intervals, info = m_out_of_n_bootstrap(data, estimator, bootstrap, rng.child("bootstrap"),
                                               estimate=est)
        diag["bootstrap"] = info
    else:
        intervals = {k: (v, v) for k, v in est.items()}
    psi = {k: PsiEstimate(v, np.minimum(intervals[k][0], v), np.maximum(intervals[k][1], v))
           for k, v in est.items()}
    return DtrFitResult("qlearning", psi, diag)


# ---------------------------------------------------------------------------
# BIG sampler

@dataclass
class SamplerConfig:
    """Chain lengths for the BIG sampler.

    Stage 2 runs ``burn2`` iterations then keeps ``R_bml`` draws every
    ``thin2`` iterations. Stage 1 burns ``burn1`` iterations on the first
    imputed dataset, then advances ``steps1`` iterations per further
    imputation and keeps the last state.
    """

    R_bml: int = 1000
    burn2: int = 2000
    thin2: int = 2
    burn1: int = 500
    steps1: int = 100
    M: int = 200
    prior_sd: float = 10.0

    @classmethod
    def desk(cls, **kw) -> "SamplerConfig":
        base = dict(R_bml=200, burn2=500, thin2=5, burn1=300, steps1=10)
        base.update(kw)
        return cls(**base)


class _StagePosterior:
    """Per-draw latent means under a = +1 / -1 on named row sets, plus cutpoints."""

    def __init__(self, gamma, labels, K, plus: dict, minus: dict):
        self.gamma, self.labels, self.K = gamma, labels, K
        self.plus, self.minus = plus, minus

    @property
    def n_draws(self):
        return self.gamma.shape[0]

    def psi(self, name):
        return self.plus[name] - self.minus[name]

    def probs(self, name, d, actions):
        f = np.where(actions > 0, self.plus[name][d], self.minus[name][d])
        return expand_probs(prob_matrix(self.gamma[d], f), self.labels, self.K)


def _fit_stage2_bp(data, cfg, rng, q2):
    spec = FeatureSpec.full(data.h2_names, intercept=True)
    post = gibbs_fit(data.H2, data.a2, data.y2, data.K, spec, cfg.R_bml, cfg.burn2, rng,
                     cfg.prior_sd, thin=cfg.thin2)
    plus = {k: post.latent_means(v, 1.0) for k, v in q2.items()}
    minus = {k: post.latent_means(v, -1.0) for k, v in q2.items()}
    return _StagePosterior(post.gamma, post.labels, data.K, plus, minus), post.acceptance_rate


def _with_action(H, a):
    return np.hstack([H, np.full((H.shape[0], 1), float(a))])


def _obart_hyper(K, cfg):
    return _obart.ObartHyper(K=K, bart=BartHyper(M=cfg.M))


def _fit_stage2_obart(data, cfg, rng, q2):
    X = _with_action(data.H2, 0.0)
    X[:, -1] = data.a2
    y_eff, K_eff, labels = collapse_empty(data.y2, data.K)
    sampler = _obart.ObartSampler(X, y_eff, _obart_hyper(K_eff, cfg), rng)
    sampler.burn(cfg.burn2)
    queries = {}
    for k, v in q2.items():
        queries[k + "/+"] = _with_action(v, 1.0)
        queries[k + "/-"] = _with_action(v, -1.0)
    post = sampler.sample(cfg.R_bml, queries, thin=cfg.thin2, burn_in=cfg.burn2)
    plus = {k: post.queries[k + "/+"] for k in q2}
    minus = {k: post.queries[k + "/-"] for k in q2}
    return _StagePosterior(post.gamma, labels, data.K, plus, minus), post.acceptance_rate


class _Stage1BP:
    def __init__(self, data, y1, cfg, rng):
        self.spec = FeatureSpec.full(data.h1_names, intercept=True)
        X = self.spec.design(data.H1, data.a1)
        self.sampler = ProbitGibbsSampler(X, y1, data.K, rng, cfg.prior_sd)
        self.sampler.run(cfg.burn1, cfg.burn1)
        self.pm = len(self.spec.main)

    def advance(self, y1, steps):
        self.sampler.set_labels(y1)
        self.sampler.run(steps, 0, adapt=False)

    def psi(self, H):
        return 2.0 * (self.spec.interaction_block(H) @ self.sampler.coef[self.pm:])

    @property
    def acceptance_rate(self):
        return self.sampler.acceptance_rate


class _Stage1Obart:
    def __init__(self, data, y1, cfg, rng):
        X = _with_action(data.H1, 0.0)
        X[:, -1] = data.a1
        self.sampler = _obart.ObartSampler(X, y1, _obart_hyper(data.K, cfg), rng)
        self.sampler.burn(cfg.burn1)

    def advance(self, y1, steps):
        self.sampler.set_labels(y1)
        for _ in range(steps):
            self.sampler.step()

    def psi(self, H):
        return self.sampler.query(_with_action(H, 1.0)) - self.sampler.query(_with_action(H, -1.0))

    @property
    def acceptance_rate(self):
        return self.sampler.acceptance_rate


def big_sampler_fit(data: TwoStageDataset, stage_model: str, rng: SeededRng,
                    config: SamplerConfig | None = None, queries1=None, queries2=None,
                    keep_imputations: bool = False) -> DtrFitResult:
    """Backward-induction Gibbs sampling with a ``"bp"`` or ``"obart"`` stage model.

    The stage-2 posterior is fitted once. For each kept stage-2 draw the
    draw's optimal actions define pseudo-outcomes (observed label where
    ``a2`` was optimal, otherwise a category drawn from that draw's
    probabilities under the optimal action) and the stage-1 chain, warm
    started from the previous imputation, contributes one draw.
    """
    cfg = config or SamplerConfig()
    if stage_model not in ("bp", "obart"):
        raise ValueError(f"unknown stage model {stage_model!r}")
    q1, q2 = _queries(data, queries1, queries2)
    fit2 = _fit_stage2_bp if stage_model == "bp" else _fit_stage2_obart
    post2, acc2 = fit2(data, cfg, rng.child("stage2"), q2)
    stage1_cls = _Stage1BP if stage_model == "bp" else _Stage1Obart

    psi2_train = post2.psi("train")
    R = post2.n_draws
    psi1 = {k: np.empty((R, v.shape[0])) for k, v in q1.items()}
    imputations = [] if keep_imputations else None
    chain, attempts = None, 0
    for r in range(R):
        d2 = optimal_actions(psi2_train[r])[0]
        probs = post2.probs("train", r, d2)
        y1 = _pseudo_outcomes(rng.child("impute", r), data.y2, data.a2, d2, probs)
        if keep_imputations:
            imputations.append(y1)
        for attempt in range(2):
            try:
                if chain is None:
                    chain = stage1_cls(data, y1, cfg, rng.child("stage1", attempts))
                else:
                    chain.advance(y1, cfg.steps1)
                break
            except SamplerDivergence:
                attempts += 1
                chain = None
                if attempt == 1:
                    raise
        for k, v in q1.items():
            psi1[k][r] = chain.psi(v)

    psi = {(2, k): PsiEstimate.from_draws(post2.psi(k)) for k in q2}
    psi.update({(1, k): PsiEstimate.from_draws(v) for k, v in psi1.items()})
    diag = {"R_bml": R, "acceptance_stage2": acc2, "acceptance_stage1": chain.acceptance_rate,
            "restarts": attempts}
    if keep_imputations:
        diag["imputations"] = np.array(imputations)
    return DtrFitResult("bml-" + stage_model, psi, diag)


def fit_estimator(name: str, data: TwoStageDataset, rng: SeededRng, *, R_ql: int = 50,
                  bootstrap: BootstrapConfig | None = None, sampler: SamplerConfig | None = None,
                  queries1=None, queries2=None) -> DtrFitResult:
    """Dispatch on an estimator name from :data:`ESTIMATORS`."""
    if name == "qlearning":
        return qlearning_fit(data, R_ql, rng, bootstrap, queries1, queries2)
    if name in ("bml-bp", "bml-obart"):
        return big_sampler_fit(data, name[4:], rng, sampler, queries1, queries2)
    raise ValueError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")
