"""Simulation scenarios, ground-truth contrasts and the evaluation metrics.

Twelve two-stage scenarios generate a latent ``Z2 = m(x11, a1, x21) +
a2 * c(x11, a1, x21) + eps`` cut at -0.43 and 0.43 into three categories.
The stage-2 truth is ``psi2 = 2 c``. The stage-1 truth is the contrast of an
ordered probit fitted, with exact cell weights, to the pseudo-outcome
distribution obtained by following the optimal stage-2 rule.
"""

from __future__ import annotations

import csv
import functools
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .dtr import (ESTIMATORS, TRUE_TIE_TOL, BootstrapConfig, DtrFitResult, SamplerConfig,
                  TwoStageDataset, fit_estimator, optimal_actions, stage2_history)
from .probit import SamplerDivergence, fit_mle_design, prob_matrix
from .stats import SeededRng, derive_stream

CUTOFFS = np.array([-np.inf, -0.43, 0.43, np.inf])
K = 3
N_NOISE = 5


@dataclass(frozen=True)
class ScenarioSpec:
    """Generating parameters for one scenario.

    ``beta2`` maps positionally to (intercept, x11-term, a1, x11-term * a1,
    x21-term, a2); ``zeta2`` holds the a2 interactions with (x11, a1, x21)
    for linear scenarios and with the x21-term only otherwise.
    """

    id: int
    delta: tuple | None
    beta2: tuple
    zeta2: tuple
    form: str = "linear"            # linear | squared | sincos
    mechanism: str = "randomized"   # randomized | confounded
    label: str = ""
    n_noise: int = N_NOISE

    @property
    def binary(self) -> bool:
        return self.form == "linear"

    @property
    def name(self) -> str:
        return f"Sc.{self.id} {self.label}".strip()


def _lin(i, delta, beta, zeta, label):
    return ScenarioSpec(i, delta, beta, zeta, "linear", "randomized", label)


SCENARIOS = {
    1: _lin(1, (0.5, 0.5), (0, 0, 0, 0, 0, 0), (0, 0, 0), "NR"),
    2: _lin(2, (0.5, 0.5), (0, 0, 0, 0, 0, 0.1), (0, 0, 0), "NNR"),
    3: _lin(3, (0.5, 0.5), (0, 0, -0.5, 0, 0, 0.5), (0, 0.5, 0), "NR"),
    4: _lin(4, (0.5, 0.5), (0, 0, -0.5, 0, 0, 0.5), (0, 0.49, 0), "NNR"),
    5: _lin(5, (1.0, 0.0), (0, 0, -0.5, 0, 0, 1.0), (0, 0.5, 0.5), "NR"),
    6: _lin(6, (0.1, 0.1), (0, 0, -0.5, 0, 0, 0.25), (0, 0.5, 0.5), "RE"),
    7: _lin(7, (0.1, 0.1), (0, 0, -0.25, 0, 0, 0.75), (0, 0.5, 0.5), "RE"),
    8: _lin(8, (0.0, 0.0), (0, 0, 0, 0, 0, 0.25), (0, 0.25, 0), "NR"),
    9: _lin(9, (0.0, 0.0), (0, 0, 0, 0, 0, 0.25), (0, 0.24, 0), "NNR"),
    10: ScenarioSpec(10, None, (0, 0.2, 0.2, -0.3, 0.1, -0.2), (0.2,), "squared", "randomized", "Squared"),
    11: ScenarioSpec(11, None, (0, 0.4, -0.2, -1.0, 0.4, -0.7), (1.0,), "sincos", "randomized", "Sin/Cos"),
    12: ScenarioSpec(12, None, (0, 0.4, -0.2, -1.0, 0.4, -0.7), (1.0,), "sincos", "confounded", "obs"),
}


def get_scenario(i: int) -> ScenarioSpec:
    try:
        return SCENARIOS[int(i)]
    except KeyError:
        raise ValueError(f"unknown scenario {i!r}; expected 1..12") from None


# ---------------------------------------------------------------------------
# generating model

def _terms(spec, x11, x21):
    if spec.form == "squared":
        return np.square(x11), np.square(x21)
    if spec.form == "sincos":
        return np.sin(x11), np.cos(x21)
    return np.asarray(x11, float), np.asarray(x21, float)


def contrast(spec: ScenarioSpec, x11, a1, x21):
    """Half the stage-2 treatment contrast: the coefficient multiplying a2."""
    b, z = spec.beta2, spec.zeta2
    u, v = _terms(spec, x11, x21)
    if spec.binary:
        return b[5] + z[0] * u + z[1] * np.asarray(a1, float) + z[2] * v
    return b[5] + z[0] * v


def latent_mean(spec: ScenarioSpec, x11, a1, x21, a2):
    b = spec.beta2
    u, v = _terms(spec, x11, x21)
    a1 = np.asarray(a1, float)
    main = b[0] + b[1] * u + b[2] * a1 + b[3] * u * a1 + b[4] * v
    return main + np.asarray(a2, float) * contrast(spec, x11, a1, x21)


def true_psi2(spec: ScenarioSpec, x11, a1, x21):
    return 2.0 * contrast(spec, x11, a1, x21)


def category_probs(spec: ScenarioSpec, x11, a1, x21, a2) -> np.ndarray:
    """(n, 3) generating-model category probabilities."""
    return prob_matrix(CUTOFFS, np.atleast_1d(latent_mean(spec, x11, a1, x21, a2)))


def p_best(spec, x11, a1, x21, a2):
    """P(Y = 3) under the generating model."""
    return special.ndtr(np.atleast_1d(latent_mean(spec, x11, a1, x21, a2)) - CUTOFFS[2])


def x21_prob_plus(spec: ScenarioSpec, x11, a1):
    """P(x21 = +1 | x11, a1) for the binary scenarios."""
    return special.expit(spec.delta[0] * np.asarray(x11, float) + spec.delta[1] * np.asarray(a1, float))


def a1_prob_plus(spec: ScenarioSpec, x11):
    if spec.mechanism == "confounded":
        return special.expit(0.2 * np.asarray(x11, float) + 0.5)
    return np.full(np.shape(x11), 0.5)


def a2_prob_plus(spec: ScenarioSpec, x11, x21):
    if spec.mechanism == "confounded":
        return special.expit(0.2 * np.asarray(x11, float) + 0.3 * np.asarray(x21, float) + 0.5)
    return np.full(np.shape(x11), 0.5)


def _signed(rng, p):
    return np.where(rng.generator.random(np.shape(p)) < p, 1, -1)


def labels_from_latent(z) -> np.ndarray:
    """1 if z <= -0.43, 2 if z <= 0.43, else 3."""
    return 1 + (np.asarray(z) > CUTOFFS[1]).astype(np.int64) + (np.asarray(z) > CUTOFFS[2])


@dataclass
class SimTruth:
    """Ground truth on a generated dataset's rows."""

    psi1: np.ndarray
    psi2: np.ndarray
    d1: np.ndarray
    tie1: np.ndarray
    d2: np.ndarray
    tie2: np.ndarray


def generate(spec: ScenarioSpec, n: int, rng: SeededRng) -> tuple[TwoStageDataset, SimTruth]:
    """Draw ``n`` trajectories and their true contrasts."""
    if n < 1:
        raise ValueError("n must be positive")
    g = rng.generator
    if spec.binary:
        x11 = np.where(g.random(n) < 0.5, 1.0, -1.0)
    else:
        x11 = g.standard_normal(n)
    noise = g.standard_normal((n, spec.n_noise))
    a1 = _signed(rng, a1_prob_plus(spec, x11))
    if spec.binary:
        x21 = _signed(rng, x21_prob_plus(spec, x11, a1)).astype(float)
    else:
        x21 = g.standard_normal(n)
    a2 = _signed(rng, a2_prob_plus(spec, x11, x21))
    z = latent_mean(spec, x11, a1, x21, a2) + g.standard_normal(n)
    y2 = labels_from_latent(z)
    x1 = np.column_stack([x11, noise])
    names1 = ("x11",) + tuple(f"x1{j + 2}" for j in range(spec.n_noise))
    data = TwoStageDataset(x1, a1, x21[:, None], a2, y2, K, names1, ("x21",))
    return data, simulate_truth(spec, data)


def simulate_truth(spec: ScenarioSpec, data: TwoStageDataset) -> SimTruth:
    x11, x21 = data.x1[:, 0], data.x2[:, 0]
    psi2 = true_psi2(spec, x11, data.a1, x21)
    psi1 = true_psi1(spec, x11)
    d2, t2 = optimal_actions(psi2, TRUE_TIE_TOL)
    d1, t1 = optimal_actions(psi1, TRUE_TIE_TOL)
    return SimTruth(psi1, psi2, d1, t1, d2, t2)


# ---------------------------------------------------------------------------
# stage-1 truth

def _optimal_a2(spec, x11, a1, x21):
    return np.where(contrast(spec, x11, a1, x21) < 0, -1.0, 1.0)


def pseudo_outcome_probs(spec: ScenarioSpec, x11, a1, x21_nodes, x21_weights):
    """Pseudo-outcome distribution at (x11, a1) with x21 integrated over given nodes."""
    x11 = np.atleast_1d(np.asarray(x11, float))
    a1 = np.broadcast_to(np.asarray(a1, float), x11.shape)
    out = np.zeros((x11.size, K))
    for v, w in zip(x21_nodes, x21_weights):
        v = np.broadcast_to(v, x11.shape)
        w = np.broadcast_to(w, x11.shape)
        out += w[:, None] * category_probs(spec, x11, a1, v, _optimal_a2(spec, x11, a1, v))
    return out


def saturated_psi1(design, a1, cell_weights, cell_probs, tol: float = 1e-12):
    """Weighted ordered-probit projection of cell-level category distributions.

    ``design`` holds the per-cell columns entering the model as
    ``[main block, interaction block * a1]``; rows of ``cell_probs`` are the
    cells' category distributions and ``cell_weights`` their masses. Returns
    the fitted coefficient vector and cutpoints.
    """
    design = np.asarray(design, float)
    C, Kc = np.asarray(cell_probs).shape
    X = np.repeat(design, Kc, axis=0)
    y = np.tile(np.arange(1, Kc + 1), C)
    w = (np.asarray(cell_weights, float)[:, None] * np.asarray(cell_probs, float)).ravel()
    coef, gamma, *_ = fit_mle_design(X, y, Kc, weights=w, tol=tol)
    return coef, gamma


@functools.lru_cache(maxsize=None)
def _binary_psi1_table(spec: ScenarioSpec):
    cells = np.array([(x, a) for x in (-1.0, 1.0) for a in (-1.0, 1.0)])
    x11, a1 = cells[:, 0], cells[:, 1]
    p_plus = x21_prob_plus(spec, x11, a1)
    probs = (p_plus[:, None] * category_probs(spec, x11, a1, 1.0, _optimal_a2(spec, x11, a1, 1.0))
             + (1 - p_plus)[:, None] * category_probs(spec, x11, a1, -1.0,
                                                      _optimal_a2(spec, x11, a1, -1.0)))
    weights = 0.5 * np.where(a1 > 0, a1_prob_plus(spec, x11), 1 - a1_prob_plus(spec, x11))
    design = np.column_stack([x11, a1, x11 * a1])  # beta x11, (zeta0 + zeta1 x11) a1
    coef, _ = saturated_psi1(design, a1, weights, probs)
    return {-1.0: 2 * (coef[1] - coef[2]), 1.0: 2 * (coef[1] + coef[2])}


GRID = np.linspace(-4.0, 4.0, 161)
GH_NODES = 60


@functools.lru_cache(maxsize=None)
def _continuous_psi1_grid(spec: ScenarioSpec):
    nodes, w = np.polynomial.hermite_e.hermegauss(GH_NODES)
    w = w / w.sum()
    J = GRID.size
    x11 = np.repeat(GRID, 2)
    a1 = np.tile([-1.0, 1.0], J)
    probs = pseudo_outcome_probs(spec, x11, a1, nodes, w)
    pa = a1_prob_plus(spec, x11)
    weights = np.exp(-0.5 * x11 ** 2) * np.where(a1 > 0, pa, 1 - pa)
    weights /= weights.sum()
    cell = np.repeat(np.arange(J), 2)
    loc = np.zeros((2 * J, J))
    loc[np.arange(2 * J), cell] = 1.0
    eff = loc * a1[:, None]
    design = np.hstack([loc[:, 1:], eff])  # first cell location absorbed by the cutpoints
    coef, _ = saturated_psi1(design, a1, weights, probs)
    return 2.0 * coef[J - 1:]


def true_psi1(spec: ScenarioSpec, x11) -> np.ndarray:
    """True stage-1 contrast at baseline values ``x11``."""
    x11 = np.asarray(x11, float)
    if spec.binary:
        tab = _binary_psi1_table(spec)
        return np.where(x11 > 0, tab[1.0], tab[-1.0])
    return np.interp(x11, GRID, _continuous_psi1_grid(spec))


# ---------------------------------------------------------------------------
# evaluation

def evaluation_queries(spec: ScenarioSpec, test: TwoStageDataset):
    """Stage-1 and stage-2 query rows needed to score a fit on ``test``."""
    q1 = {"test": test.H1}
    q2 = {"test": test.H2}
    for a in (-1, 1):
        if spec.binary:
            for v in (-1, 1):
                q2[f"cf:{a:+d}:{v:+d}"] = stage2_history(test.x1, a, np.full(test.n, float(v)))
        else:
            q2[f"cf:{a:+d}"] = stage2_history(test.x1, a, test.x2)
    return q1, q2


def _regime_value(spec, test, d1, d2_of):
    """P(Y=3) when stage 1 follows d1 and stage 2 follows d2_of(a1, x21-value or None)."""
    x11 = test.x1[:, 0]
    if spec.binary:
        total = np.zeros(test.n)
        pp = x21_prob_plus(spec, x11, d1)
        for v, pv in ((1.0, pp), (-1.0, 1 - pp)):
            x21 = np.full(test.n, v)
            a2 = np.where(d1 > 0, d2_of(1, v), d2_of(-1, v))
            total += pv * p_best(spec, x11, d1, x21, a2)
        return float(total.mean())
    x21 = test.x2[:, 0]
    a2 = np.where(d1 > 0, d2_of(1, None), d2_of(-1, None))
    return float(p_best(spec, x11, d1, x21, a2).mean())


@dataclass
class MetricsReport:
    """Per-stage metrics on one test set (stage index 0 holds stage 1)."""

    estimator: str
    bias: tuple
    mse: tuple
    coverage: tuple
    pot: tuple
    value_true: tuple
    value_est: tuple
    value_obs: tuple
    replications: int = 1

    def stage(self, j: int) -> dict:
        i = j - 1
        return dict(bias=self.bias[i], mse=self.mse[i], cover=self.coverage[i], pot=self.pot[i],
                    value_true=self.value_true[i], value_est=self.value_est[i],
                    value_obs=self.value_obs[i])


def psi_metrics(est, lo, hi, truth, d_hat, d_true, ties):
    """(bias, mse, coverage, pot) of estimated contrasts against the truth."""
    est, truth = np.asarray(est, float), np.asarray(truth, float)
    if est.shape != truth.shape:
        raise ValueError("estimates and truth are misaligned")
    err = est - truth
    cover = np.mean((np.asarray(lo) <= truth) & (truth <= np.asarray(hi)))
    pot = np.mean(np.asarray(ties) | (np.asarray(d_hat) == np.asarray(d_true)))
    return float(err.mean()), float(np.mean(err ** 2)), float(cover), float(pot)


def evaluate(fit: DtrFitResult, truth: SimTruth, test: TwoStageDataset, spec: ScenarioSpec) -> MetricsReport:
    """Score a fit whose queries came from :func:`evaluation_queries`."""
    per = []
    for stage, psi, d, tie in ((1, truth.psi1, truth.d1, truth.tie1), (2, truth.psi2, truth.d2, truth.tie2)):
        e = fit.estimate(stage, "test")
        if e.point.shape != psi.shape:
            raise ValueError("fit and truth are not aligned on the test rows")
        per.append(psi_metrics(e.point, e.lo, e.hi, psi, e.actions, d, tie))
    x11, x21 = test.x1[:, 0], test.x2[:, 0]
    d2_hat = fit.actions(2, "test")
    v2 = (float(p_best(spec, x11, test.a1, x21, truth.d2).mean()),
          float(p_best(spec, x11, test.a1, x21, d2_hat).mean()),
          float(p_best(spec, x11, test.a1, x21, test.a2).mean()))

    def true_d2(a, v):
        return _optimal_a2(spec, x11, a, x21 if v is None else v)

    def est_d2(a, v):
        key = f"cf:{a:+d}" if v is None else f"cf:{a:+d}:{int(v):+d}"
        return fit.actions(2, key)

    v1 = (_regime_value(spec, test, truth.d1, true_d2),
          _regime_value(spec, test, fit.actions(1, "test"), est_d2),
          v2[2])
    cols = list(zip(*per))
    return MetricsReport(fit.estimator, *[tuple(c) for c in cols],
                         (v1[0], v2[0]), (v1[1], v2[1]), (v1[2], v2[2]))


# ---------------------------------------------------------------------------
# studies

@dataclass
class StudyConfig:
    R_ql: int = 50
    bootstrap: BootstrapConfig | None = field(default_factory=BootstrapConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    @classmethod
    def desk(cls, **kw) -> "StudyConfig":
        base = dict(R_ql=20, bootstrap=BootstrapConfig(B=200, R_ql=3), sampler=SamplerConfig.desk())
        base.update(kw)
        return cls(**base)


METRIC_KEYS = ("bias", "cover", "mse", "pot", "value_true", "value_est", "value_obs")
CSV_COLUMNS = (("scenario", "method", "stage") + METRIC_KEYS
               + tuple(f"mc_se_{k}" for k in METRIC_KEYS) + ("replications", "failures"))


@dataclass
class StudyRow:
    scenario: int
    method: str
    stage: int
    mean: dict
    mc_se: dict
    replications: int
    failures: int

    def as_csv(self) -> dict:
        out = {"scenario": self.scenario, "method": self.method, "stage": self.stage}
        for k in METRIC_KEYS:
            out[k] = self.mean[k]
            out[f"mc_se_{k}"] = self.mc_se[k]
        out["replications"] = self.replications
        out["failures"] = self.failures
        return out


@dataclass
class StudyResult:
    rows: list
    reports: dict      # (scenario, method) -> list of MetricsReport
    fits: dict         # (scenario, rep) -> {method: DtrFitResult}, when kept
    failures: dict     # (scenario, method) -> list of messages
    elapsed: float = 0.0

    def row(self, scenario: int, method: str, stage: int) -> StudyRow:
        for r in self.rows:
            if (r.scenario, r.method, r.stage) == (scenario, method, stage):
                return r
        raise KeyError((scenario, method, stage))

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.as_csv().items()})
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text


def replication_rng(seed: int, scenario: int, rep: int, purpose: str) -> SeededRng:
    return SeededRng(seed, derive_stream(purpose, scenario, rep))


def run_replication(scenario: int, rep: int, estimators, n_tr: int, n_te: int, seed: int,
                    config: StudyConfig, keep_fits: bool = False):
    """Generate one train/test pair and fit every estimator on it."""
    spec = get_scenario(scenario)
    train, _ = generate(spec, n_tr, replication_rng(seed, scenario, rep, "train"))
    test, truth = generate(spec, n_te, replication_rng(seed, scenario, rep, "test"))
    q1, q2 = evaluation_queries(spec, test)
    reports, fits, errors = {}, {}, {}
    for name in estimators:
        rng = replication_rng(seed, scenario, rep, name)
        try:
            fit = fit_estimator(name, train, rng, R_ql=config.R_ql, bootstrap=config.bootstrap,
                                sampler=config.sampler, queries1=q1, queries2=q2)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, SamplerDivergence):
                errors[name] = f"divergence: {exc}"
            else:
                errors[name] = f"{type(exc).__name__}: {exc}"
            continue
        reports[name] = evaluate(fit, truth, test, spec)
        if keep_fits:
            fit.diagnostics["train"] = train
            fit.diagnostics["test"] = test
            fit.diagnostics["truth"] = truth
            fits[name] = fit
    return reports, fits, errors


def _task(args):
    return run_replication(*args)


def run_study(scenarios, estimators, n_tr: int, n_te: int, replications: int, seed: int,
              config: StudyConfig | None = None, threads: int = 1, keep_fits: bool = False) -> StudyResult:
    """Average metrics over replications for each (scenario, estimator) pair.

    Replications draw from streams keyed by (seed, scenario, replication,
    purpose), so results do not depend on ``threads`` or execution order.
    """
    config = config or StudyConfig()
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}")
    if min(n_tr, n_te, replications) < 1:
        raise ValueError("sizes and replication count must be positive")
    t0 = time.perf_counter()
    tasks = [(s, r, tuple(estimators), n_tr, n_te, seed, config, keep_fits)
             for s in scenarios for r in range(replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    reports, fits, failures = {}, {}, {}
    for (s, r, *_), (rep_reports, rep_fits, errs) in zip(tasks, results):
        for name in estimators:
            if name in rep_reports:
                reports.setdefault((s, name), []).append(rep_reports[name])
            else:
                failures.setdefault((s, name), []).append(errs[name])
        if keep_fits:
            fits[(s, r)] = rep_fits
    rows = []
    for s in scenarios:
        for name in estimators:
            reps = reports.get((s, name), [])
            nf = len(failures.get((s, name), []))
            for stage in (1, 2):
                vals = {k: np.array([rep.stage(stage)[k] for rep in reps]) for k in METRIC_KEYS}
                mean = {k: float(v.mean()) if v.size else float("nan") for k, v in vals.items()}
                se = {k: float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
                      for k, v in vals.items()}
                rows.append(StudyRow(s, name, stage, mean, se, len(reps), nf))
    return StudyResult(rows, reports, fits, failures, time.perf_counter() - t0)
