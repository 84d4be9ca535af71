import warnings

import numpy as np
import pytest
from scipy import optimize, stats

from ordinal_dtr.cutpoints import CutPoints, ordinal_loglik
from ordinal_dtr.probit import (
    FeatureSpec,
    LinearProbitModel,
    category_probs,
    collapse_empty,
    fit_mle,
    gibbs_fit,
    latent_mean,
    prob_matrix,
    psi,
)
from ordinal_dtr.stats import SeededRng, sample_categories

from test_stats import cdf_oracle

NAMES = ("x1", "x2")
BETA = np.array([0.5, -0.3])
ZETA = np.array([0.4, 0.2, -0.3])
GAMMA = np.array([-np.inf, -0.5, 0.6, np.inf])


def truth_model():
    return LinearProbitModel(BETA, ZETA, CutPoints(GAMMA), FeatureSpec.full(NAMES, intercept=False))


def generate(n, seed, model=None):
    """Draw labels from category_probs of a known model."""
    model = model or truth_model()
    g = np.random.default_rng(seed)
    H = g.normal(size=(n, 2))
    a = np.where(g.random(n) < 0.5, 1, -1)
    f = latent_mean(model, H, a)
    y = sample_categories(SeededRng(seed), prob_matrix(model.cutpoints.gamma, f))
    return H, a, y


def test_latent_mean_examples():
    spec = FeatureSpec(("h",), ("h",), ("h",))
    zero = LinearProbitModel([0.0], [0.0], CutPoints(GAMMA), spec)
    assert latent_mean(zero, np.array([3.0]), 1) == 0.0
    m = LinearProbitModel([0.5], [0.5], CutPoints(GAMMA), spec)
    assert latent_mean(m, np.array([1.0]), 1) == pytest.approx(1.0)
    model = truth_model()
    H = np.random.default_rng(0).normal(size=(50, 2))
    diff = latent_mean(model, H, 1) - latent_mean(model, H, -1)
    assert np.allclose(diff, 2 * model.spec.interaction_block(H) @ ZETA)
    assert np.allclose(diff, psi(model, H))


def test_baseline_probabilities():
    spec = FeatureSpec(("h",), ("h",), ("h",))
    m = LinearProbitModel([0.0], [0.0], CutPoints.from_interior([-0.43, 0.43]), spec)
    p = category_probs(m, [0.0], 1).probs
    lo = cdf_oracle(-0.43)
    exact = np.array([lo, 1 - 2 * lo, lo])
    assert np.allclose(p, exact, atol=1e-12)
    assert np.allclose(p, [0.33360, 0.33280, 0.33360], atol=5e-6)
    big = prob_matrix(m.cutpoints.gamma, [40.0])[0]
    assert big[-1] == pytest.approx(1.0) and big[0] < 1e-300


def test_probabilities_valid_for_random_models():
    g = np.random.default_rng(1)
    for _ in range(1000):
        K = g.integers(2, 6)
        gamma = np.concatenate([[-np.inf], np.sort(g.normal(scale=2, size=K - 1)), [np.inf]])
        if np.any(np.diff(gamma[1:-1]) <= 0):
            continue
        p = prob_matrix(gamma, g.normal(scale=3, size=4))
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0)
        assert np.all(np.diff(np.cumsum(p, axis=1), axis=1) >= -1e-15)


def test_loglik_shift_invariance():
    H, a, y = generate(500, 2)
    f = latent_mean(truth_model(), H, a)
    c = 0.73
    shifted = GAMMA + c
    assert ordinal_loglik(GAMMA, f, y) == pytest.approx(ordinal_loglik(shifted, f + c, y), rel=1e-12)


def test_mle_recovers_generating_model():
    H, a, y = generate(5000, 3)
    fit = fit_mle(H, a, y, 3, FeatureSpec.full(NAMES, intercept=False))
    est = np.concatenate([fit.coef, fit.cutpoints.interior])
    truth = np.concatenate([BETA, ZETA, GAMMA[1:-1]])
    se = np.sqrt(np.diag(fit.cov))
    assert np.all(np.abs(est - truth) < 3 * se)
    f_true = latent_mean(truth_model(), H, a)
    assert fit.loglik >= ordinal_loglik(GAMMA, f_true, y)


def test_mle_null_model():
    g = np.random.default_rng(4)
    H = g.normal(size=(3000, 2))
    a = np.where(g.random(3000) < 0.5, 1, -1)
    y = g.integers(1, 4, size=3000)
    fit = fit_mle(H, a, y, 3, FeatureSpec.full(NAMES, intercept=False))
    se = np.sqrt(np.diag(fit.cov))[: fit.coef.size]
    assert np.all(np.abs(fit.coef) < 3 * se)


def _binary_probit_newton(X, y01, iters=50):
    """Plain Newton-Raphson for binary probit with an intercept column in X."""
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        eta = X @ b
        p = np.clip(stats.norm.cdf(eta), 1e-300, 1 - 1e-16)
        d = stats.norm.pdf(eta)
        g = X.T @ (d * (y01 - p) / (p * (1 - p)))
        # expected information (Fisher scoring)
        w = d ** 2 / (p * (1 - p))
        step = np.linalg.solve(X.T @ (X * w[:, None]), g)
        b += step
        if np.max(np.abs(step)) < 1e-13:
            break
    return b


def test_two_categories_match_binary_probit():
    model = LinearProbitModel(BETA, ZETA, CutPoints.from_interior([0.2]),
                              FeatureSpec.full(NAMES, intercept=False))
    H, a, y = generate(2000, 5, model)
    spec = FeatureSpec.full(NAMES, intercept=False)
    fit = fit_mle(H, a, y, 2, spec)
    X = np.hstack([np.ones((H.shape[0], 1)), spec.design(H, a)])
    b = _binary_probit_newton(X, (y == 2).astype(float))
    assert np.allclose(fit.coef, b[1:], atol=1e-5)
    assert fit.cutpoints.interior[0] == pytest.approx(-b[0], abs=1e-5)


def test_mle_agrees_with_generic_optimizer():
    H, a, y = generate(800, 6)
    spec = FeatureSpec.full(NAMES, intercept=False)
    fit = fit_mle(H, a, y, 3, spec)
    X = spec.design(H, a)

    def nll(theta):
        g = np.array([-np.inf, theta[-2], theta[-2] + np.exp(theta[-1]), np.inf])
        return -ordinal_loglik(g, X @ theta[:-2], y)

    res = optimize.minimize(nll, np.zeros(X.shape[1] + 2), method="BFGS", options={"gtol": 1e-8})
    assert fit.loglik == pytest.approx(-res.fun, abs=1e-5)


def test_collapse_empty_category():
    y = np.array([1, 3, 3, 1, 4])
    y2, K, labels = collapse_empty(y, 4)
    assert K == 3 and list(labels) == [1, 3, 4] and list(y2) == [1, 2, 2, 1, 3]


def test_gibbs_posterior_covers_truth():
    H, a, y = generate(5000, 7)
    spec = FeatureSpec.full(NAMES, intercept=True)
    post = gibbs_fit(H, a, y, 3, spec, n_draws=1500, burn_in=500, rng=SeededRng(7))
    # pinned parameterisation: intercept = -gamma_1, gamma_2 shifts by the same amount
    truth = np.concatenate([[-GAMMA[1]], BETA, ZETA, [GAMMA[2] - GAMMA[1]]])
    draws = np.hstack([post.beta, post.zeta, post.gamma[:, 2:3]])
    z = np.abs(draws.mean(0) - truth) / draws.std(0)
    assert np.all(z < 3)
    assert np.all(post.gamma[:, 1] == 0.0)
    assert np.all(np.diff(post.gamma[:, 1:-1], axis=1) > 0)
    assert 0.0 <= post.acceptance_rate <= 1.0


def test_gibbs_constant_only_predictive_frequencies():
    g = np.random.default_rng(8)
    y = g.choice([1, 2, 3], p=[0.2, 0.5, 0.3], size=2000)
    H = np.zeros((2000, 0))
    spec = FeatureSpec((), ("(intercept)",), ())
    post = gibbs_fit(H, np.ones(2000), y, 3, spec, n_draws=1000, burn_in=300, rng=SeededRng(8))
    p = post.category_probs(H[:1], 1)[:, 0, :].mean(0)
    emp = np.bincount(y, minlength=4)[1:] / y.size
    assert np.all(np.abs(p - emp) < 0.02)


def test_gibbs_chains_agree():
    H, a, y = generate(2000, 9)
    spec = FeatureSpec.full(NAMES, intercept=True)
    posts = [gibbs_fit(H, a, y, 3, spec, n_draws=1000, burn_in=300, rng=SeededRng(s)) for s in (1, 2)]
    d = [np.hstack([p.beta, p.zeta, p.gamma[:, 2:3]]) for p in posts]
    # batch-means MC standard errors
    def mcse(x):
        b = x.reshape(20, -1, x.shape[1]).mean(1)
        return b.std(0, ddof=1) / np.sqrt(20)
    diff = np.abs(d[0].mean(0) - d[1].mean(0))
    assert np.all(diff < 4 * np.sqrt(mcse(d[0]) ** 2 + mcse(d[1]) ** 2))


def test_mle_rejects_intercept_and_warns_on_separation():
    H, a, y = generate(200, 10)
    with pytest.raises(ValueError):
        fit_mle(H, a, y, 3, FeatureSpec.full(NAMES, intercept=True))
    # perfectly separated labels
    y_sep = np.where(H[:, 0] > 0, 3, 1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        fit_mle(H, a, y_sep, 3, FeatureSpec.full(NAMES, intercept=False))
    assert any("separation" in str(x.message) for x in w)
