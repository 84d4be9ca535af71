import math

import numpy as np
import pytest
from scipy import stats

from ordinal_dtr import obart
from ordinal_dtr.bart import BartHyper
from ordinal_dtr.cutpoints import CutPoints
from ordinal_dtr.obart import (
    ObartHyper,
    ObartSampler,
    cutpoint_log_posterior,
    mh_cutpoint_step,
    posterior_category_probs,
)
from ordinal_dtr.probit import FeatureSpec, fit_mle_design, gibbs_fit, prob_matrix
from ordinal_dtr.stats import SeededRng

GAMMA = np.array([-np.inf, 0.0, 0.86, np.inf])


def linear_data(n, seed, coef=(0.8, -0.5)):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, 2))
    z = X @ np.asarray(coef) + g.normal(size=n)
    y = 1 + (z > -0.43).astype(int) + (z > 0.43)
    return X, y


def test_log_posterior_matches_direct_likelihood():
    g = np.random.default_rng(0)
    f = g.normal(size=100) + 0.43
    y = g.integers(1, 4, size=100)
    direct = np.sum(np.log(stats.norm.cdf(GAMMA[y] - f) - stats.norm.cdf(GAMMA[y - 1] - f)))
    assert cutpoint_log_posterior(CutPoints(GAMMA, pinned=True), f, y) == pytest.approx(direct, abs=1e-10)
    # the same data in the unpinned convention: shift cutpoints and fits together
    shifted = GAMMA - 0.43
    assert cutpoint_log_posterior(shifted, f - 0.43, y) == pytest.approx(direct, abs=1e-10)


def test_log_posterior_limits():
    assert cutpoint_log_posterior(GAMMA, np.array([1e6]), np.array([3])) == pytest.approx(0.0)
    bad = GAMMA.copy()
    bad[2] = -0.5
    assert cutpoint_log_posterior(bad, np.zeros(3), np.array([1, 2, 3])) == -np.inf


def _sampler(X, y, K, seed=0, **kw):
    return ObartSampler(X, y, ObartHyper(K=K, bart=BartHyper(M=kw.pop("M", 20)), **kw), SeededRng(seed))


def test_two_categories_cutpoint_step_is_noop():
    X, y = linear_data(200, 1)
    y2 = np.where(y > 1, 2, 1)
    s = _sampler(X, y2, 2)
    before = s.state.gamma.copy()
    assert mh_cutpoint_step(SeededRng(1), s.state, s.hyper, y2) is True
    assert np.array_equal(before, s.state.gamma)


def test_tiny_step_is_always_accepted():
    X, y = linear_data(200, 2)
    s = _sampler(X, y, 3, sigma_mh=1e-9)
    acc = [mh_cutpoint_step(SeededRng(i), s.state, s.hyper, y) for i in range(200)]
    assert all(acc)


def test_frozen_forest_cutpoint_stationary_distribution():
    X, y = linear_data(200, 3)
    s = _sampler(X, y, 3, sigma_mh=0.3)
    rng = SeededRng(3)
    n = 100_000
    draws = np.empty(n)
    for t in range(n):
        mh_cutpoint_step(rng, s.state, s.hyper, y)
        draws[t] = s.state.gamma[2]
    draws = draws[1000:]
    # grid quadrature of the (flat-prior) posterior of gamma_2 given the frozen fits
    means = s.state.latent_means()
    grid = np.linspace(1e-4, 4.0, 4001)
    logp = np.array([cutpoint_log_posterior(np.array([-np.inf, 0.0, c, np.inf]), means, y) for c in grid])
    dens = np.exp(logp - logp.max())
    edges = np.linspace(grid[0], grid[-1], 41)
    mass = np.array([dens[(grid >= a) & (grid < b)].sum() for a, b in zip(edges[:-1], edges[1:])])
    mass /= mass.sum()
    hist = np.histogram(draws, bins=edges)[0] / draws.size
    assert 0.5 * np.abs(hist - mass).sum() < 0.05
    assert 0.0 <= s.acceptance_rate <= 1.0


def test_intercept_only_frequencies():
    g = np.random.default_rng(4)
    n = 2000
    y = g.choice([1, 2, 3], p=[0.25, 0.45, 0.30], size=n)
    X = np.zeros((n, 2))
    post = obart.fit(X, y, 3, n_draws=500, burn_in=300, rng=SeededRng(4),
                     hyper=ObartHyper(K=3, bart=BartHyper(M=50)))
    emp = np.bincount(y, minlength=4)[1:] / n
    pm = post.category_probs("train").mean(axis=(0, 1))
    assert np.all(np.abs(pm - emp) < 0.02)
    simplexes = posterior_category_probs(post, ("train", 0))
    assert all(abs(s.probs.sum() - 1) < 1e-12 for s in simplexes)
    avg = np.mean([s.probs for s in simplexes], axis=0)
    assert avg.sum() == pytest.approx(np.mean([s.probs.sum() for s in simplexes]))
    assert np.all(np.abs(avg - emp) < 0.02)
    assert np.all(post.gamma[:, 1] == 0.0)


def test_agrees_with_ordered_probit_on_linear_data():
    X, y = linear_data(2000, 5)
    grid = np.array([[a, b] for a in np.linspace(-1.5, 1.5, 7) for b in np.linspace(-1.5, 1.5, 7)])
    post = obart.fit(X, y, 3, n_draws=600, burn_in=400, rng=SeededRng(5), queries={"grid": grid})
    p_obart = post.category_probs("grid").mean(axis=0)
    coef, gamma, *_ = fit_mle_design(X, y, 3)
    p_mle = prob_matrix(gamma, grid @ coef)
    assert np.sqrt(np.mean((p_obart - p_mle) ** 2)) <= 0.05


def test_monotone_signal_gives_monotone_fit():
    g = np.random.default_rng(6)
    n = 2000
    X = g.normal(size=(n, 2))
    z = 1.2 * X[:, 0] + g.normal(size=n)
    y = 1 + (z > -0.43).astype(int) + (z > 0.43)
    grid = np.column_stack([np.linspace(-1.5, 1.5, 13), np.zeros(13)])
    post = obart.fit(X, y, 3, n_draws=500, burn_in=400, rng=SeededRng(6),
                     hyper=ObartHyper(K=3, bart=BartHyper(M=50)), queries={"grid": grid})
    f = post.latent_means("grid").mean(axis=0)
    assert np.all(np.diff(f) >= -0.02)


def test_bracketing_and_pin_hold_every_iteration():
    X, y = linear_data(300, 7)
    s = _sampler(X, y, 3, seed=7)
    for _ in range(200):
        s.step()
        g = s.state.gamma
        assert g[1] == 0.0 and np.all(np.diff(g) > 0)
        assert np.all((g[y - 1] < s.state.z) & (s.state.z <= g[y]))
        assert s.state.forest.check_cache()


def test_single_leaf_collapses_to_intercept_probit():
    g = np.random.default_rng(8)
    n = 1500
    y = g.choice([1, 2, 3], p=[0.3, 0.4, 0.3], size=n)
    X = np.zeros((n, 1))
    hyper = ObartHyper(K=3, bart=BartHyper(M=1))
    post = obart.fit(X, y, 3, n_draws=4000, burn_in=500, rng=SeededRng(8), hyper=hyper)
    spec = FeatureSpec((), ("(intercept)",), ())
    ref = gibbs_fit(np.zeros((n, 0)), np.ones(n), y, 3, spec, n_draws=4000, burn_in=500, rng=SeededRng(9))

    def mean_and_mcse(x):
        b = x.reshape(40, -1).mean(1)
        return x.mean(), b.std(ddof=1) / math.sqrt(40)

    m1, s1 = mean_and_mcse(post.gamma[:, 2])
    m2, s2 = mean_and_mcse(ref.gamma[:, 2])
    assert abs(m1 - m2) < 3 * math.hypot(s1, s2)


def test_input_validation_and_warm_restart():
    X, y = linear_data(100, 9)
    with pytest.raises(ValueError):
        ObartHyper(K=1)
    with pytest.raises(ValueError):
        ObartSampler(X, np.ones(100, dtype=int), ObartHyper(K=3), SeededRng(0))
    with pytest.raises(ValueError):
        ObartSampler(X, y + 5, ObartHyper(K=3), SeededRng(0))
    s = _sampler(X, y, 3)
    s.burn(50)
    new = 4 - y
    s.set_labels(new)
    g = s.state.gamma
    assert np.all((g[new - 1] < s.state.z) & (s.state.z <= g[new]))
    with pytest.raises(ValueError):
        s.query(np.zeros((3, 5)))
    assert ObartHyper(K=4).sigma_mh == pytest.approx(0.125)
