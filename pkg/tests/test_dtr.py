import numpy as np
import pytest
from scipy import stats

from ordinal_dtr import dtr
from ordinal_dtr.dtr import (
    BootstrapConfig,
    PsiEstimate,
    SamplerConfig,
    Trajectory,
    TwoStageDataset,
    big_sampler_fit,
    credible_interval,
    fit_estimator,
    optimal_action,
    optimal_actions,
    qlearning_fit,
    resample_size,
)
from ordinal_dtr.probit import FeatureSpec, gibbs_fit
from ordinal_dtr.simlab import generate, get_scenario
from ordinal_dtr.stats import SeededRng


def sc(i, n, seed):
    return generate(get_scenario(i), n, SeededRng(seed))


def test_optimal_action_examples():
    assert optimal_action(2.0) == (1, False)
    assert optimal_action(-0.3) == (-1, False)
    assert optimal_action(0.0) == (1, True)
    assert optimal_action(5e-11, tol=1e-10)[1]
    with pytest.raises(ValueError):
        optimal_action(float("nan"))
    acts, ties = optimal_actions([2.0, -0.3, 0.0])
    assert list(acts) == [1, -1, 1] and list(ties) == [False, False, True]
    # argmax is invariant to positive rescaling
    psi = np.random.default_rng(0).normal(size=50)
    assert np.array_equal(optimal_actions(psi)[0], optimal_actions(3.7 * psi)[0])


def test_credible_interval_examples():
    assert credible_interval(np.full(10, 1.5)) == (1.5, 1.5)
    lo, hi = credible_interval(np.arange(1.0, 101.0), 0.95)
    assert lo == pytest.approx(3.475) and hi == pytest.approx(97.525)
    d = np.random.default_rng(1).normal(size=500)
    widths = [np.subtract(*credible_interval(d, lv)[::-1]) for lv in (0.5, 0.8, 0.95, 0.99)]
    assert np.all(np.diff(widths) > 0)
    with pytest.raises(ValueError):
        credible_interval([1.0])
    with pytest.raises(ValueError):
        credible_interval(d, 1.0)


def test_psi_estimate_from_draws():
    d = np.random.default_rng(2).normal(size=(400, 30)) + np.linspace(-2, 2, 30)
    e = PsiEstimate.from_draws(d)
    assert np.all((e.lo <= e.point) & (e.point <= e.hi))
    assert np.allclose(e.point, np.median(d, axis=0))
    assert np.array_equal(e.actions, np.where(e.point < 0, -1, 1))


def test_resample_size():
    assert resample_size(1000, 0.0, 0.05) == 1000
    assert resample_size(1000, 1.0, 0.05) == 720
    sizes = [resample_size(500, p, 0.05) for p in np.linspace(0, 1, 11)]
    assert np.all(np.diff(sizes) <= 0)
    with pytest.raises(ValueError):
        resample_size(100, 1.5, 0.05)
    with pytest.raises(ValueError):
        BootstrapConfig(B=50)


def test_dataset_validation():
    x1 = np.zeros((3, 2))
    with pytest.raises(ValueError, match="a2"):
        TwoStageDataset(x1, [1, -1, 1], np.zeros(3), [1, 0, 1], [1, 2, 3], 3)
    with pytest.raises(ValueError):
        TwoStageDataset(x1, [1, -1, 1], np.zeros(3), [1, -1, 1], [1, 2, 4], 3)
    with pytest.raises(ValueError):
        TwoStageDataset(x1, [1, -1, 1], np.zeros(3), [1, -1, 1], [2, 2, 2], 3)
    with pytest.raises(ValueError):
        TwoStageDataset(x1, [1, -1], np.zeros(3), [1, -1, 1], [1, 2, 3], 3)
    d = TwoStageDataset(x1, [1, -1, 1], np.zeros(3), [1, -1, 1], [1, 2, 3], 3)
    assert d.h2_names == ("x11", "x12", "a1", "x21") and d.H2.shape == (3, 4)
    t = d[1]
    assert isinstance(t, Trajectory) and t.a1 == -1 and t.y2 == 2
    again = TwoStageDataset.from_trajectories([d[i] for i in range(3)], 3)
    assert np.array_equal(again.H2, d.H2) and np.array_equal(again.y2, d.y2)


def test_matched_rows_keep_observed_outcome():
    rng = SeededRng(3)
    y2 = np.array([1, 2, 3, 1, 3])
    a2 = np.array([1, -1, 1, 1, -1])
    probs = np.tile([0.2, 0.3, 0.5], (5, 1))
    assert np.array_equal(dtr._pseudo_outcomes(rng, y2, a2, a2, probs), y2)
    d2 = np.array([1, 1, 1, -1, -1])
    for r in range(50):
        y1 = dtr._pseudo_outcomes(rng.child(r), y2, a2, d2, probs)
        assert np.array_equal(y1[a2 == d2], y2[a2 == d2])


def test_qlearning_structure_and_determinism():
    data, _ = sc(3, 400, 4)
    f1 = qlearning_fit(data, 1, SeededRng(5))
    f50 = qlearning_fit(data, 50, SeededRng(5))
    assert np.array_equal(f1.estimate(2).point, f50.estimate(2).point)
    again = qlearning_fit(data, 50, SeededRng(5))
    for k in f50.psi:
        assert np.array_equal(f50.psi[k].point, again.psi[k].point)
    only2 = qlearning_fit(data, 5, SeededRng(5), stages=(2,))
    assert (1, "train") not in only2.psi
    assert np.array_equal(only2.estimate(2).point, f1.estimate(2).point)
    with pytest.raises(ValueError):
        qlearning_fit(data, 0, SeededRng(5))


def test_qlearning_null_scenario_stage1_near_zero():
    data, _ = sc(1, 500, 6)
    q1 = {"pts": np.zeros((1, data.x1.shape[1]))}
    for R in (1, 50):
        fit = qlearning_fit(data, R, SeededRng(7), BootstrapConfig(B=200, R_ql=1), queries1=q1)
        e = fit.estimate(1, "pts")
        se = (e.hi - e.lo) / (2 * 1.96)
        assert abs(e.point[0]) < 3 * se[0]
        info = fit.diagnostics["bootstrap"]
        assert 0 <= info["p_hat"] <= 1 and info["m"] <= data.n


def test_bootstrap_fixed_m_and_interval_order():
    data, _ = sc(3, 300, 8)
    fit = qlearning_fit(data, 2, SeededRng(9), BootstrapConfig(B=100, R_ql=1, m=200), stages=(2,))
    e = fit.estimate(2)
    assert fit.diagnostics["bootstrap"]["m"] == 200
    assert np.all((e.lo <= e.point) & (e.point <= e.hi))


def test_big_sampler_bp_smoke():
    data, _ = sc(3, 300, 10)
    cfg = SamplerConfig.desk(R_bml=40)
    fit = big_sampler_fit(data, "bp", SeededRng(11), cfg, keep_imputations=True)
    imps = fit.diagnostics["imputations"]
    assert imps.shape == (40, data.n)
    # one distinct pseudo-outcome vector per stage-2 draw
    assert len({row.tobytes() for row in imps}) == 40
    for stage in (1, 2):
        e = fit.estimate(stage)
        assert e.draws.shape == (40, data.n)
        assert np.all((e.lo <= e.point) & (e.point <= e.hi))
    assert 0 <= fit.diagnostics["acceptance_stage2"] <= 1
    with pytest.raises(ValueError):
        big_sampler_fit(data, "cart", SeededRng(0), cfg)
    with pytest.raises(ValueError):
        fit_estimator("dwols", data, SeededRng(0))


def test_big_sampler_obart_smoke():
    data, _ = sc(3, 200, 12)
    cfg = SamplerConfig.desk(R_bml=20, burn2=100, burn1=50, steps1=5, M=20)
    fit = big_sampler_fit(data, "obart", SeededRng(13), cfg, queries1={"q": data.H1[:5]})
    assert fit.estimator == "bml-obart"
    assert fit.estimate(1, "q").point.shape == (5,)
    assert np.all(np.isfinite(fit.estimate(2).point))


def test_degenerate_stage2_reduces_to_single_fit(monkeypatch):
    """All stage-2 draws identical with every action matched: stage 1 is a plain fit on y2."""
    data, _ = sc(3, 1000, 14)
    R = 3000

    def fake_stage2(d, cfg, rng, q2):
        plus = {k: np.tile(d.a2.astype(float), (R, 1)) if k == "train" else np.zeros((R, v.shape[0]))
                for k, v in q2.items()}
        minus = {k: np.zeros_like(v) for k, v in plus.items()}
        gamma = np.tile([-np.inf, 0.0, 0.86, np.inf], (R, 1))
        return dtr._StagePosterior(gamma, np.arange(1, 4), 3, plus, minus), 1.0

    monkeypatch.setattr(dtr, "_fit_stage2_bp", fake_stage2)
    cfg = SamplerConfig.desk(R_bml=R, burn1=500, steps1=10)
    fit = big_sampler_fit(data, "bp", SeededRng(15), cfg, keep_imputations=True)
    assert np.all(fit.diagnostics["imputations"] == data.y2)
    spec = FeatureSpec.full(data.h1_names, intercept=True)
    ref = gibbs_fit(data.H1, data.a1, data.y2, 3, spec, R, 500, SeededRng(16), thin=10)
    ref_psi = ref.psi(data.H1[:1])[:, 0]
    assert stats.ks_2samp(fit.estimate(1).draws[:, 0], ref_psi).statistic < 0.05
