"""Replica plumbing, KS machinery, CI calibration, and the experiment drivers."""

import numpy as np
import pytest
import scipy.stats

from rapscale.errors import DegenerateLawError
from rapscale.mc import (
    ExperimentConfig,
    clt_experiment,
    condition3_diagnostic,
    fdd_experiment_d1,
    kolmogorov_p,
    ks_test,
    ks_two_sample,
    mean_with_se,
    normal_cdf,
    run_replicas,
    variance_ci,
)
from rapscale.dual import series_sample
from rapscale.weights import MixtureLaw, NeighborhoodSpec, ref1_law

REPORT_KEYS = {
    "experiment", "config", "n_samples", "mean", "var", "var_ci",
    "predicted_var", "ks_d", "ks_p", "pass", "runtime_s", "anomalies",
}


def _det_law():
    spec = NeighborhoodSpec(1, [(-1,), (0,), (1,)])
    return MixtureLaw(spec, [(0.25, 0.5, 0.25)], [1.0])


def _rng(*key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def test_kolmogorov_tail_frozen_values():
    # the 5% critical point of the asymptotic KS distribution
    assert kolmogorov_p(1.358) == pytest.approx(0.050026797334439, abs=1e-12)
    assert kolmogorov_p(0.0) == 1.0
    assert kolmogorov_p(50.0) == 0.0


def test_kolmogorov_tail_against_scipy():
    for s in (0.3, 0.5, 0.8, 1.0, 1.358, 2.0, 3.0):
        assert kolmogorov_p(s) == pytest.approx(scipy.stats.kstwobign.sf(s), rel=1e-9, abs=1e-14)


def test_ks_median_pile_statistic():
    d, _ = ks_test(np.zeros(200), lambda t: np.full_like(t, 0.5))
    assert d == pytest.approx(0.5, abs=1e-15)


def test_ks_refuses_small_samples():
    with pytest.raises(ValueError, match="100"):
        ks_test(np.zeros(99), lambda t: np.full_like(t, 0.5))
    with pytest.raises(ValueError, match="100"):
        ks_two_sample(np.zeros(99), np.zeros(500))


def test_ks_self_consistency_meta_trials():
    """Exact-null samples should pass at alpha=0.01 in at least 98 of 100 trials."""
    rng = _rng(100)
    wins = 0
    for _ in range(100):
        x = rng.standard_normal(10_000)
        _, p = ks_test(x, normal_cdf)
        wins += p > 0.01
    assert wins >= 98


def test_ks_two_sample_detects_shift():
    rng = _rng(101)
    a = rng.standard_normal(800)
    _, p_same = ks_two_sample(a, rng.standard_normal(800))
    _, p_shift = ks_two_sample(a, rng.standard_normal(800) + 0.5)
    assert p_same > 0.01
    assert p_shift < 1e-6


def test_variance_ci_calibration():
    """95% variance CIs on normal self-samples cover 1 at a 90-99% rate."""
    rng = _rng(102)
    hits = 0
    for _ in range(200):
        _, lo, hi = variance_ci(rng.standard_normal(400), level=0.95)
        hits += lo <= 1.0 <= hi
    assert 0.90 * 200 <= hits <= 0.99 * 200


def test_variance_ci_half_width_positive_even_when_degenerate():
    v, lo, hi = variance_ci(np.ones(50))
    assert v == 0.0
    assert hi > v > lo or (hi > 0 > lo)


def test_mean_with_se_basic():
    m, se = mean_with_se(np.array([1.0, 2.0, 3.0]))
    assert m == 2.0
    assert se == pytest.approx(1.0 / np.sqrt(3.0))


def test_config_requires_seed():
    with pytest.raises(ValueError, match="seed"):
        ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=100, seed=None)


def test_config_rejects_bad_fields():
    with pytest.raises(ValueError):
        ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=0, seed=1)
    with pytest.raises(ValueError):
        ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=100, seed=1, sampler="magic")
    with pytest.raises(ValueError):
        ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=100, seed=1, alpha=2.0)
    with pytest.raises(ValueError):
        ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=100, seed=1, A=0.5)


def test_run_replicas_deterministic_across_threads():
    def smp(rng, i):
        return rng.standard_normal() + i * 0.0
    cfg1 = ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=64, seed=9)
    cfg8 = ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=64, seed=9, threads=8)
    a = run_replicas(cfg1, smp)
    b = run_replicas(cfg1, smp)
    c = run_replicas(cfg8, smp)
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_run_replicas_zero_variance_law_gives_zeros():
    law = _det_law()
    cfg = ExperimentConfig(law=law, lam=1.0, kind="clt", R=120, seed=10)
    vals = run_replicas(cfg, lambda rng, i: series_sample(law, 1.0, (3,), 6, rng).value)
    assert np.all(vals == 0.0)


def test_clt_experiment_small_run_schema_and_pass():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=300, seed=7, x=4, A=2.0)
    rep = clt_experiment(cfg)
    d = rep.to_dict()
    assert set(d) == REPORT_KEYS
    assert d["pass"] and 0.0 <= d["ks_p"] <= 1.0
    lo, hi = d["var_ci"]
    assert lo < rep.detail["exact_var"] < hi
    # limit constant for this truncation level, frozen
    assert d["predicted_var"] == pytest.approx(0.25435206026408544, rel=1e-9)
    assert d["config"]["law"]["family"] == "dirichlet"


def test_clt_experiment_forward_sampler_agrees():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="clt", R=300, seed=7,
                           x=4, A=2.0, sampler="forward")
    rep = clt_experiment(cfg)
    assert rep.passed


def test_clt_refuses_degenerate_law():
    cfg = ExperimentConfig(law=_det_law(), lam=1.0, kind="clt", R=200, seed=1, x=4, A=2.0)
    with pytest.raises(DegenerateLawError):
        clt_experiment(cfg)


def test_clt_report_bit_identical_across_threads():
    base = dict(law=ref1_law(), lam=1.0, kind="clt", R=150, seed=21, x=3, A=2.0)
    r1 = clt_experiment(ExperimentConfig(**base)).to_dict()
    r2 = clt_experiment(ExperimentConfig(**base, threads=4)).to_dict()
    r1.pop("runtime_s"), r2.pop("runtime_s")
    r1["config"].pop("threads"), r2["config"].pop("threads")
    assert r1 == r2


def test_fdd_small_run_structure():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="fdd", R=300, seed=11,
                           times=(0.5, 1.0), n=8, A=2.0)
    rep = fdd_experiment_d1(cfg)
    emp = np.array(rep.detail["empirical_cov"])
    assert emp.shape == (2, 2)
    assert np.allclose(emp, emp.T)
    assert rep.detail["cov_covered"]
    assert len(rep.detail["probes"]) == 3
    for probe in rep.detail["probes"]:
        assert 0.0 <= probe["ks_p"] <= 1.0 and probe["covered"]
    assert np.allclose(rep.detail["limit_cov"], [[0.5, 0.5], [0.5, 1.0]])


def test_fdd_single_time_reduces_to_variance_check():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="fdd", R=300, seed=12,
                           times=(1.0,), n=6, A=2.0)
    rep = fdd_experiment_d1(cfg)
    assert rep.passed
    assert np.array(rep.detail["empirical_cov"]).shape == (1, 1)
    assert rep.predicted_var == pytest.approx(1.0)


def test_fdd_rejects_too_many_times():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="fdd", R=200, seed=13,
                           times=(0.2, 0.4, 0.6, 0.8, 1.0), n=32, A=2.0)
    with pytest.raises(ValueError, match="4"):
        fdd_experiment_d1(cfg)


def test_condition3_deterministic_law_all_zero():
    cfg = ExperimentConfig(law=_det_law(), lam=1.0, kind="condition3", R=110,
                           seed=3, x=4, A=2.0)
    rep = condition3_diagnostic(cfg)
    assert rep.passed
    for row in rep.detail["rows"]:
        assert abs(row["mean"]) < 1e-12 and row["var"] < 1e-24


def test_condition3_trend_small_scale():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="condition3", R=150,
                           seed=5, x=(4, 8), A=2.0)
    rep = condition3_diagnostic(cfg)
    assert rep.detail["mean_ok"]
    rows = rep.detail["rows"]
    assert [r["pair"] for r in rows] == ["x0", "00", "x0", "00"]
    assert rows[0]["var"] > rows[2]["var"]


def test_kind_mismatch_rejected():
    cfg = ExperimentConfig(law=ref1_law(), lam=1.0, kind="fdd", R=200, seed=1,
                           times=(1.0,), n=4, A=2.0)
    with pytest.raises(ValueError, match="clt"):
        clt_experiment(cfg)
