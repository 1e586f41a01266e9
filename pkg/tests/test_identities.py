"""Exact second-moment identities: frozen DP values, polarization, scan structure."""

import numpy as np
import pytest

from rapscale.identities import (
    corollary1_cov_scan_d1,
    corollary1_cov_scan_d2,
    cross_second_moment,
    prop1_scan_d1,
    total_second_moment,
    truncated_second_moment,
)
from rapscale.limits import h_of_A, limiting_cov_d1, limiting_cov_d2
from rapscale.weights import ref1_law, ref2_law

LAW1 = ref1_law()
LAW2 = ref2_law()


def test_single_step_value_is_twice_sigma2():
    # one term: 2 s2 (P_0(D_0=0) - P_x(D_0=0)) = 2 s2 for any x != 0
    assert truncated_second_moment(LAW1, 1.0, (5,), 1) == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert truncated_second_moment(LAW2, (1.0, 0.0), (2, 0), 1) == pytest.approx(2.0 / 15.0, abs=1e-15)


def test_frozen_value_reference_case():
    # locked dynamic-programming value used by the sampler acceptance check
    v = truncated_second_moment(LAW1, 1.0, (8,), 256)
    assert v == pytest.approx(2.385236566616485, abs=1e-12)


def test_truncated_moment_monotone_in_horizon():
    vals = [truncated_second_moment(LAW1, 1.0, (3,), n) for n in (1, 2, 4, 8, 16, 32)]
    assert np.all(np.diff(vals) > 0.0)


def test_rejects_origin():
    with pytest.raises(ValueError):
        truncated_second_moment(LAW1, 1.0, (0,), 4)


def test_cross_moment_polarization():
    """Cross moments are half of T(x)+T(y)-T(x-y), exactly, at any horizon."""
    lam, n = 1.0, 24
    for x, y in (((2,), (5,)), ((-3,), (4,))):
        direct = cross_second_moment(LAW1, lam, x, y, n)
        t = truncated_second_moment
        pol = 0.5 * (t(LAW1, lam, x, n) + t(LAW1, lam, y, n)
                     - t(LAW1, lam, (x[0] - y[0],), n))
        assert direct == pytest.approx(pol, rel=1e-12)
        assert direct == pytest.approx(cross_second_moment(LAW1, lam, y, x, n), rel=1e-12)


def test_cross_moment_2d_polarization():
    lam, n, x, y = (1.0, 0.0), 12, (2, 1), (-1, 2)
    direct = cross_second_moment(LAW2, lam, x, y, n)
    t = truncated_second_moment
    pol = 0.5 * (t(LAW2, lam, x, n) + t(LAW2, lam, y, n)
                 - t(LAW2, lam, (x[0] - y[0], x[1] - y[1]), n))
    assert direct == pytest.approx(pol, rel=1e-12)


def test_cross_moment_rejects_equal_sites():
    with pytest.raises(ValueError):
        cross_second_moment(LAW1, 1.0, (2,), (2,), 8)


def test_total_moment_d1_approaches_linear_growth_from_above():
    ratios = []
    for x in (4, 8, 16):
        res = total_second_moment(LAW1, 1.0, (x,))
        assert res.converged
        ratios.append(res.value / x)
    # limit is c(1) = 1/3; finite-x values sit above and decrease toward it
    assert np.all(np.diff(ratios) < 0.0)
    assert ratios[-1] > 1.0 / 3.0
    assert ratios[0] == pytest.approx(0.3811978, abs=1e-4)
    assert ratios[-1] == pytest.approx(1.0 / 3.0, rel=0.05)


def test_total_moment_exceeds_any_truncation():
    res = total_second_moment(LAW1, 1.0, (4,))
    assert res.value > truncated_second_moment(LAW1, 1.0, (4,), 64)
    assert res.partial <= res.value or res.tail_estimate < 1e-4


def test_prop1_scan_structure_and_ratios():
    rep = prop1_scan_d1(LAW1, 1.0, 2.0, (16, 32))
    assert len(rep.rows) == 2
    h2 = h_of_A(1.0 / 6.0, 0.75, 4.0 / 3.0, 2.0)
    for row, x in zip(rep.rows, (16, 32)):
        assert row.horizon == 2 * x * x
        assert row.normalized == pytest.approx(row.raw / x, rel=1e-12)
        assert row.predicted == pytest.approx(h2, rel=1e-12)
    # convergence from above at rate ~ 1/x
    r16 = rep.rows[0].normalized / h2
    r32 = rep.rows[1].normalized / h2
    assert 1.0 < r32 < r16
    assert r32 == pytest.approx(1.0204, abs=2e-3)


def test_cov_scan_d1_diagonal_matches_truncated_moment():
    times = (0.5, 1.0)
    scan = corollary1_cov_scan_d1(LAW1, 1.0, 4.0, 8, times)
    assert scan.horizon == 4 * 64
    sites = [int(np.floor(8 * t)) for t in times]
    for j, s in enumerate(sites):
        direct = truncated_second_moment(LAW1, 1.0, (s,), scan.horizon)
        assert scan.matrix[j, j] == pytest.approx(direct, rel=1e-12)
    off = cross_second_moment(LAW1, 1.0, (sites[0],), (sites[1],), scan.horizon)
    assert scan.matrix[0, 1] == pytest.approx(off, rel=1e-12)
    assert np.allclose(scan.matrix, scan.matrix.T)
    assert np.allclose(scan.predicted, limiting_cov_d1(times))
    assert np.allclose(scan.normalized, scan.matrix / scan.normalizer)


def test_cov_scan_d1_rejects_colliding_times():
    with pytest.raises(ValueError, match="separate"):
        corollary1_cov_scan_d1(LAW1, 1.0, 2.0, 4, (0.1, 0.2))


def test_cov_scan_d2_small_case_structure():
    zs = ((1, 0), (1, 1))
    scan = corollary1_cov_scan_d2(LAW2, (1.0, 0.0), zs, 4)
    pts = [(int(4 ** abs(a)), int(4 ** abs(b))) for a, b in zs]
    assert scan.horizon == max(p[0] ** 2 + p[1] ** 2 for p in pts)
    for j, p in enumerate(pts):
        direct = truncated_second_moment(LAW2, (1.0, 0.0), p, scan.horizon)
        assert scan.matrix[j, j] == pytest.approx(direct, rel=1e-12)
    assert np.allclose(scan.predicted, limiting_cov_d2(zs))
    assert scan.normalizer == pytest.approx(scan.matrix[0, 0] / scan.normalized[0, 0], rel=1e-12)
