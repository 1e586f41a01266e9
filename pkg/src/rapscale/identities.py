"""Exact finite-size second-moment identities for the interface series, and
the normalized scans that approach the scaling constants.

Everything here is deterministic: variances and cross moments of the
truncated series come from the difference-chain DP,

    E(sum_{i<=N} (W_i^x - W_i^0) lambda)^2
        = 2 sigma^2 sum_{i=1}^{N} [P_0(D_{i-1}=0) - P_x(D_{i-1}=0)],

with the i-1 shift used consistently (term i reads the chain after i-1
steps); the Monte Carlo agreement tests are sensitive to this off-by-one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chains import chain_kernel, return_prob_table
from .errors import BudgetError
from .limits import c1, c2, h_of_A, limiting_cov_d1, limiting_cov_d2
from .potential import frakA, potential_context
from .weights import compute_moments, d_origin_step_law, drift_stats, slope_vector

__all__ = [
    "ScanRow",
    "ScanReport",
    "CovScanResult",
    "TotalMomentResult",
    "truncated_second_moment",
    "cross_second_moment",
    "total_second_moment",
    "prop1_scan_d1",
    "corollary1_cov_scan_d1",
    "corollary1_cov_scan_d2",
]


@dataclass(frozen=True)
class ScanRow:
    scale: object          # x, |x|, or a pair label
    horizon: int
    raw: float
    normalized: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.normalized / self.predicted if self.predicted != 0.0 else float("nan")


@dataclass(frozen=True)
class ScanReport:
    rows: tuple
    label: str


@dataclass(frozen=True)
class CovScanResult:
    matrix: np.ndarray            # raw second/cross moments
    normalized: np.ndarray        # matrix / (c * P_n)
    predicted: np.ndarray
    normalizer: float
    horizon: int


@dataclass(frozen=True)
class TotalMomentResult:
    value: float               # extrapolated when possible, else the partial sum
    partial: float             # raw partial sum at the final horizon
    horizon: int
    tail_estimate: float
    converged: bool


def _prep(law, lam):
    mom = compute_moments(law)
    lamv = slope_vector(lam, mom.spec.dimension)
    _, sigma2, _ = drift_stats(mom, lamv)
    return mom, chain_kernel(mom), sigma2


def _site(x, dim):
    x = np.atleast_1d(np.asarray(x, dtype=int)).ravel()
    if x.size != dim:
        raise ValueError(f"site has {x.size} coordinates, expected {dim}")
    return tuple(int(v) for v in x)


def _diff_table(kernel, sites, n_steps, budget):
    """psi_k(s) = P_s(D_k = 0) for k = 0..n_steps-1, one adjoint run."""
    return return_prob_table(kernel, sites, n_steps - 1, budget=budget)


def truncated_second_moment(law, lam, x, N, budget=None) -> float:
    """Exact variance of the N-term site-x series increment sum."""
    if N < 1:
        raise ValueError("N must be at least 1")
    mom, kern, sigma2 = _prep(law, lam)
    x = _site(x, mom.spec.dimension)
    if all(v == 0 for v in x):
        raise ValueError("x must be nonzero")
    origin = (0,) * mom.spec.dimension
    table = _diff_table(kern, [origin, x], N, budget)
    return 2.0 * sigma2 * float(np.sum(table[:, 0] - table[:, 1]))


def cross_second_moment(law, lam, x, y, N, budget=None) -> float:
    """Exact cross moment of the site-x and site-y truncated series."""
    if N < 1:
        raise ValueError("N must be at least 1")
    mom, kern, sigma2 = _prep(law, lam)
    dim = mom.spec.dimension
    x, y = _site(x, dim), _site(y, dim)
    origin = (0,) * dim
    if x == origin or y == origin or x == y:
        raise ValueError("x and y must be distinct and nonzero")
    diff = tuple(a - b for a, b in zip(x, y))
    table = _diff_table(kern, [origin, diff, x, y], N, budget)
    comb = table[:, 0] + table[:, 1] - table[:, 2] - table[:, 3]
    return sigma2 * float(np.sum(comb))


def total_second_moment(law, lam, x, tol=1e-6, budget=None, n_start=256,
                        n_cap=1 << 20) -> TotalMomentResult:
    """Untruncated series variance by horizon doubling with extrapolation.

    The partial sums approach the total with a C/sqrt(n) tail in d=1 (C
    grows like x^2, far too slow to sum out directly) and a C/n tail in
    d=2; a tail-model fit over the last three doublings removes the
    leading terms, and the run stops once consecutive extrapolants agree
    within tol.  Returns a flagged partial result when the cell budget or
    the horizon cap is reached first.
    """
    mom, kern, sigma2 = _prep(law, lam)
    dim = mom.spec.dimension
    x = _site(x, dim)
    if all(v == 0 for v in x):
        raise ValueError("x must be nonzero")
    if sigma2 == 0.0:
        return TotalMomentResult(0.0, 0.0, 0, 0.0, True)
    origin = (0,) * dim
    n = n_start
    best = None
    prev_extrap = None
    while True:
        try:
            table = _diff_table(kern, [origin, x], n, budget)
        except BudgetError:
            if best is None:
                raise
            return best
        diff = np.cumsum(table[:, 0] - table[:, 1])
        partial = 2.0 * sigma2 * float(diff[-1])
        ns = np.array([n // 4, n // 2, n], dtype=float)
        t = ns ** -0.5 if dim == 1 else 1.0 / ns
        design = np.stack([np.ones(3), t, t ** 3 if dim == 1 else t ** 2], axis=-1)
        samples = 2.0 * sigma2 * diff[[n // 4 - 1, n // 2 - 1, n - 1]]
        extrap = float(np.linalg.solve(design, samples)[0])
        tail = abs(extrap - prev_extrap) if prev_extrap is not None else float("inf")
        best = TotalMomentResult(extrap, partial, n, tail, tail < tol)
        if best.converged or n >= n_cap:
            return best
        prev_extrap = extrap
        n *= 2


def prop1_scan_d1(law, lam, A, xs, budget=None) -> ScanReport:
    """Normalized truncated moments at horizon A x^2 against h(A)."""
    if A < 1.0:
        raise ValueError("A must be at least 1")
    mom, kern, sigma2 = _prep(law, lam)
    if mom.spec.dimension != 1:
        raise ValueError("this scan is a d=1 object")
    xs = sorted(int(x) for x in xs)
    if xs[0] <= 0:
        raise ValueError("scan sites must be positive")
    horizons = [int(A * x * x) for x in xs]
    table = _diff_table(kern, [(0,), *[(x,) for x in xs]], horizons[-1], budget)
    ctx = potential_context(kern)
    frak_a = frakA(ctx, d_origin_step_law(mom))
    predicted = h_of_A(sigma2, frak_a, ctx.sigma_h2, A)
    rows = []
    for i, (x, n) in enumerate(zip(xs, horizons)):
        raw = 2.0 * sigma2 * float(np.sum(table[:n, 0] - table[:n, i + 1]))
        rows.append(ScanRow(x, n, raw, raw / x, predicted))
    return ScanReport(tuple(rows), "h(A)")


def _pair_sites(points, dim):
    origin = (0,) * dim
    sites = [origin]
    for p in points:
        if p not in sites:
            sites.append(p)
    for i, p in enumerate(points):
        for q in points[i + 1:]:
            d = tuple(a - b for a, b in zip(p, q))
            for s in (d, tuple(-v for v in d)):
                if s not in sites:
                    sites.append(s)
    return sites


def _moment_matrix(kern, sigma2, points, n, budget):
    dim = kern.dimension
    sites = _pair_sites(points, dim)
    table = _diff_table(kern, sites, n, budget)
    col = {s: i for i, s in enumerate(sites)}
    origin = (0,) * dim
    k = len(points)
    out = np.empty((k, k))
    for j, p in enumerate(points):
        out[j, j] = 2.0 * sigma2 * float(np.sum(table[:, 0] - table[:, col[p]]))
        for l in range(j + 1, k):
            q = points[l]
            d = tuple(a - b for a, b in zip(p, q))
            comb = (
                table[:, 0] + table[:, col[d]]
                - table[:, col[p]] - table[:, col[q]]
            )
            out[j, l] = out[l, j] = sigma2 * float(np.sum(comb))
    return out


def corollary1_cov_scan_d1(law, lam, A, n, times, budget=None) -> CovScanResult:
    """Truncated moment matrix at sites floor(n t_j), horizon A n^2,
    normalized by c(1) n; the target is the Brownian min-matrix."""
    if A < 1.0:
        raise ValueError("A must be at least 1")
    predicted = limiting_cov_d1(times)        # validates the times
    mom, kern, sigma2 = _prep(law, lam)
    if mom.spec.dimension != 1:
        raise ValueError("this scan is a d=1 object")
    points = [(int(np.floor(n * t)),) for t in np.asarray(times, dtype=float)]
    if points[0][0] < 1 or len(set(points)) != len(points):
        raise ValueError("n too small to separate the requested times")
    horizon = int(A * n * n)
    matrix = _moment_matrix(kern, sigma2, points, horizon, budget)
    ctx = potential_context(kern)
    c = c1(sigma2, frakA(ctx, d_origin_step_law(mom)), ctx.sigma_h2)
    return CovScanResult(matrix, matrix / (c * n), predicted, c * n, horizon)


def corollary1_cov_scan_d2(law, lam, zs, n, budget=None) -> CovScanResult:
    """d=2 FDD moment matrix at the exponential scaling sites
    (floor(n^{|z(1)|}), floor(n^{|z(2)|})), horizon max_j |x_j|^2,
    normalized by c(2) log n.  Diagnostic only: convergence is logarithmic."""
    if n < 2:
        raise ValueError("n must be at least 2")
    zs = [tuple(int(v) for v in z) for z in zs]
    predicted = limiting_cov_d2(zs)           # validates the z points
    mom, kern, sigma2 = _prep(law, lam)
    if mom.spec.dimension != 2:
        raise ValueError("this scan is a d=2 object")
    points = [
        (int(np.floor(float(n) ** abs(z[0]))), int(np.floor(float(n) ** abs(z[1]))))
        for z in zs
    ]
    if len(set(points)) != len(points):
        raise ValueError("z points collide at this n")
    horizon = max(p[0] * p[0] + p[1] * p[1] for p in points)
    try:
        matrix = _moment_matrix(kern, sigma2, points, horizon, budget)
    except BudgetError as e:
        raise BudgetError(
            f"scale n={n}, zs={zs} needs horizon {horizon}: {e}; "
            "reduce n or the |z| components"
        ) from None
    ctx = potential_context(kern)
    c = c2(sigma2, frakA(ctx, d_origin_step_law(mom)), ctx.det_quad)
    norm = c * np.log(float(n))
    return CovScanResult(matrix, matrix / norm, predicted, norm, horizon)
