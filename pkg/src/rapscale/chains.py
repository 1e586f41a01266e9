"""Exact dynamic programming for the two difference chains.

H is the homogeneous symmetric walk stepping by q_H everywhere.  D is the
one-defect walk: identical to H except that the transition row at the origin
is q_D (the two coupled walkers share a weight vector when they meet).  This
module computes return probabilities, hitting-time tails, Green-sum
differences, the renewal identity, and boundedness scans, all on dense
windows trimmed to the numerically supported region.

Two independent routes are provided for return probabilities: the forward
distribution DP and the adjoint (function-space) DP that yields every start
site in one run; a characteristic-function lattice sum covers the Fourier
route for H.  Routes must agree to 1e-10 and tests enforce that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import stencil_spread_2d
from .errors import BudgetError
from .weights import StepLaw, WeightMoments, compute_moments, d_origin_step_law, h_step_law

__all__ = [
    "ChainKernel",
    "LatticeDistribution",
    "chain_kernel",
    "h_return_probs",
    "d_return_probs",
    "return_prob_table",
    "tau_tail",
    "hit_cdf_table",
    "green_diff_sum",
    "green_diff_partial",
    "renewal_residuals",
    "losA_scan",
    "h_return_prob_lattice",
    "h_green_partial_lattice",
]

TRIM_THRESHOLD = 1e-25
DEFAULT_BUDGET = 2e10  # cumulative window cells per DP run


@dataclass(frozen=True)
class ChainKernel:
    """One-step laws of the difference chains: q_H off the origin, q_D at it."""

    dimension: int
    q_h: StepLaw
    q_d: StepLaw

    @property
    def radius(self) -> int:
        """Sup-norm range 2K of both step laws."""
        return int(np.abs(self.q_h.offsets).max())

    def dense_h(self) -> np.ndarray:
        return _dense(self.q_h, self.radius)

    def dense_d(self) -> np.ndarray:
        return _dense(self.q_d, self.radius)


def chain_kernel(law_or_moments) -> ChainKernel:
    mom = law_or_moments if isinstance(law_or_moments, WeightMoments) else compute_moments(law_or_moments)
    return ChainKernel(dimension=mom.spec.dimension, q_h=h_step_law(mom), q_d=d_origin_step_law(mom))


@dataclass
class LatticeDistribution:
    """Dense window of probability mass with its lower corner coordinate."""

    lo: tuple               # lattice coordinate of mass[0, ...]
    mass: np.ndarray        # d-dimensional window
    absorbed: float = 0.0   # mass removed by absorption, if any

    def total(self) -> float:
        return float(self.mass.sum()) + self.absorbed

    def prob_at(self, site) -> float:
        idx = tuple(int(c) - l for c, l in zip(_site(site, self.mass.ndim), self.lo))
        if any(i < 0 or i >= s for i, s in zip(idx, self.mass.shape)):
            return 0.0
        return float(self.mass[idx])


def _site(site, dim: int) -> tuple:
    if np.isscalar(site):
        site = (int(site),)
    else:
        site = tuple(int(c) for c in site)
    if len(site) != dim:
        raise ValueError(f"site {site} has dimension {len(site)}, expected {dim}")
    return site


def _dense(step: StepLaw, r: int) -> np.ndarray:
    """Step law as a dense array over [-r, r]^d."""
    shape = (2 * r + 1,) * step.dimension
    grid = np.zeros(shape)
    for k, p in zip(step.offsets, step.probs):
        grid[tuple(int(c) + r for c in k)] = p
    return grid


def _spread(arr: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Mass spread by one step: out = sum_j dense[j] * shift_j(arr)."""
    r = (dense.shape[0] - 1) // 2
    if arr.ndim == 1:
        return np.convolve(arr, dense, mode="full")
    out = np.zeros((arr.shape[0] + 2 * r, arr.shape[1] + 2 * r))
    off1, off2 = np.nonzero(dense)
    stencil_spread_2d(arr, (off1 - r).astype(np.int64), (off2 - r).astype(np.int64),
                      dense[off1, off2], out)
    return out


def _spread_numpy_2d(arr: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Slice-add twin of the numba 2-d spread, for cross-checking."""
    r = (dense.shape[0] - 1) // 2
    out = np.zeros((arr.shape[0] + 2 * r, arr.shape[1] + 2 * r))
    for i, j in zip(*np.nonzero(dense)):
        out[i:i + arr.shape[0], j:j + arr.shape[1]] += dense[i, j] * arr
    return out


def _trim(arr: np.ndarray, lo: np.ndarray) -> tuple:
    """Drop outer slabs whose cells are all below the trim threshold."""
    if arr.ndim == 1:
        keep = np.flatnonzero(np.abs(arr) >= TRIM_THRESHOLD)
        if keep.size == 0 or (keep[0] == 0 and keep[-1] == arr.size - 1):
            return arr, lo
        return arr[keep[0]:keep[-1] + 1].copy(), lo + np.array([keep[0]])
    mask = np.abs(arr) >= TRIM_THRESHOLD
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return arr, lo
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    if (r0, c0) == (0, 0) and (r1, c1) == arr.shape:
        return arr, lo
    return arr[r0:r1, c0:c1].copy(), lo + np.array([r0, c0])


class _Budget:
    def __init__(self, budget):
        self.limit = DEFAULT_BUDGET if budget is None else float(budget)
        self.used = 0.0

    def charge(self, cells: int, step: int, n_max: int):
        self.used += cells
        if self.used > self.limit:
            raise BudgetError(
                f"cell budget {self.limit:.3g} exhausted at step {step} of {n_max}; "
                f"feasible n_max at this window size is about {step - 1}"
            )


def _origin_patch(arr: np.ndarray, lo: np.ndarray, step: StepLaw) -> float:
    """sum_j q(j) * arr[j] with out-of-window sites counting zero."""
    acc = 0.0
    for k, p in zip(step.offsets, step.probs):
        idx = tuple(int(c) - l for c, l in zip(k, lo))
        if all(0 <= i < s for i, s in zip(idx, arr.shape)):
            acc += p * arr[idx]
    return float(acc)


def _index_of(site, lo: np.ndarray, shape) -> tuple | None:
    idx = tuple(int(c) - l for c, l in zip(site, lo))
    if any(i < 0 or i >= s for i, s in zip(idx, shape)):
        return None
    return idx


def _delta_at(site, dim: int) -> tuple:
    lo = np.array(_site(site, dim), dtype=np.int64)
    return np.ones((1,) * dim), lo


def h_return_probs(kernel: ChainKernel, n_max: int, budget=None) -> np.ndarray:
    """P_0(H_k = 0) for k = 0..n_max by direct stencil DP."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    dense = kernel.dense_h()
    arr, lo = _delta_at((0,) * kernel.dimension, kernel.dimension)
    lo = np.zeros(kernel.dimension, dtype=np.int64)
    out = np.empty(n_max + 1)
    out[0] = 1.0
    acct = _Budget(budget)
    for k in range(1, n_max + 1):
        arr = _spread(arr, dense)
        lo = lo - kernel.radius
        arr, lo = _trim(arr, lo)
        acct.charge(arr.size, k, n_max)
        idx = _index_of((0,) * kernel.dimension, lo, arr.shape)
        out[k] = arr[idx] if idx is not None else 0.0
    return out


def _d_step(arr: np.ndarray, lo: np.ndarray, kernel: ChainKernel, dense_h, delta_d) -> tuple:
    """One forward step of the D chain: q_H everywhere plus the origin defect row."""
    origin_idx = _index_of((0,) * kernel.dimension, lo, arr.shape)
    p0 = float(arr[origin_idx]) if origin_idx is not None else 0.0
    out = _spread(arr, dense_h)
    lo = lo - kernel.radius
    if p0 != 0.0:
        r = kernel.radius
        idx0 = _index_of((0,) * kernel.dimension, lo, out.shape)
        corner = tuple(slice(i - r, i + r + 1) for i in idx0)
        out[corner] += p0 * delta_d
    return out, lo


def d_return_probs(kernel: ChainKernel, start, n_max: int, budget=None) -> np.ndarray:
    """P_start(D_k = 0) for k = 0..n_max by the forward distribution DP."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    start = _site(start, kernel.dimension)
    arr, lo = _delta_at(start, kernel.dimension)
    dense_h = kernel.dense_h()
    delta_d = kernel.dense_d() - dense_h
    out = np.empty(n_max + 1)
    out[0] = 1.0 if all(c == 0 for c in start) else 0.0
    acct = _Budget(budget)
    for k in range(1, n_max + 1):
        arr, lo = _d_step(arr, lo, kernel, dense_h, delta_d)
        arr, lo = _trim(arr, lo)
        acct.charge(arr.size, k, n_max)
        idx = _index_of((0,) * kernel.dimension, lo, arr.shape)
        out[k] = arr[idx] if idx is not None else 0.0
    return out


def return_prob_table(kernel: ChainKernel, sites, n_max: int, budget=None,
                      defect: bool = True) -> np.ndarray:
    """P_x(chain hits 0 at step k) for every requested start x, one adjoint run.

    Evolves the function psi_k(x) = P_x(X_k = 0) backward in function space:
    psi_k = q_H-average of psi_{k-1} off the origin, q_D-average at it (when
    defect, giving the D chain; else pure q_H, giving H).  Returns an array of
    shape (n_max + 1, len(sites)).
    """
    sites = [_site(s, kernel.dimension) for s in sites]
    arr, lo = _delta_at((0,) * kernel.dimension, kernel.dimension)
    lo = np.zeros(kernel.dimension, dtype=np.int64)
    dense_h = kernel.dense_h()
    out = np.zeros((n_max + 1, len(sites)))
    for i, s in enumerate(sites):
        if all(c == 0 for c in s):
            out[0, i] = 1.0
    acct = _Budget(budget)
    for k in range(1, n_max + 1):
        origin_val = _origin_patch(arr, lo, kernel.q_d) if defect else None
        arr = _spread(arr, dense_h)
        lo = lo - kernel.radius
        if defect:
            idx0 = _index_of((0,) * kernel.dimension, lo, arr.shape)
            arr[idx0] = origin_val
        arr, lo = _trim(arr, lo)
        acct.charge(arr.size, k, n_max)
        for i, s in enumerate(sites):
            idx = _index_of(s, lo, arr.shape)
            out[k, i] = arr[idx] if idx is not None else 0.0
    return out


def tau_tail(kernel: ChainKernel, start, n_max: int, budget=None) -> np.ndarray:
    """P_start(tau > k), tau the first visit of the origin, by absorbing DP."""
    start = _site(start, kernel.dimension)
    if all(c == 0 for c in start):
        raise ValueError("tau_tail requires a start site distinct from the origin")
    arr, lo = _delta_at(start, kernel.dimension)
    dense_h = kernel.dense_h()
    out = np.empty(n_max + 1)
    out[0] = 1.0
    absorbed = 0.0
    acct = _Budget(budget)
    for k in range(1, n_max + 1):
        arr = _spread(arr, dense_h)
        lo = lo - kernel.radius
        idx0 = _index_of((0,) * kernel.dimension, lo, arr.shape)
        if idx0 is not None:
            absorbed += float(arr[idx0])
            arr[idx0] = 0.0
        arr, lo = _trim(arr, lo)
        acct.charge(arr.size, k, n_max)
        out[k] = 1.0 - absorbed
    return out


def hit_cdf_table(kernel: ChainKernel, sites, n_max: int, budget=None) -> np.ndarray:
    """P_x(tau <= k) for every requested start, one adjoint run; shape (n+1, sites)."""
    sites = [_site(s, kernel.dimension) for s in sites]
    arr, lo = _delta_at((0,) * kernel.dimension, kernel.dimension)
    lo = np.zeros(kernel.dimension, dtype=np.int64)
    dense_h = kernel.dense_h()
    out = np.zeros((n_max + 1, len(sites)))
    for i, s in enumerate(sites):
        if all(c == 0 for c in s):
            out[0, i] = 1.0
    acct = _Budget(budget)
    for k in range(1, n_max + 1):
        arr = _spread(arr, dense_h)
        lo = lo - kernel.radius
        idx0 = _index_of((0,) * kernel.dimension, lo, arr.shape)
        arr[idx0] = 1.0
        arr, lo = _trim(arr, lo)
        acct.charge(arr.size, k, n_max)
        for i, s in enumerate(sites):
            idx = _index_of(s, lo, arr.shape)
            out[k, i] = arr[idx] if idx is not None else 0.0
    return out


def green_diff_partial(kernel: ChainKernel, x, n: int, budget=None) -> np.ndarray:
    """Partial sums S_m = sum_{k<=m} [P_0(D_k=0) - P_x(D_k=0)] for m = 0..n."""
    x = _site(x, kernel.dimension)
    if all(c == 0 for c in x):
        raise ValueError("green_diff requires x distinct from the origin")
    table = return_prob_table(kernel, [(0,) * kernel.dimension, x], n, budget=budget)
    return np.cumsum(table[:, 0] - table[:, 1])


def green_diff_sum(kernel: ChainKernel, x, n: int, budget=None) -> float:
    """sum_{k=0}^{n} [P_0(D_k=0) - P_x(D_k=0)]."""
    return float(green_diff_partial(kernel, x, n, budget=budget)[-1])


def renewal_residuals(kernel: ChainKernel, x, n: int, budget=None) -> np.ndarray:
    """Residuals of the first-passage renewal identity for every horizon m <= n.

    Identity: sum_{k<=m} [P_0(D_k=0) - P_x(D_k=0)]
            = sum_{k<=m} P_0(D_{m-k}=0) * P_x(tau > k).
    The left side comes from the adjoint table, the right side from the
    forward distribution DP and the absorbing DP; the routes share nothing.
    """
    x = _site(x, kernel.dimension)
    lhs = green_diff_partial(kernel, x, n, budget=budget)
    p0 = d_return_probs(kernel, (0,) * kernel.dimension, n, budget=budget)
    tail = tau_tail(kernel, x, n, budget=budget)
    rhs = np.convolve(p0, tail)[:n + 1]
    return lhs - rhs


def losA_scan(kernel: ChainKernel, l, lp, n_max: int, budget=None) -> tuple:
    """Boundedness scan S(n) = sum_{i<=n} [P_l(D_i=0) - P_lp(D_i=0)].

    Returns (values, running_max) where running_max[n] = max_{m<=n} |S(m)|.
    """
    l = _site(l, kernel.dimension)
    lp = _site(lp, kernel.dimension)
    table = return_prob_table(kernel, [l, lp], n_max, budget=budget)
    values = np.cumsum(table[:, 0] - table[:, 1])
    running_max = np.maximum.accumulate(np.abs(values))
    return values, running_max


def _phi_grid(kernel: ChainKernel, n: int, extra: int = 0):
    """Characteristic function of q_H on a lattice fine enough to alias below 1e-22."""
    r = kernel.radius
    m = max(int(np.ceil(21.0 * r * np.sqrt(n))) + 2 * r + extra, 4 * r + 2)
    if kernel.dimension == 1:
        theta = 2.0 * np.pi * np.arange(m) / m
        k = kernel.q_h.offsets[:, 0].astype(float)
        phi = np.cos(np.outer(theta, k)) @ kernel.q_h.probs
        return theta.reshape(-1, 1), phi
    theta1 = 2.0 * np.pi * np.arange(m) / m
    k1 = kernel.q_h.offsets[:, 0].astype(float)
    k2 = kernel.q_h.offsets[:, 1].astype(float)
    a1 = np.outer(theta1, k1)
    a2 = np.outer(theta1, k2)
    phi = np.einsum("ic,jc,c->ij", np.cos(a1), np.cos(a2), kernel.q_h.probs) - \
        np.einsum("ic,jc,c->ij", np.sin(a1), np.sin(a2), kernel.q_h.probs)
    return theta1, phi


def h_return_prob_lattice(kernel: ChainKernel, n: int) -> float:
    """P_0(H_n = 0) via the exact lattice aliasing sum of phi^n (Fourier route)."""
    _, phi = _phi_grid(kernel, n)
    return float(np.mean(np.power(phi, n)))


def h_green_partial_lattice(kernel: ChainKernel, x, n: int) -> float:
    """sum_{k<=n} [P_0(H_k=0) - P_x(H_k=0)] via the Fourier lattice sum."""
    x = np.array(_site(x, kernel.dimension), dtype=float)
    theta, phi = _phi_grid(kernel, n, extra=int(np.abs(x).max()))
    omp = 1.0 - phi
    with np.errstate(divide="ignore", invalid="ignore"):
        geom = np.where(omp > 1e-14, -np.expm1((n + 1) * np.log1p(-omp)) / omp, float(n + 1))
    if kernel.dimension == 1:
        osc = 2.0 * np.sin(theta[:, 0] * x[0] / 2.0) ** 2
        return float(np.mean(osc * geom.ravel()))
    dot = 0.5 * (theta[:, None] * x[0] + theta[None, :] * x[1])
    osc = 2.0 * np.sin(dot) ** 2
    return float(np.mean(osc * geom))
