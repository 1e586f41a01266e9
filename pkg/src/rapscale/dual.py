"""Dual representation of the surface fluctuation as a quenched martingale series.

Conditioning on the weight field, X_n(x) - X_n(0) - x.lam equals the sum over
steps i = 1..n of (W_i^x - W_i^0).lam, where W_i^x is the conditional drift of
the backward walker started at x after i-1 layers.  Each term is computed from
the walker distributions BEFORE they are evolved through layer i, and all
walkers for one sample share the same realized layers.

The fast path stacks the base walker (row 0) and any number of offset walkers
on one shared dense window, draws each layer only on that window, accumulates
per-step drift increments and optional coincidence traces with compiled
kernels, then pushes all rows through the layer at once.  Support below
TRIM_THRESHOLD is dropped from the window edges each step; each row is
renormalized to total mass one, and a renormalization larger than MASS_TOL
counts as an anomaly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import (
    layer_stats_1d,
    layer_stats_2d,
    push_forward_1d,
    push_forward_2d,
)
from .errors import BudgetError
from .weights import compute_moments, sample_weight_block, slope_vector

__all__ = [
    "QuenchedDistribution",
    "EnvironmentLayer",
    "SeriesState",
    "MultiSeriesState",
    "point_mass",
    "layer_for",
    "evolve_distribution",
    "w_increment",
    "quenched_coincidence",
    "series_sample",
    "series_sample_multi",
    "TRIM_THRESHOLD",
    "MASS_TOL",
]

TRIM_THRESHOLD = 1e-25
MASS_TOL = 1e-12
DEFAULT_SITE_BUDGET = 2_000_000_000


@dataclass
class QuenchedDistribution:
    """Dense probability mass of one backward walker over a window."""

    lo: np.ndarray           # (d,) lower corner
    mass: np.ndarray         # (L,) or (L1, L2)

    @property
    def dimension(self) -> int:
        return self.lo.size

    def total(self) -> float:
        return float(self.mass.sum())

    def prob_at(self, site) -> float:
        idx = tuple(np.atleast_1d(np.asarray(site, dtype=int)) - self.lo)
        if any(i < 0 or i >= s for i, s in zip(idx, self.mass.shape)):
            return 0.0
        return float(self.mass[idx])


@dataclass
class EnvironmentLayer:
    """One realized layer of weight vectors on a window of sites."""

    step: int
    lo: np.ndarray           # (d,) lower corner of the covered window
    weights: np.ndarray      # (L, m) or (L1, L2, m), rows in canonical order
    offsets: np.ndarray      # (m, d) neighborhood offsets


@dataclass
class SeriesState:
    """Accumulated series for one offset walker against the base walker."""

    value: float
    terms: int
    pair_trace: Optional[np.ndarray]   # per-step coincidence P(D_i-1 = 0 | F)
    base_trace: Optional[np.ndarray]   # per-step self-coincidence of the base
    anomalies: int


@dataclass
class MultiSeriesState:
    """Accumulated series for several offset walkers sharing one environment."""

    values: np.ndarray                  # (w,)
    terms: int
    pair_traces: Optional[np.ndarray]   # (w, N)
    base_trace: Optional[np.ndarray]    # (N,)
    anomalies: int


def point_mass(site, dim: int) -> QuenchedDistribution:
    s = np.atleast_1d(np.asarray(site, dtype=int))
    if s.size != dim:
        raise ValueError(f"site has {s.size} coordinates, expected {dim}")
    mass = np.zeros((1,) * dim)
    mass[(0,) * dim] = 1.0
    return QuenchedDistribution(s.copy(), mass)


def _union_box(rhos):
    lo = np.min([r.lo for r in rhos], axis=0)
    hi = np.max([r.lo + np.array(r.mass.shape) - 1 for r in rhos], axis=0)
    return lo, hi


def layer_for(law, rhos, step: int, rng) -> EnvironmentLayer:
    """Draw one layer covering the union of the walkers' supports, inflated by K.

    Rows are drawn in canonical row-major site order, one vector per site.
    """
    mom = compute_moments(law)
    k = mom.spec.range
    lo, hi = _union_box(rhos)
    lo = lo - k
    hi = hi + k
    shape = tuple(int(s) for s in (hi - lo + 1))
    weights = sample_weight_block(law, rng, int(np.prod(shape)))
    offs = mom.spec.array()
    if lo.size == 2:
        weights = weights.reshape(shape + (offs.shape[0],))
    return EnvironmentLayer(step, lo, weights, offs)


def _require_coverage(rho: QuenchedDistribution, layer: EnvironmentLayer) -> None:
    rlo, rhi = rho.lo, rho.lo + np.array(rho.mass.shape) - 1
    llo = layer.lo
    lhi = layer.lo + np.array(layer.weights.shape[: rho.dimension]) - 1
    if np.any(rlo < llo) or np.any(rhi > lhi):
        raise ValueError(
            "layer window does not cover the walker support; layers are "
            "generated to fit, so this signals a bug in the caller"
        )


def _theta_field(layer: EnvironmentLayer, lamv: np.ndarray) -> np.ndarray:
    """Realized drift theta(l) = sum_j (j.lam) u_l(j) at every layer site."""
    proj = layer.offsets.astype(float) @ lamv
    return layer.weights @ proj


def evolve_distribution(rho: QuenchedDistribution, layer: EnvironmentLayer) -> QuenchedDistribution:
    """Push the walker mass through one realized layer (adjoint averaging step)."""
    _require_coverage(rho, layer)
    dim = rho.dimension
    k = int(np.abs(layer.offsets).max())
    shift = rho.lo - layer.lo
    out_lo = rho.lo - k
    out_shape = tuple(s + 2 * k for s in rho.mass.shape)
    out = np.zeros(out_shape)
    if dim == 1:
        sl = slice(shift[0], shift[0] + rho.mass.shape[0])
        w = layer.weights[sl]
        for c, off in enumerate(layer.offsets[:, 0]):
            idx = np.arange(rho.mass.shape[0]) + k + off
            np.add.at(out, idx, rho.mass * w[:, c])
    else:
        sl = tuple(slice(s, s + n) for s, n in zip(shift, rho.mass.shape))
        w = layer.weights[sl]
        for c, off in enumerate(layer.offsets):
            i1 = np.arange(rho.mass.shape[0]) + k + off[0]
            i2 = np.arange(rho.mass.shape[1]) + k + off[1]
            np.add.at(out, np.ix_(i1, i2), rho.mass * w[..., c])
    total = out.sum()
    if total <= 0.0:
        raise ValueError("walker mass vanished; layer weights are invalid")
    out /= total
    return QuenchedDistribution(out_lo, out)


def w_increment(rho_x: QuenchedDistribution, rho_0: QuenchedDistribution,
                layer: EnvironmentLayer, lam) -> float:
    """Series term sum_l (rho_x - rho_0)(l) theta(l) from pre-evolution masses."""
    dim = rho_x.dimension
    lamv = slope_vector(lam, dim)
    theta = _theta_field(layer, lamv)
    acc = 0.0
    for rho, sign in ((rho_x, 1.0), (rho_0, -1.0)):
        _require_coverage(rho, layer)
        shift = rho.lo - layer.lo
        sl = tuple(slice(s, s + n) for s, n in zip(shift, rho.mass.shape))
        acc += sign * float((rho.mass * theta[sl]).sum())
    return acc


def quenched_coincidence(rho_x: QuenchedDistribution, rho_0: QuenchedDistribution) -> float:
    """Overlap sum_l rho_x(l) rho_0(l) of two same-step walker masses."""
    lo = np.maximum(rho_x.lo, rho_0.lo)
    hi = np.minimum(rho_x.lo + np.array(rho_x.mass.shape),
                    rho_0.lo + np.array(rho_0.mass.shape))
    if np.any(hi <= lo):
        return 0.0
    sx = tuple(slice(a - l, a - l + (h - a)) for a, l, h in zip(lo, rho_x.lo, hi))
    s0 = tuple(slice(a - l, a - l + (h - a)) for a, l, h in zip(lo, rho_0.lo, hi))
    return float((rho_x.mass[sx] * rho_0.mass[s0]).sum())


def _trim_box(stack: np.ndarray) -> tuple:
    """Bounding slices where any row carries mass above TRIM_THRESHOLD."""
    keep = stack.max(axis=0) > TRIM_THRESHOLD
    slices = []
    for ax in range(keep.ndim):
        proj = keep.any(axis=tuple(a for a in range(keep.ndim) if a != ax))
        nz = np.nonzero(proj)[0]
        slices.append(slice(int(nz[0]), int(nz[-1]) + 1))
    return tuple(slices)


def _stacked_engine(law, lam, xs, n_steps: int, rng, trace: bool, budget: float):
    """Shared-environment series for walkers at offsets xs against the base at 0.

    Returns (values (w,), pair_traces (w, N) or None, base_trace (N,) or None,
    anomalies).  Draw order is (step, site, slot), row-major over the current
    window, so equal seeds give equal samples regardless of trimming history.
    """
    mom = compute_moments(law)
    dim = mom.spec.dimension
    lamv = slope_vector(lam, dim)
    offs = mom.spec.array()
    proj = np.ascontiguousarray(offs.astype(float) @ lamv)
    k = mom.spec.range
    pts = [np.zeros(dim, dtype=int)] + [np.atleast_1d(np.asarray(x, dtype=int)) for x in xs]
    for p in pts[1:]:
        if p.size != dim:
            raise ValueError(f"site has {p.size} coordinates, expected {dim}")
    w = len(xs)
    lo = np.min(pts, axis=0)
    hi = np.max(pts, axis=0)
    shape = tuple(int(s) for s in (hi - lo + 1))
    stack = np.zeros((w + 1,) + shape)
    for row, p in enumerate(pts):
        stack[(row,) + tuple(p - lo)] = 1.0

    sums = np.zeros(w)
    pair = np.zeros((w, n_steps)) if trace else None
    base = np.zeros(n_steps) if trace else None
    anomalies = 0
    drawn = 0

    incr = np.zeros(w)
    coin = np.zeros(w + 1)
    for step in range(n_steps):
        # canonical layer window: union support inflated by K per side, the
        # same geometry layer_for() uses, so both paths share draw order
        shape = tuple(s + 2 * k for s in stack.shape[1:])
        padded = np.zeros((w + 1,) + shape)
        padded[(slice(None),) + tuple(slice(k, k + s) for s in stack.shape[1:])] = stack
        n_sites = int(np.prod(shape))
        drawn += n_sites
        if drawn > budget:
            raise BudgetError(
                f"series needs more than {budget:.3g} site draws by step "
                f"{step + 1}; reduce N or the site offsets"
            )
        weights = sample_weight_block(law, rng, n_sites)
        incr[:] = 0.0
        coin[:] = 0.0
        if dim == 1:
            layer_stats_1d(padded, weights, proj, incr, coin, trace)
            out = np.zeros((w + 1, shape[0] + 2 * k))
            push_forward_1d(padded, weights, np.ascontiguousarray(offs[:, 0]), out)
        else:
            w3 = weights.reshape(shape + (offs.shape[0],))
            layer_stats_2d(padded, w3, proj, incr, coin, trace)
            out = np.zeros((w + 1, shape[0] + 2 * k, shape[1] + 2 * k))
            push_forward_2d(padded, w3, np.ascontiguousarray(offs[:, 0]),
                            np.ascontiguousarray(offs[:, 1]), out)
        sums += incr
        if trace:
            pair[:, step] = coin[1:]
            base[step] = coin[0]
        totals = out.reshape(w + 1, -1).sum(axis=1)
        if np.any(np.abs(totals - 1.0) > MASS_TOL):
            anomalies += 1
        out /= totals.reshape((w + 1,) + (1,) * dim)
        box = _trim_box(out)
        stack = np.ascontiguousarray(out[(slice(None),) + box])
        lo = lo - 2 * k + np.array([s.start for s in box])
    return sums, pair, base, anomalies


def series_sample(law, lam, x, n_terms: int, rng, trace: bool = False,
                  budget: float = DEFAULT_SITE_BUDGET) -> SeriesState:
    """One sample of the n_terms-step dual series for offset x against 0.

    With trace=True the state also carries the per-step pre-evolution
    coincidences: pair_trace[i] is the overlap of the x- and 0-walkers after i
    layers, base_trace[i] the self-overlap of the 0-walker.
    """
    if n_terms < 1:
        raise ValueError("the series needs at least one term")
    xv = np.atleast_1d(np.asarray(x, dtype=int))
    if not np.any(xv):
        raise ValueError("x must be nonzero")
    sums, pair, base, anomalies = _stacked_engine(
        law, lam, [xv], n_terms, rng, trace, budget)
    return SeriesState(
        value=float(sums[0]),
        terms=n_terms,
        pair_trace=pair[0] if trace else None,
        base_trace=base,
        anomalies=anomalies,
    )


def series_sample_multi(law, lam, xs, n_terms: int, rng, trace: bool = False,
                        budget: float = DEFAULT_SITE_BUDGET) -> MultiSeriesState:
    """Joint sample of several series driven by one shared weight field."""
    if n_terms < 1:
        raise ValueError("the series needs at least one term")
    if not xs:
        raise ValueError("at least one offset is required")
    arrs = [np.atleast_1d(np.asarray(x, dtype=int)) for x in xs]
    seen = set()
    for a in arrs:
        key = tuple(int(c) for c in a)
        if not any(key):
            raise ValueError("offsets must be nonzero")
        if key in seen:
            raise ValueError("offsets must be distinct")
        seen.add(key)
    sums, pair, base, anomalies = _stacked_engine(
        law, lam, arrs, n_terms, rng, trace, budget)
    return MultiSeriesState(
        values=sums,
        terms=n_terms,
        pair_traces=pair,
        base_trace=base,
        anomalies=anomalies,
    )
