"""Forward simulation of the random average surface from the inclined plane.

Each step replaces every height by the convex combination of its in-range
neighbors given by one fresh weight vector per site.  The window shrinks by
K per side per step, so a sample of X_n(x) - X_n(0) sizes its initial window
to the dependence cone of {0, x} and needs no boundary approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import average_heights_1d, average_heights_2d
from .errors import BudgetError
from .weights import compute_moments, sample_weight_block, slope_vector

__all__ = [
    "HeightField",
    "init_plane",
    "evolve_step",
    "fluctuation_sample",
    "DEFAULT_SITE_BUDGET",
]

DEFAULT_SITE_BUDGET = 2_000_000_000


@dataclass
class HeightField:
    """Dense surface heights over an axis-aligned window of sites."""

    lo: np.ndarray             # (d,) lower corner of the window
    heights: np.ndarray        # (L,) in d=1, (L1, L2) in d=2
    step_count: int

    @property
    def dimension(self) -> int:
        return self.lo.size

    def height_at(self, site) -> float:
        idx = tuple(np.atleast_1d(np.asarray(site, dtype=int)) - self.lo)
        if any(i < 0 or i >= s for i, s in zip(idx, self.heights.shape)):
            raise ValueError(f"site {site} outside the current window")
        return float(self.heights[idx])


def _window_arrays(window):
    lo, hi = window
    lo = np.atleast_1d(np.asarray(lo, dtype=int))
    hi = np.atleast_1d(np.asarray(hi, dtype=int))
    if lo.shape != hi.shape or lo.size not in (1, 2):
        raise ValueError("window must be a (lo, hi) pair of 1- or 2-vectors")
    if np.any(hi < lo):
        raise ValueError("window is empty")
    return lo, hi


def init_plane(window, lam) -> HeightField:
    """Heights x . lambda over the window; step count 0."""
    lo, hi = _window_arrays(window)
    lamv = slope_vector(lam, lo.size)
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    if lo.size == 1:
        heights = axes[0].astype(float) * lamv[0]
    else:
        heights = np.add.outer(axes[0] * lamv[0], axes[1] * lamv[1]).astype(float)
    return HeightField(lo, heights, 0)


def evolve_step(field: HeightField, law, rng) -> HeightField:
    """One averaging step; the surviving window shrinks by K per side."""
    mom = compute_moments(law)
    if mom.spec.dimension != field.dimension:
        raise ValueError("law dimension does not match the field")
    k = mom.spec.range
    new_shape = tuple(s - 2 * k for s in field.heights.shape)
    if any(s <= 0 for s in new_shape):
        raise ValueError(
            "window exhausted after shrinking; widen the initial window"
        )
    n_sites = int(np.prod(new_shape))
    weights = sample_weight_block(law, rng, n_sites)
    offs = mom.spec.array()
    out = np.empty(new_shape)
    if field.dimension == 1:
        average_heights_1d(field.heights, weights, offs[:, 0].copy(), out)
    else:
        w3 = weights.reshape(new_shape + (offs.shape[0],))
        average_heights_2d(field.heights, w3, offs[:, 0].copy(), offs[:, 1].copy(), out)
    return HeightField(field.lo + k, out, field.step_count + 1)


def fluctuation_sample(law, lam, x, n, rng, budget=DEFAULT_SITE_BUDGET) -> float:
    """One exact sample of (X_n(x) - X_n(0)) - x . lambda from the plane.

    The window is sized to the dependence cone hull({0, x}) + K n per side,
    so the returned value carries no boundary effect.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    mom = compute_moments(law)
    dim = mom.spec.dimension
    lamv = slope_vector(lam, dim)
    xv = np.atleast_1d(np.asarray(x, dtype=int))
    if xv.size != dim:
        raise ValueError(f"site has {xv.size} coordinates, expected {dim}")
    if not np.any(xv):
        raise ValueError("x must be nonzero")
    k = mom.spec.range
    lo = np.minimum(xv, 0) - k * n
    hi = np.maximum(xv, 0) + k * n
    sides = hi - lo + 1
    total_draws = sum(
        int(np.prod(np.maximum(sides - 2 * k * (i + 1), 0))) for i in range(n)
    )
    if total_draws > budget:
        raise BudgetError(
            f"sample needs {total_draws:.3g} site draws, budget {budget:.3g}; "
            "reduce n or |x|"
        )
    field = init_plane((lo, hi), lamv)
    for _ in range(n):
        field = evolve_step(field, law, rng)
    return field.height_at(xv) - field.height_at((0,) * dim) - float(xv @ lamv)
