"""Potential kernel of the homogeneous difference walk and derived constants.

The potential kernel a(x) = lim_n sum_{k<=n} [P_0(H_k=0) - P_x(H_k=0)] is
evaluated as a characteristic-function integral

    a(x) = (2 pi)^{-d} integral over (-pi, pi]^d of (1 - cos(theta.x)) / (1 - phi(theta)),

with phi the one-step characteristic function of q_H.  Both numerator and
denominator are computed through sin^2 half-angle forms, which keeps the
integrand stable near the removable singularity at theta = 0.  In d=1 the
singular limit is a finite number and scipy's adaptive Gauss-Kronrod rule
handles it with a special-case node; in d=2 the limit is direction-dependent,
so a ball of radius r_0 around 0 is excluded and replaced by its analytic
second-order contribution (an angular integral of the quadratic approximant),
with an r_0-halving sensitivity assertion.

Every quadrature value is cross-checked against the defining partial sums
computed by the chain DP with Richardson-style extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .chains import ChainKernel, chain_kernel, h_return_prob_lattice, return_prob_table
from .errors import QuadratureError
from .weights import StepLaw, WeightMoments, compute_moments, h_step_law

__all__ = [
    "PotentialContext",
    "potential_context",
    "quad_form",
    "potential_kernel",
    "potential_kernel_partial_sum",
    "frakA",
    "lemma4_prediction",
    "local_clt_ratio",
    "d2_tau_tail_asymptotic",
    "aperiodicity_constant",
]

R0_DEFAULT = 1e-3
TARGET_ABS_ERROR = 1e-8


def quad_form(source) -> float | np.ndarray:
    """One-step quadratic form of H: sigma_H^2 in d=1, the matrix Q in d=2.

    Q_{ab} = sum_k q_H(k) k_a k_b.  Raises if the form is singular (the
    difference walk would be degenerate along an axis).
    """
    q_h = _step_law(source)
    offs = q_h.offsets.astype(float)
    q = np.einsum("k,ka,kb->ab", q_h.probs, offs, offs)
    if q_h.dimension == 1:
        s2 = float(q[0, 0])
        if s2 <= 1e-14:
            raise ValueError("degenerate walk: one-step variance is zero")
        return s2
    if np.linalg.det(q) <= 1e-14:
        raise ValueError("degenerate walk: quadratic form Q is singular")
    return q


def _step_law(source) -> StepLaw:
    if isinstance(source, StepLaw):
        return source
    if isinstance(source, ChainKernel):
        return source.q_h
    mom = source if isinstance(source, WeightMoments) else compute_moments(source)
    return h_step_law(mom)


@dataclass(frozen=True)
class PotentialContext:
    """Characteristic function of one H step plus its quadratic form."""

    dimension: int
    kernel: ChainKernel = field(repr=False)
    quad: float | np.ndarray        # sigma_H^2 (d=1) or Q (d=2)
    r0: float = R0_DEFAULT

    @property
    def sigma_h2(self) -> float:
        return float(self.quad) if self.dimension == 1 else float("nan")

    @property
    def det_quad(self) -> float:
        return float(self.quad) if self.dimension == 1 else float(np.linalg.det(self.quad))

    def one_minus_phi(self, thetas: np.ndarray) -> np.ndarray:
        """1 - phi(theta) through the stable half-angle form, thetas (n, d)."""
        k = self.kernel.q_h.offsets.astype(float)
        half = 0.5 * (thetas @ k.T)
        return 2.0 * (np.sin(half) ** 2 @ self.kernel.q_h.probs)


def potential_context(law_or_moments, r0: float = R0_DEFAULT) -> PotentialContext:
    kern = law_or_moments if isinstance(law_or_moments, ChainKernel) else chain_kernel(law_or_moments)
    return PotentialContext(dimension=kern.dimension, kernel=kern, quad=quad_form(kern), r0=r0)


def aperiodicity_constant(ctx: PotentialContext, grid: int = 101) -> float:
    """Numerical lower bound c_0 with 1 - phi >= c_0 |theta|^2 on (-pi, pi]^d."""
    axes = [np.linspace(-np.pi, np.pi, grid)] * ctx.dimension
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ctx.dimension)
    norms2 = np.einsum("nd,nd->n", pts, pts)
    keep = norms2 > 1e-12
    c0 = float(np.min(ctx.one_minus_phi(pts[keep]) / norms2[keep]))
    if c0 <= 0.0:
        raise AssertionError("strong aperiodicity violated: 1 - phi not bounded below by c|theta|^2")
    return c0


def _integrand(ctx: PotentialContext, x: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    num = np.sin(0.5 * (thetas @ x)) ** 2
    den = 0.5 * ctx.one_minus_phi(thetas)
    return num / den


def potential_kernel(ctx: PotentialContext, x) -> float:
    """a(x) by quadrature; see the module docstring for the scheme."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if x.size != ctx.dimension:
        raise ValueError(f"site has {x.size} coordinates, expected {ctx.dimension}")
    if np.all(x == 0.0):
        return 0.0
    if ctx.dimension == 1:
        return _potential_1d(ctx, float(x[0]))
    value = _potential_2d(ctx, x, ctx.r0)
    check = _potential_2d(ctx, x, ctx.r0 / 2.0)
    if abs(value - check) >= 1e-7:
        raise QuadratureError(
            f"r0 sensitivity {abs(value - check):.3g} exceeds 1e-7 for x={tuple(x)}"
        )
    return value


def _potential_1d(ctx: PotentialContext, x: float) -> float:
    limit_at_zero = x * x / ctx.sigma_h2

    def f(theta):
        den = ctx.one_minus_phi(np.array([[theta]]))[0]
        if den < 1e-28:
            return limit_at_zero
        return 2.0 * np.sin(0.5 * theta * x) ** 2 / den

    value, err = integrate.quad(f, 0.0, np.pi, epsabs=1e-12, epsrel=1e-12, limit=200)
    if err > TARGET_ABS_ERROR:
        raise QuadratureError(f"potential kernel quadrature error estimate {err:.3g}")
    return value / np.pi


def _gauss_panel(f, x0, x1, y0, y1, n):
    nodes, wts = np.polynomial.legendre.leggauss(n)
    gx = 0.5 * (x1 - x0) * nodes + 0.5 * (x1 + x0)
    gy = 0.5 * (y1 - y0) * nodes + 0.5 * (y1 + y0)
    pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = f(pts).reshape(n, n)
    return 0.25 * (x1 - x0) * (y1 - y0) * float(wts @ vals @ wts)


def _potential_2d(ctx: PotentialContext, x: np.ndarray, r0: float) -> float:
    f = lambda pts: _integrand(ctx, x, pts)
    # the integrand oscillates with frequency |x|; scale panel nodes with it
    n = max(20, 6 + 5 * int(np.sum(np.abs(x))))
    total = 0.0
    # dyadic square rings from half-width pi down to r0
    outer = np.pi
    while outer / 2.0 > r0:
        total += _ring(f, outer / 2.0, outer, n)
        outer /= 2.0
    total += _ring(f, r0, outer, n)
    total += _corner_patch(f, r0)
    total += _ball_quadratic(ctx, x, r0)
    return total / (4.0 * np.pi ** 2)


def _ring(f, a: float, b: float, n: int) -> float:
    # frame square(b) minus square(a) as four rectangles
    return (
        _gauss_panel(f, -b, b, a, b, n)
        + _gauss_panel(f, -b, b, -b, -a, n)
        + _gauss_panel(f, -b, -a, -a, a, n)
        + _gauss_panel(f, a, b, -a, a, n)
    )


def _corner_patch(f, r0: float, n_phi=16, n_r=12) -> float:
    """Square(r0) minus ball(r0), in polar coordinates per octant."""
    pn, pw = np.polynomial.legendre.leggauss(n_phi)
    rn, rw = np.polynomial.legendre.leggauss(n_r)
    total = 0.0
    for j in range(8):
        p0, p1 = j * np.pi / 4.0, (j + 1) * np.pi / 4.0
        phis = 0.5 * (p1 - p0) * pn + 0.5 * (p1 + p0)
        rmax = r0 / np.maximum(np.abs(np.cos(phis)), np.abs(np.sin(phis)))
        for phi, wphi, rm in zip(phis, pw, rmax):
            if rm <= r0:
                continue
            rs = 0.5 * (rm - r0) * rn + 0.5 * (rm + r0)
            pts = np.stack([rs * np.cos(phi), rs * np.sin(phi)], axis=-1)
            inner = float(np.sum(rw * f(pts) * rs)) * 0.5 * (rm - r0)
            total += 0.5 * (p1 - p0) * wphi * inner
    return total


def _ball_quadratic(ctx: PotentialContext, x: np.ndarray, r0: float, n_phi=512) -> float:
    """Analytic second-order contribution of the excluded ball.

    Near 0 the integrand tends to (omega.x)^2 / (omega^T Q omega) along the
    direction omega; integrating the quadratic approximant over the ball gives
    (r0^2/2) times the angular average below (trapezoid is spectrally accurate
    for this smooth periodic function).
    """
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    omega = np.stack([np.cos(phis), np.sin(phis)], axis=-1)
    num = (omega @ x) ** 2
    den = np.einsum("na,ab,nb->n", omega, np.asarray(ctx.quad), omega)
    angular = 2.0 * np.pi * float(np.mean(num / den))
    return 0.5 * r0 * r0 * angular


_D1_NODES = (2 ** 10, 2 ** 12, 2 ** 14)
_D2_NODES = (2 ** 9, 2 ** 10, 2 ** 11)


def potential_kernel_partial_sum(ctx: PotentialContext, sites, budget=None) -> np.ndarray:
    """a(x) from the defining partial sums with Richardson-style extrapolation.

    One adjoint H-run records every requested site; partial sums at the node
    horizons are extrapolated against a two-term tail model in powers of
    1/sqrt(n) (d=1) or 1/n (d=2, the actual decay of the Green-difference
    tail at these scales); the second term matters for far sites.
    """
    sites = [s for s in sites]
    nodes = _D1_NODES if ctx.dimension == 1 else _D2_NODES
    n_max = nodes[-1]
    origin = (0,) * ctx.dimension
    table = return_prob_table(ctx.kernel, [origin, *sites], n_max, budget=budget, defect=False)
    partial = np.cumsum(table[:, :1] - table[:, 1:], axis=0)
    ns = np.array(nodes, dtype=float)
    tail = ns ** -0.5 if ctx.dimension == 1 else 1.0 / ns
    design = np.stack([np.ones_like(ns), tail, tail ** 3 if ctx.dimension == 1 else tail ** 2], axis=-1)
    out = np.empty(len(sites))
    for i in range(len(sites)):
        coef, *_ = np.linalg.lstsq(design, partial[nodes, i], rcond=None)
        out[i] = coef[0]
    return out


def frakA(ctx: PotentialContext, q_d: StepLaw) -> float:
    """The Green-difference constant: q_D-average of the potential kernel."""
    total = 0.0
    for k, p in zip(q_d.offsets, q_d.probs):
        if np.any(k != 0):
            total += p * potential_kernel(ctx, k)
    if total <= 1e-12:
        raise ValueError("degenerate configuration: mean potential kernel over q_D is zero")
    return total


def lemma4_prediction(ctx: PotentialContext, frak_a: float, n) -> float | np.ndarray:
    """Asymptotic return-scale prediction.

    d=1: P_0(D_n=0) ~ (1/frakA) / (sqrt(2 pi) sigma_H sqrt(n));
    d=2: sum_{k<=n} P_0(D_k=0) ~ (1/frakA) ln(n) / (2 pi sqrt(det Q)).
    """
    n = np.asarray(n, dtype=float)
    if np.any(n < 2):
        raise ValueError("prediction needs n >= 2")
    if ctx.dimension == 1:
        out = (1.0 / frak_a) / (np.sqrt(2.0 * np.pi * ctx.sigma_h2) * np.sqrt(n))
    else:
        out = (1.0 / frak_a) * np.log(n) / (2.0 * np.pi * np.sqrt(ctx.det_quad))
    return float(out) if out.ndim == 0 else out


def local_clt_ratio(ctx: PotentialContext, n: int) -> float:
    """(2 pi n)^{d/2} P_0(H_n=0) sqrt(det Q); tends to 1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    p = h_return_prob_lattice(ctx.kernel, n)
    return float((2.0 * np.pi * n) ** (ctx.dimension / 2.0) * p * np.sqrt(ctx.det_quad))


def d2_tau_tail_asymptotic(x, A: float) -> float:
    """Leading-order origin-avoidance probability 2 log|x| / log(A |x|^2) in d=2."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ValueError("x must be nonzero")
    if A < 1.0:
        raise ValueError("A must be at least 1")
    return 2.0 * np.log(norm) / np.log(A * norm * norm)
