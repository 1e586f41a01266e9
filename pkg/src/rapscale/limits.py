"""Closed-form limiting objects: Brownian passage-time tail, the h(A)
integral, the scaling constants c(1), c(2), c', and the limiting covariance
matrices of the two FDD theorems.

All quadrature here is one-dimensional and smooth after the substitutions
y = 1 - u^2 (kills the 1/sqrt(1-y) endpoint) and y = v^2 (kills the
O(1/sqrt(y)) growth near 0 that appears for large A).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import QuadratureError

__all__ = [
    "LimitConstants",
    "passage_tail",
    "c_prime",
    "c1",
    "c2",
    "h_of_A",
    "claim2_integral",
    "limit_constants",
    "limiting_cov_d1",
    "limiting_cov_d2",
    "psd_report",
]


def passage_tail(a: float, t: float) -> float:
    """P(T_a > t) for the first passage of |B| to level a: erf(a / sqrt(2t))."""
    if a <= 0.0 or t <= 0.0:
        raise ValueError("passage level and time must be positive")
    return float(special.erf(a / np.sqrt(2.0 * t)))


def c_prime(sigma2: float, frak_a: float, sigma_h2: float) -> float:
    _check_constants(sigma2, frak_a, sigma_h2)
    return 2.0 * sigma2 / (frak_a * np.sqrt(2.0 * np.pi * sigma_h2))


def c1(sigma2: float, frak_a: float, sigma_h2: float) -> float:
    _check_constants(sigma2, frak_a, sigma_h2)
    return 2.0 * sigma2 / (frak_a * sigma_h2)


def c2(sigma2: float, frak_a: float, det_q: float) -> float:
    _check_constants(sigma2, frak_a, det_q)
    return 2.0 * sigma2 / (frak_a * np.pi * np.sqrt(det_q))


def _check_constants(sigma2, frak_a, scale):
    if sigma2 < 0.0:
        raise ValueError("sigma^2 must be nonnegative")
    if frak_a <= 0.0 or scale <= 0.0:
        raise ValueError("normalizing constants must be positive")


def claim2_integral(sigma_h2: float, A: float) -> float:
    """integral_0^1 sqrt(A) P(T_{1/sigma_H} > A y) / sqrt(1-y) dy.

    Tends to sqrt(2 pi) / sigma_H as A grows.  Split at y = 1/2 with the two
    singularity-removing substitutions; absolute error target 1e-8.
    """
    if A < 1.0:
        raise ValueError("A must be at least 1")
    if sigma_h2 <= 0.0:
        raise ValueError("sigma_H^2 must be positive")
    a = 1.0 / np.sqrt(sigma_h2)
    root_a = np.sqrt(A)

    def tail(y):
        return special.erf(a / np.sqrt(2.0 * A * y)) if y > 0.0 else 1.0

    half = np.sqrt(0.5)
    lo, err_lo = integrate.quad(
        lambda v: root_a * tail(v * v) * 2.0 * v / np.sqrt(1.0 - v * v),
        0.0, half, epsabs=1e-12, epsrel=1e-12, limit=200,
    )
    hi, err_hi = integrate.quad(
        lambda u: root_a * tail(1.0 - u * u) * 2.0,
        0.0, half, epsabs=1e-12, epsrel=1e-12, limit=200,
    )
    if err_lo + err_hi > 1e-8:
        raise QuadratureError(f"h-integral error estimate {err_lo + err_hi:.3g}")
    return lo + hi


def h_of_A(sigma2: float, frak_a: float, sigma_h2: float, A: float) -> float:
    """Finite-horizon variance constant: c' times the claim-2 integral."""
    if sigma2 == 0.0:
        return 0.0
    return c_prime(sigma2, frak_a, sigma_h2) * claim2_integral(sigma_h2, A)


@dataclass(frozen=True)
class LimitConstants:
    """The scaling constants for one weight law along one slope."""

    dimension: int
    sigma2: float
    frak_a: float
    quad: float            # sigma_H^2 (d=1) or det Q (d=2)
    cprime: float
    c: float               # c(1) or c(2) by dimension

    def h(self, A: float) -> float:
        if self.dimension != 1:
            raise ValueError("h(A) is a d=1 object")
        return h_of_A(self.sigma2, self.frak_a, self.quad, A)


def limit_constants(dimension: int, sigma2: float, frak_a: float, quad: float) -> LimitConstants:
    if dimension == 1:
        cp = c_prime(sigma2, frak_a, quad)
        c = c1(sigma2, frak_a, quad)
    elif dimension == 2:
        cp = float("nan")
        c = c2(sigma2, frak_a, quad)
    else:
        raise ValueError("dimension must be 1 or 2")
    return LimitConstants(dimension, sigma2, frak_a, quad, cp, c)


def limiting_cov_d1(times) -> np.ndarray:
    """Brownian covariance min(t_j, t_l) for strictly increasing positive times."""
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0 or t[0] <= 0.0 or np.any(np.diff(t) <= 0.0):
        raise ValueError("times must be strictly increasing and positive")
    return np.minimum.outer(t, t)


def limiting_cov_d2(points) -> np.ndarray:
    """FDD covariance for d=2 observation points z_j in Z^2 minus the origin:
    diagonal max(|z(1)|, |z(2)|), off-diagonal half the smaller diagonal."""
    z = np.asarray(points, dtype=float)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValueError("points must be an array of shape (k, 2)")
    if np.any(np.all(z == 0.0, axis=1)):
        raise ValueError("observation points must be nonzero")
    m = np.max(np.abs(z), axis=1)
    cov = 0.5 * np.minimum.outer(m, m)
    np.fill_diagonal(cov, m)
    return cov


def psd_report(mat: np.ndarray) -> tuple[np.ndarray, bool]:
    """Eigenvalues and a PSD verdict, reported rather than asserted."""
    eig = np.linalg.eigvalsh(np.asarray(mat, dtype=float))
    return eig, bool(eig[0] >= -1e-12 * max(1.0, abs(eig[-1])))
