"""Random average weight laws and their exact moment-level quantities.

A weight law is a distribution over probability vectors u(0, .) on a finite
offset set V in Z^d.  Everything downstream (difference chains, variance
identities, limit constants) consumes only the closed-form moments computed
here: the mean weights, the pair moments, the projected drift statistics, and
the one-step laws of the two difference chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLawError, MeanConditionError

__all__ = [
    "NeighborhoodSpec",
    "DirichletLaw",
    "MixtureLaw",
    "WeightMoments",
    "StepLaw",
    "slope_vector",
    "compute_moments",
    "drift_stats",
    "h_step_law",
    "d_origin_step_law",
    "sample_weight_vector",
    "sample_weight_block",
    "law_to_dict",
    "law_from_dict",
    "ref1_law",
    "ref2_law",
]


def _as_offset(j, dim: int) -> tuple:
    if np.isscalar(j):
        j = (int(j),)
    else:
        j = tuple(int(c) for c in j)
    if len(j) != dim:
        raise ValueError(f"offset {j} has dimension {len(j)}, expected {dim}")
    return j


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Finite offset set V of a weight law, stored in canonical sorted order."""

    dimension: int          # 1 or 2
    offsets: tuple          # sorted tuples of ints, sup-norm range K = max |j|

    def __init__(self, dimension, offsets):
        dimension = int(dimension)
        if dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {dimension}")
        canon = sorted({_as_offset(j, dimension) for j in offsets})
        object.__setattr__(self, "dimension", dimension)
        object.__setattr__(self, "offsets", tuple(canon))
        ball = [t for t in _unit_ball(dimension) if t not in self.offsets]
        if ball:
            raise ValueError(f"offset set must contain every |j| <= 1 offset, missing {ball}")

    @property
    def range(self) -> int:
        """Sup-norm range K of the offset set."""
        return max(max(abs(c) for c in j) for j in self.offsets)

    @property
    def size(self) -> int:
        return len(self.offsets)

    def array(self) -> np.ndarray:
        """Offsets as an (m, d) integer array in canonical order."""
        return np.array(self.offsets, dtype=np.int64).reshape(len(self.offsets), self.dimension)


def _unit_ball(dim: int) -> list:
    if dim == 1:
        return [(-1,), (0,), (1,)]
    ball = [(0, 0)]
    for a in range(dim):
        for s in (-1, 1):
            e = [0, 0]
            e[a] = s
            ball.append(tuple(e))
    return sorted(ball)


@dataclass(frozen=True)
class DirichletLaw:
    """Dirichlet(alpha) distributed weight vectors on the offset set."""

    spec: NeighborhoodSpec
    alpha: tuple            # positive shape per offset, canonical order

    def __init__(self, spec, alpha):
        alpha = tuple(float(a) for a in alpha)
        if len(alpha) != spec.size:
            raise ValueError(f"need {spec.size} alpha entries, got {len(alpha)}")
        if any(a <= 0 for a in alpha):
            raise ValueError("all Dirichlet parameters must be positive")
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class MixtureLaw:
    """Finite mixture of deterministic weight vectors (atoms) on the offset set."""

    spec: NeighborhoodSpec
    atoms: tuple            # tuple of probability vectors, each in canonical offset order
    probs: tuple            # atom probabilities

    def __init__(self, spec, atoms, probs):
        atoms = tuple(tuple(float(v) for v in a) for a in atoms)
        probs = tuple(float(p) for p in probs)
        if len(atoms) != len(probs) or not atoms:
            raise ValueError("need equally many atoms and probabilities, at least one")
        for a in atoms:
            if len(a) != spec.size:
                raise ValueError(f"atom length {len(a)} does not match offset count {spec.size}")
            if any(v < 0 for v in a) or abs(sum(a) - 1.0) > 1e-12:
                raise ValueError(f"atom {a} is not a probability vector")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("atom probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)


def slope_vector(lam, dim: int) -> np.ndarray:
    """Coerce a scalar or sequence slope to a finite (d,) float vector."""
    arr = np.atleast_1d(np.asarray(lam, dtype=float)).ravel()
    if arr.size != dim:
        raise ValueError(f"slope has {arr.size} entries, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("slope entries must be finite")
    return arr


@dataclass(frozen=True)
class StepLaw:
    """One-step law of a difference chain: symmetric distribution on Z^d offsets."""

    dimension: int
    offsets: np.ndarray     # (n, d) int64, canonical order
    probs: np.ndarray       # (n,) float64, sums to 1

    def prob(self, k) -> float:
        k = _as_offset(k, self.dimension)
        hit = np.all(self.offsets == np.array(k, dtype=np.int64), axis=1)
        idx = np.nonzero(hit)[0]
        return float(self.probs[idx[0]]) if idx.size else 0.0


@dataclass(frozen=True)
class WeightMoments:
    """Exact first and second moments of a weight law."""

    spec: NeighborhoodSpec
    mean: np.ndarray        # ubar(j), canonical offset order
    pair: np.ndarray        # m(j,k) = E[u(j)u(k)], (m, m) symmetric PSD
    law: object = field(repr=False, default=None)

    @property
    def drift_mean(self) -> np.ndarray:
        """E of the one-step drift vector sum_j j*u(j), in R^d."""
        return self.spec.array().T.astype(float) @ self.mean


def compute_moments(law) -> WeightMoments:
    """Closed-form mean and pair moments of a weight law.

    Dirichlet(alpha): ubar(j) = a_j/S, m(j,k) = a_j a_k/(S(S+1)) off the
    diagonal and a_j(a_j+1)/(S(S+1)) on it, with S the parameter sum.
    Mixture: moments are probability-weighted sums over the atoms.
    """
    spec = law.spec
    if isinstance(law, DirichletLaw):
        a = np.array(law.alpha)
        s = a.sum()
        mean = a / s
        pair = np.outer(a, a) / (s * (s + 1.0))
        pair[np.diag_indices_from(pair)] = a * (a + 1.0) / (s * (s + 1.0))
    elif isinstance(law, MixtureLaw):
        atoms = np.array(law.atoms)
        probs = np.array(law.probs)
        mean = probs @ atoms
        pair = np.einsum("m,mj,mk->jk", probs, atoms, atoms)
    else:
        raise TypeError(f"unsupported weight law type {type(law).__name__}")
    _check_mean_condition(spec, mean)
    return WeightMoments(spec=spec, mean=mean, pair=pair, law=law)


def _check_mean_condition(spec: NeighborhoodSpec, mean: np.ndarray) -> None:
    for j in _unit_ball(spec.dimension):
        if mean[spec.offsets.index(j)] <= 0.0:
            raise MeanConditionError(f"mean weight at offset {j} is not positive")


def drift_stats(law_or_moments, lam) -> tuple:
    """Projected drift statistics (mu, sigma2, drift_mean) for slope lam.

    mu = sum_j (j.lam) ubar(j); sigma2 = sum_jk (j.lam)(k.lam) m(j,k) - mu^2.
    """
    mom = law_or_moments if isinstance(law_or_moments, WeightMoments) else compute_moments(law_or_moments)
    lam = slope_vector(lam, mom.spec.dimension)
    proj = mom.spec.array().astype(float) @ lam
    mu = float(proj @ mom.mean)
    second = float(proj @ mom.pair @ proj)
    sigma2 = second - mu * mu
    # snap cancellation-level residue of exact-zero variances to 0
    if abs(sigma2) <= 1e-14 * max(1.0, second + mu * mu):
        sigma2 = 0.0
    if sigma2 < 0.0:
        raise AssertionError(f"negative variance {sigma2} from a PSD pair moment")
    return mu, sigma2, mom.drift_mean


def require_nondegenerate(law_or_moments, lam) -> float:
    """Return sigma2, refusing degenerate laws (sigma2 == 0)."""
    _, sigma2, _ = drift_stats(law_or_moments, lam)
    if sigma2 <= 0.0:
        raise DegenerateLawError("drift variance is zero for this law and slope")
    return sigma2


def _difference_support(spec: NeighborhoodSpec) -> tuple:
    offs = spec.array()
    diffs = sorted({tuple(int(c) for c in (offs[i] - offs[j])) for i in range(len(offs)) for j in range(len(offs))})
    return tuple(diffs)


def h_step_law(moments: WeightMoments) -> StepLaw:
    """One-step law q_H(k) = sum_j ubar(j) ubar(j+k) of the independent-pair difference."""
    return _difference_law(moments.spec, np.outer(moments.mean, moments.mean))


def d_origin_step_law(moments: WeightMoments) -> StepLaw:
    """One-step law q_D(k) = sum_j m(j, j+k) of the shared-vector difference at the origin."""
    return _difference_law(moments.spec, moments.pair)


def _difference_law(spec: NeighborhoodSpec, second: np.ndarray) -> StepLaw:
    support = _difference_support(spec)
    index = {j: i for i, j in enumerate(spec.offsets)}
    probs = np.zeros(len(support))
    offs = spec.array()
    for t, k in enumerate(support):
        karr = np.array(k, dtype=np.int64)
        acc = 0.0
        for i, j in enumerate(spec.offsets):
            shifted = tuple(int(c) for c in (offs[i] + karr))
            if shifted in index:
                acc += second[index[shifted], i]
        probs[t] = acc
    total = probs.sum()
    if abs(total - 1.0) > 1e-12:
        raise AssertionError(f"difference law mass {total} deviates from 1")
    return StepLaw(
        dimension=spec.dimension,
        offsets=np.array(support, dtype=np.int64).reshape(len(support), spec.dimension),
        probs=probs / total,
    )


def sample_weight_vector(law, rng: np.random.Generator) -> np.ndarray:
    """Draw one weight vector from the law; exact family sample, renormalized."""
    return sample_weight_block(law, rng, 1)[0]


def sample_weight_block(law, rng: np.random.Generator, n_sites: int) -> np.ndarray:
    """Draw weight vectors for n_sites sites in canonical site order.

    Returns an (n_sites, m) array; rows are independent samples.  Dirichlet
    rows come from unit-rate exponentials when all alpha equal 1 (exact
    Gamma(1) draws) and from gamma variates otherwise; mixture rows gather
    atoms from one categorical uniform per site.
    """
    if isinstance(law, DirichletLaw):
        a = np.array(law.alpha)
        if np.all(a == 1.0):
            block = rng.standard_exponential(size=(n_sites, a.size))
        else:
            block = rng.standard_gamma(a, size=(n_sites, a.size))
        total = block.sum(axis=1, keepdims=True)
        block /= total
        # guard against a pathological all-tiny gamma row
        bad = ~np.isfinite(block).all(axis=1)
        if bad.any():
            block[bad] = 1.0 / a.size
        return block
    if isinstance(law, MixtureLaw):
        atoms = np.array(law.atoms)
        cum = np.cumsum(np.array(law.probs))
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(n_sites), side="right")
        return atoms[idx]
    raise TypeError(f"unsupported weight law type {type(law).__name__}")


def law_to_dict(law) -> dict:
    """Serializable description of a weight law; inverse of law_from_dict."""
    base = {
        "dimension": law.spec.dimension,
        "offsets": [list(j) for j in law.spec.offsets],
    }
    if isinstance(law, DirichletLaw):
        return {"family": "dirichlet", **base, "alpha": list(law.alpha)}
    if isinstance(law, MixtureLaw):
        return {"family": "mixture", **base,
                "atoms": [list(a) for a in law.atoms], "probs": list(law.probs)}
    raise TypeError(f"unsupported weight law type {type(law).__name__}")


def law_from_dict(d: dict):
    """Build a weight law from its dict form, rejecting unknown keys."""
    if not isinstance(d, dict) or "family" not in d:
        raise ValueError("law description must be a dict with a 'family' key")
    family = d["family"]
    allowed = {"dirichlet": {"family", "dimension", "offsets", "alpha"},
               "mixture": {"family", "dimension", "offsets", "atoms", "probs"}}
    if family not in allowed:
        raise ValueError(f"unknown law family {family!r}")
    extra = set(d) - allowed[family]
    if extra:
        raise ValueError(f"unknown law keys {sorted(extra)}")
    missing = allowed[family] - set(d)
    if missing:
        raise ValueError(f"law description missing keys {sorted(missing)}")
    spec = NeighborhoodSpec(d["dimension"], [tuple(j) for j in d["offsets"]])
    if family == "dirichlet":
        return DirichletLaw(spec, d["alpha"])
    return MixtureLaw(spec, d["atoms"], d["probs"])


def ref1_law() -> DirichletLaw:
    """d=1 Dirichlet(1,1,1) on {-1,0,1}: the standard 1-d reference law."""
    return DirichletLaw(NeighborhoodSpec(1, [(-1,), (0,), (1,)]), (1.0, 1.0, 1.0))


def ref2_law() -> DirichletLaw:
    """d=2 Dirichlet(1,...,1) on the 5-point star: the standard 2-d reference law."""
    spec = NeighborhoodSpec(2, [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)])
    return DirichletLaw(spec, (1.0,) * 5)
