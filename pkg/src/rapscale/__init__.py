"""Random average surfaces on Z^d: exact identities, limit constants,
and reproducible Monte Carlo.

Submodules: weights (laws and moments), surface (forward simulation),
dual (martingale series sampler), chains (difference-chain DP),
potential (potential kernel quadrature), identities (exact moments),
limits (closed-form constants), mc (experiments), cli (executable).
"""

__version__ = "0.1.0"
