"""Numba-compiled inner loops; every kernel has a numpy twin used in tests.

The hot paths are the d=2 stencil spread (difference-chain DP) and the
dual-series step (walker distributions pushed through a sampled layer).
All kernels are deterministic functions of their inputs; randomness is drawn
by callers from per-replica streams.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def stencil_spread_2d(arr, off1, off2, probs, out):
    """out[i,j] = sum_c probs[c] * arr[i - r - off1[c], j - r - off2[c]].

    out must be zero-filled with shape arr.shape + 2r per axis; reads outside
    arr count as zero mass.
    """
    n1, n2 = arr.shape
    m1, m2 = out.shape
    r1 = (m1 - n1) // 2
    r2 = (m2 - n2) // 2
    nc = probs.shape[0]
    for i in range(m1):
        for c in range(nc):
            si = i - r1 - off1[c]
            if si < 0 or si >= n1:
                continue
            p = probs[c]
            o2 = r2 + off2[c]
            lo = o2 if o2 > 0 else 0
            hi = n2 + o2 if n2 + o2 < m2 else m2
            for j in range(lo, hi):
                out[i, j] += p * arr[si, j - o2]


@njit(cache=True)
def average_heights_1d(heights, weights, offsets, out):
    """out[l] = sum_c weights[l,c] * heights[l + K + offsets[c]] for the shrunk window.

    heights has length L; out has length L - 2K and is indexed so out[l]
    corresponds to heights[l + K].
    """
    m = offsets.shape[0]
    kpad = (heights.shape[0] - out.shape[0]) // 2
    for l in range(out.shape[0]):
        acc = 0.0
        for c in range(m):
            acc += weights[l, c] * heights[l + kpad + offsets[c]]
        out[l] = acc


@njit(cache=True)
def average_heights_2d(heights, weights, off1, off2, out):
    """2-d surface update on a window shrinking by K per side."""
    m = off1.shape[0]
    p1 = (heights.shape[0] - out.shape[0]) // 2
    p2 = (heights.shape[1] - out.shape[1]) // 2
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            acc = 0.0
            for c in range(m):
                acc += weights[i, j, c] * heights[i + p1 + off1[c], j + p2 + off2[c]]
            out[i, j] = acc


@njit(cache=True)
def layer_stats_1d(stack, weights, proj, incr_out, coin_out, want_coin):
    """Per-step dual statistics on a common 1-d window.

    stack:   (w+1, L) walker distributions, row 0 is the base walker.
    weights: (L, m) normalized weight vectors per site.
    proj:    (m,) offset-dot-slope projections.
    incr_out: (w,) increments sum_l (rho_k - rho_0)(l) * theta(l).
    coin_out: (w+1,) quenched coincidences sum_l rho_k(l)*rho_0(l) (k=0 gives
              the base self-coincidence); filled only when want_coin.
    """
    nw = stack.shape[0]
    length = stack.shape[1]
    m = proj.shape[0]
    for k in range(nw - 1):
        incr_out[k] = 0.0
    if want_coin:
        for k in range(nw):
            coin_out[k] = 0.0
    for l in range(length):
        theta = 0.0
        for c in range(m):
            theta += weights[l, c] * proj[c]
        r0 = stack[0, l]
        for k in range(1, nw):
            incr_out[k - 1] += (stack[k, l] - r0) * theta
        if want_coin:
            for k in range(1, nw):
                coin_out[k] += stack[k, l] * r0
            coin_out[0] += r0 * r0


@njit(cache=True)
def push_forward_1d(stack, weights, offsets, out):
    """Push every walker distribution through one sampled layer (1-d).

    out must be zero-filled with shape (w+1, L + 2K); offsets are the signed
    weight offsets, column c of weights moves mass from site l to l+offsets[c].
    """
    nw, length = stack.shape
    m = offsets.shape[0]
    kpad = (out.shape[1] - length) // 2
    for k in range(nw):
        for l in range(length):
            v = stack[k, l]
            if v == 0.0:
                continue
            for c in range(m):
                out[k, l + kpad + offsets[c]] += v * weights[l, c]


@njit(cache=True)
def layer_stats_2d(stack, weights, proj, incr_out, coin_out, want_coin):
    """Per-step dual statistics on a common 2-d window (stack: (w+1, L1, L2))."""
    nw = stack.shape[0]
    n1 = stack.shape[1]
    n2 = stack.shape[2]
    m = proj.shape[0]
    for k in range(nw - 1):
        incr_out[k] = 0.0
    if want_coin:
        for k in range(nw):
            coin_out[k] = 0.0
    for i in range(n1):
        for j in range(n2):
            theta = 0.0
            for c in range(m):
                theta += weights[i, j, c] * proj[c]
            r0 = stack[0, i, j]
            for k in range(1, nw):
                incr_out[k - 1] += (stack[k, i, j] - r0) * theta
            if want_coin:
                for k in range(1, nw):
                    coin_out[k] += stack[k, i, j] * r0
                coin_out[0] += r0 * r0


@njit(cache=True)
def push_forward_2d(stack, weights, off1, off2, out):
    """Push walker distributions through a layer on a 2-d window."""
    nw, n1, n2 = stack.shape
    m = off1.shape[0]
    p1 = (out.shape[1] - n1) // 2
    p2 = (out.shape[2] - n2) // 2
    for k in range(nw):
        for i in range(n1):
            for j in range(n2):
                v = stack[k, i, j]
                if v == 0.0:
                    continue
                for c in range(m):
                    out[k, i + p1 + off1[c], j + p2 + off2[c]] += v * weights[i, j, c]
