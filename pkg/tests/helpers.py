"""Shared oracles and generators for the test suite.

Everything here is independent of the library internals on purpose: tail
sums are recomputed with plain numpy slicing, the reference minimizer is a
golden-section search with a parabolic polish, and random models are
assembled entry by entry.
"""

import json
import math

import numpy as np

from bmtrunc import BmapModel, MuRule


def golden_min(f, lo, hi, h_floor=1e-4):
    """Minimize a unimodal function on [lo, hi] to well under 1e-8 relative.

    Golden-section narrows the bracket to h_floor, then one parabolic fit
    through three points h apart polishes the result.  A minimum sitting on
    the left boundary is returned as lo exactly.
    """
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c1 = b - phi * (b - a)
    c2 = a + phi * (b - a)
    f1, f2 = f(c1), f(c2)
    while (b - a) > h_floor:
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - phi * (b - a)
            f1 = f(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + phi * (b - a)
            f2 = f(c2)
    t0 = (a + b) / 2
    if f(lo) <= f(t0):
        return lo
    h = max(h_floor, 1e-6 * abs(t0))
    if t0 - h < lo:
        t0 = lo + h
    fm, f0, fp = f(t0 - h), f(t0), f(t0 + h)
    denom = fp - 2 * f0 + fm
    if denom <= 0:
        return t0
    return min(max(t0 - 0.5 * h * (fp - fm) / denom, lo), hi)


def phase_tails(x, d):
    """Per-phase reverse cumulative sums of a flat vector, as (levels, d)."""
    m = np.asarray(x, dtype=float).reshape(-1, d)
    return m[::-1].cumsum(axis=0)[::-1]


def t_matrix(levels, d):
    """The block lower-triangular ones matrix, materialized."""
    T = np.zeros((levels * d, levels * d))
    for k in range(levels):
        for l in range(k + 1):
            T[k * d:(k + 1) * d, l * d:(l + 1) * d] = np.eye(d)
    return T


def bmap_doc(B):
    """JSON document for a BmapModel in the model-file layout."""
    mu = {"table": list(B.mu.table), "eventual": B.mu.eventual,
          "slope": B.mu.slope}
    if B.mu.value is not None:
        mu["value"] = B.mu.value
    params = {"D": [np.asarray(m).tolist() for m in B.D], "mu": mu,
              "psi": B.psi}
    if B.tail is not None:
        params["tail"] = {"coef": np.asarray(B.tail.coef).tolist(),
                          "ratio": B.tail.ratio}
    return {"d": B.d, "kind": "BmapQueue", "parameters": params}


def write_model(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def random_bmap(rng, d=2, scale=1.0, psi=0.0):
    """A random irreducible arrival process with nondecreasing service.

    All off-diagonal rates are strictly positive, so the phase process is
    irreducible, and the sorted service table keeps the generator block
    monotone.  `scale` multiplies every rate, slowing the chain down
    uniformly without touching its structure.
    """
    D1 = rng.uniform(0.15, 0.5, (d, d))
    D2 = rng.uniform(0.05, 0.25, (d, d))
    off = rng.uniform(0.2, 1.0, (d, d))
    np.fill_diagonal(off, 0.0)
    D0 = off.copy()
    np.fill_diagonal(D0, -(off.sum(axis=1) + D1.sum(axis=1) + D2.sum(axis=1)))
    table = tuple(sorted(rng.uniform(1.0, 3.0, size=2)))
    return BmapModel(d=d, D=tuple(scale * m for m in (D0, D1, D2)),
                     mu=MuRule(table=tuple(scale * t for t in table)),
                     psi=scale * psi)


def break_monotone(values, d, rng):
    """Spoil block monotonicity while keeping a conservative q-matrix.

    Strips the one-up entry and most of the two-up entry of one interior
    row at a single phase column, routing the rate downward instead.  The
    row's tail beyond the next level then falls strictly below the tail of
    the row above it, at a component the monotonicity test never masks.
    """
    Q = np.asarray(values, dtype=float).copy()
    levels = Q.shape[0] // d
    k = levels // 2
    i = int(rng.integers(d))
    row = k * d + i
    j = int(np.argmax(Q[row, (k + 2) * d:(k + 3) * d]))
    up1 = (k + 1) * d + j
    up2 = (k + 2) * d + j
    take = Q[row, up1] + 0.8 * Q[row, up2]
    Q[row, up1] = 0.0
    Q[row, up2] *= 0.2
    Q[row, (k - 1) * d + (i + 1) % d] += take
    return Q


def dominated_pair(rng, levels, d):
    """A distribution eta and a copy with mass moved to lower levels."""
    eta = rng.dirichlet(np.ones(levels * d))
    mu = eta.reshape(levels, d).copy()
    for _ in range(4):
        src = int(rng.integers(1, levels))
        dst = int(rng.integers(src))
        ph = int(rng.integers(d))
        amount = rng.uniform(0, mu[src, ph])
        mu[src, ph] -= amount
        mu[dst, ph] += amount
    return mu.ravel(), eta


def block_increasing(rng, levels, d):
    """A nonnegative vector nondecreasing in level within each phase."""
    f = rng.uniform(0, 1, (levels, d)).cumsum(axis=0) + rng.uniform(0, 1, d)
    return f.ravel()
