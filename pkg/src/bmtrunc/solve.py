"""Numerical engines: stationary vectors, uniformized transition matrices,
and the distances used by the error bounds.

The stationary solver is a subtraction-free state-elimination scheme working
directly on transition rates, so every intermediate quantity stays
nonnegative and the result keeps componentwise relative accuracy; that
matters because bound validation compares total-variation errors down to
1e-10 and below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blockmat import FiniteBlockMatrix
from .errors import (
    CertificateNotVerified,
    DimensionMismatch,
    InputError,
    KNotZero,
    MultipleClosedClasses,
    NoConvergence,
)

PIVOT_FLOOR = 1e-14
RESIDUAL_FACTOR = 1e-12


@dataclass
class DistributionVector:
    """Probability vector over (level, phase) states with provenance."""

    d: int
    values: np.ndarray
    source: str = "full-reference"
    n: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.n is None and self.values.size % self.d == 0:
            self.n = self.values.size // self.d - 1


def _square_values(G, d: int | None):
    if isinstance(G, FiniteBlockMatrix):
        return G.values, G.d
    values = np.asarray(G, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {values.shape}")
    return values, (1 if d is None else d)


def stationary(G, d: int | None = None, source: str = "full-reference") -> DistributionVector:
    """Stationary distribution of a finite conservative q-matrix.

    States are eliminated highest index first.  Elimination folds each
    removed state's rates back into the remaining ones using only additions,
    multiplications and divisions of nonnegative numbers, so no cancellation
    occurs and small stationary probabilities come out with full relative
    accuracy.  A vanishing elimination pivot means the state cannot reach the
    surviving ones, i.e. the chain has more than one closed class.
    """
    values, d = _square_values(G, d)
    N = values.shape[0]
    diag_scale = float(np.max(np.abs(np.diag(values)))) if N else 0.0
    A = values.copy()
    floor = PIVOT_FLOOR * max(1.0, diag_scale)
    for s in range(N - 1, 0, -1):
        scale = float(A[s, :s].sum())
        if scale <= floor:
            raise MultipleClosedClasses(
                f"elimination pivot {scale:.3e} at state {s}: no path from "
                "the top states back down, the chain is reducible"
            )
        A[:s, s] /= scale
        A[:s, :s] += np.outer(A[:s, s], A[s, :s])
    x = np.zeros(N)
    x[0] = 1.0
    for s in range(1, N):
        x[s] = x[:s] @ A[:s, s]
    x /= x.sum()
    residual = float(np.max(np.abs(x @ values))) if N else 0.0
    if residual > RESIDUAL_FACTOR * max(1.0, diag_scale):
        raise NoConvergence(
            f"stationary residual {residual:.3e} exceeds contract "
            f"{RESIDUAL_FACTOR * max(1.0, diag_scale):.3e}"
        )
    return DistributionVector(d=d, values=x, source=source)


def _poisson_weights(lam: float, tol: float) -> np.ndarray:
    """Poisson pmf values 0..M where M is the smallest index with tail < tol."""
    if lam <= 0.0:
        return np.array([1.0])
    if lam <= 700.0:
        weights = [math.exp(-lam)]
        cum = weights[0]
        m = 0
        while cum < 1.0 - tol:
            m += 1
            weights.append(weights[-1] * lam / m)
            cum += weights[-1]
        return np.array(weights)
    # large rates: work from log pmf to dodge underflow of the m=0 term
    hi = int(lam + 40.0 * math.sqrt(lam) + 50.0)
    m = np.arange(hi + 1, dtype=float)
    log_lam = math.log(lam)
    logw = -lam + m * log_lam - np.array([math.lgamma(v + 1.0) for v in m])
    w = np.exp(logw)
    cum = np.cumsum(w)
    cut = int(np.searchsorted(cum, 1.0 - tol)) + 1
    return w[:cut]


def transition_matrix(G, t: float, tol: float = 1e-12, d: int | None = None) -> FiniteBlockMatrix:
    """P(t) = exp(Gt) by uniformization.

    With sigma the largest diagonal magnitude, A = I + G/sigma is
    substochastic-free of negative entries, and P(t) is the Poisson(sigma*t)
    mixture of its powers; the series is cut when the remaining Poisson mass
    drops below tol.
    """
    values, d = _square_values(G, d)
    if t < 0:
        raise InputError(f"time must be >= 0, got {t}")
    N = values.shape[0]
    sigma = float(np.max(np.abs(np.diag(values)))) if N else 1.0
    if sigma <= 0.0:
        sigma = 1.0
    A = np.eye(N) + values / sigma
    weights = _poisson_weights(sigma * t, tol)
    P = np.zeros_like(values)
    term = np.eye(N)
    for i, w in enumerate(weights):
        if i > 0:
            term = term @ A
        if w > 0.0:
            P += w * term
    return FiniteBlockMatrix(d, P)


def _pad_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = max(a.size, b.size)
    pa = np.zeros(n)
    pb = np.zeros(n)
    pa[: a.size] = a
    pb[: b.size] = b
    return pa, pb


def tv_distance(a, b) -> float:
    """Total variation distance in the sum convention: values in [0, 2].

    Shorter vectors are zero-padded, which is exactly how truncation outputs
    embed into the full state space.
    """
    da = a.d if isinstance(a, DistributionVector) else None
    db = b.d if isinstance(b, DistributionVector) else None
    if da is not None and db is not None and da != db:
        raise DimensionMismatch(f"block sizes differ: {da} vs {db}")
    va = np.asarray(getattr(a, "values", a), dtype=float)
    vb = np.asarray(getattr(b, "values", b), dtype=float)
    pa, pb = _pad_pair(va, vb)
    return float(np.abs(pa - pb).sum())


def v_norm(x, v) -> float:
    """Weighted absolute sum |x| . v; the weight must cover x and be >= 1."""
    xv = np.asarray(getattr(x, "values", x), dtype=float)
    vv = np.asarray(getattr(v, "values", v), dtype=float)
    if vv.size < xv.size:
        raise DimensionMismatch(
            f"weight vector covers {vv.size} states, signed vector has {xv.size}"
        )
    if float(vv.min()) < 1.0 - 1e-12:
        raise InputError(f"weight vector dips to {vv.min()}, must be >= 1")
    return float(np.abs(xv) @ vv[: xv.size])


@dataclass
class DecayReport:
    """Measured transient deviations against their exponential envelopes."""

    times: list
    measured: list
    limits: list
    eps_trunc: float
    start_level: int
    ok: bool = field(init=False)

    def __post_init__(self):
        self.ok = all(m <= l for m, l in zip(self.measured, self.limits))


def transient_decay_check(model, cert, times, start_level: int = 0,
                          n_ref: int = 200, eps_trunc: float | None = None) -> DecayReport:
    """Check the exponential-ergodicity envelope on a finite proxy.

    The chain is started at the given level with phases drawn from the phase
    process's own stationary law, and the weighted deviation from stationarity
    at each time must fit under 2 e^{-ct} (v(start) + b/c), the v(start) term
    dropped at level 0.  Working on the level-n_ref last-column proxy adds a
    truncation slack, reported and added to the envelope rather than ignored.
    """
    from . import bounds as _bounds
    from .blockmat import phase_generator
    from .truncate import lc_truncate

    if not cert.verified:
        raise CertificateNotVerified("run drift_check before the decay check")
    if cert.K != 0:
        raise KNotZero("decay envelope needs a level-0 certificate; transform first")
    d = model.d
    proxy = lc_truncate(model, n_ref)
    pi_ref = stationary(proxy.matrix, source="lc")
    xi = phase_generator(model)
    phase_law = stationary(FiniteBlockMatrix(d, xi)).values
    if eps_trunc is None:
        eps_trunc = _bounds.minimized_bound(cert, model, n_ref)
    v_vec = cert.v.levels(n_ref)
    p0 = np.zeros((n_ref + 1) * d)
    p0[start_level * d:(start_level + 1) * d] = phase_law
    v_start = float(phase_law @ cert.v.level(start_level)) if start_level > 0 else 0.0
    measured = []
    limits = []
    for t in times:
        pt = p0 @ transition_matrix(proxy.matrix, t).values
        measured.append(v_norm(pt - pi_ref.values, v_vec))
        limits.append(2.0 * math.exp(-cert.c * t) * (v_start + cert.b / cert.c) + eps_trunc)
    return DecayReport(
        times=list(times),
        measured=measured,
        limits=limits,
        eps_trunc=float(eps_trunc),
        start_level=start_level,
    )
