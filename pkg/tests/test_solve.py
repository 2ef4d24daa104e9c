import dataclasses

import numpy as np
import pytest
import scipy.linalg

from bmtrunc import (
    CertificateNotVerified,
    DimensionMismatch,
    DistributionVector,
    FiniteBlockMatrix,
    GeometricVector,
    InputError,
    KNotZero,
    MultipleClosedClasses,
    build_generator,
    lc_truncate,
    solve,
    stationary,
    transient_decay_check,
    transition_matrix,
    tv_distance,
    v_norm,
)
from helpers import random_bmap


def test_stationary_two_state_exact():
    G = np.array([[-1.0, 1.0], [2.0, -2.0]])
    pi = stationary(G, d=1)
    np.testing.assert_allclose(pi.values, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    # wrapping in a block matrix gives the same answer and carries d along
    pi2 = stationary(FiniteBlockMatrix(d=1, values=G))
    assert pi2.d == 1
    np.testing.assert_allclose(pi2.values, pi.values, atol=1e-15)


def test_stationary_residual_contract(fleet_models):
    for model in fleet_models.values():
        Q = lc_truncate(model, 30).matrix
        pi = stationary(Q)
        resid = float(np.abs(pi.values @ Q.values).max())
        scale = max(1.0, float(np.abs(np.diag(Q.values)).max()))
        assert resid <= 1e-12 * scale


def test_stationary_rejects_two_closed_classes():
    G = np.array([
        [-1.0, 1.0, 0.0, 0.0],
        [1.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -2.0, 2.0],
        [0.0, 0.0, 3.0, -3.0],
    ])
    with pytest.raises(MultipleClosedClasses):
        stationary(G, d=1)


def test_single_phase_queue_is_truncated_geometric(mm1):
    # the last-column corner of the rate-1/rate-2 queue keeps detailed
    # balance, so its stationary law is the geometric law conditioned on
    # {0..n}
    n, rho = 10, 0.5
    Q = lc_truncate(build_generator(mm1), n).matrix
    pi = stationary(Q)
    expected = (1 - rho) * rho ** np.arange(n + 1) / (1 - rho ** (n + 1))
    np.testing.assert_allclose(pi.values, expected, atol=1e-12)


def test_transition_matrix_matches_dense_exponential():
    rng = np.random.default_rng(5)
    Q = lc_truncate(build_generator(random_bmap(rng)), 5).matrix
    for t in (0.3, 1.7):
        P = transition_matrix(Q, t)
        np.testing.assert_allclose(P.values, scipy.linalg.expm(t * Q.values),
                                   atol=1e-11)
        np.testing.assert_allclose(P.values.sum(axis=1), 1.0, atol=1e-12)
        assert P.values.min() >= -1e-15
    np.testing.assert_allclose(transition_matrix(Q, 0.0).values,
                               np.eye(Q.values.shape[0]), atol=1e-15)


def test_transition_matrix_semigroup():
    rng = np.random.default_rng(11)
    Q = lc_truncate(build_generator(random_bmap(rng)), 4).matrix
    P1 = transition_matrix(Q, 1.0).values
    Ps = transition_matrix(Q, 0.3).values @ transition_matrix(Q, 0.7).values
    np.testing.assert_allclose(P1, Ps, atol=1e-9)


def test_long_horizon_rows_reach_stationarity(mm1):
    Q = lc_truncate(build_generator(mm1), 20).matrix
    pi = stationary(Q)
    P = transition_matrix(Q, 1e3)
    for row in P.values:
        np.testing.assert_allclose(row, pi.values, atol=1e-9)


def test_tv_distance_basics():
    a = DistributionVector(d=1, values=np.array([1.0, 0.0, 0.0]))
    b = DistributionVector(d=1, values=np.array([0.0, 0.0, 1.0]))
    assert tv_distance(a, b) == pytest.approx(2.0)
    assert tv_distance(a, a) == 0.0
    # shorter vectors are padded with zeros
    c = DistributionVector(d=1, values=np.array([0.5, 0.5]))
    assert tv_distance(a, c) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        tv_distance(a, DistributionVector(d=2, values=np.array([0.5, 0.5])))


def test_tv_distance_triangle_inequality():
    rng = np.random.default_rng(3)
    for _ in range(25):
        x, y, z = (rng.random(6) for _ in range(3))
        x, y, z = x / x.sum(), y / y.sum(), z / z.sum()
        assert tv_distance(x, z) <= tv_distance(x, y) + tv_distance(y, z) + 1e-14


def test_v_norm_hand_value_and_guards():
    v = GeometricVector(beta=2.0, u=np.array([1.0]), shift=0.0)
    x = np.array([0.25, 0.25, 0.5])
    assert v_norm(x, v.levels(2)) == pytest.approx(2.75)
    with pytest.raises(DimensionMismatch):
        v_norm(np.ones(5), v.levels(2))
    with pytest.raises(InputError):
        v_norm(x, np.array([0.5, 2.0, 4.0]))


def test_geometric_vector_shift_skips_level_zero():
    v = GeometricVector(beta=2.0, u=np.array([1.0]), shift=0.25)
    np.testing.assert_allclose(v.levels(3), [1.0, 2.25, 4.25, 8.25])


def test_transient_decay_envelope(mm1, fleet_certs):
    rep = transient_decay_check(build_generator(mm1), fleet_certs["mm1"],
                                times=(0.0, 5.0), n_ref=60)
    assert rep.ok
    assert all(m <= l for m, l in zip(rep.measured, rep.limits))
    assert rep.eps_trunc < 1e-4


def test_transient_decay_check_guards(mm1, fleet_certs):
    G = build_generator(mm1)
    cert = fleet_certs["mm1"]
    with pytest.raises(KNotZero):
        transient_decay_check(G, dataclasses.replace(cert, K=3),
                              times=(0.0,), n_ref=40)
    with pytest.raises(CertificateNotVerified):
        transient_decay_check(G, dataclasses.replace(cert, verified=False),
                              times=(0.0,), n_ref=40)
