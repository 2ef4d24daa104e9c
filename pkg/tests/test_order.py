import numpy as np
import pytest

from bmtrunc import (
    FiniteBlockMatrix,
    NotStochastic,
    build_generator,
    fc_truncate,
    generator_dominates,
    generator_is_block_monotone,
    is_block_increasing,
    is_block_monotone_stochastic,
    lc_truncate,
    td_transform,
    transition_matrix,
    vector_dominates,
)
from bmtrunc.bmap import BmapModel
from bmtrunc.blockmat import MuRule

from helpers import block_increasing, break_monotone, dominated_pair, random_bmap, t_matrix


def test_td_transform_matches_explicit_multiplication():
    rng = np.random.default_rng(11)
    for d, levels in ((1, 5), (2, 4), (3, 3)):
        T = t_matrix(levels, d)
        x = rng.normal(size=levels * d)
        np.testing.assert_allclose(td_transform(x, d), x @ T, atol=1e-13)
        np.testing.assert_allclose(td_transform(x, d, "T_inverse"),
                                   x @ np.linalg.inv(T), atol=1e-13)
        M = rng.normal(size=(levels * d, levels * d))
        np.testing.assert_allclose(td_transform(M, d), M @ T, atol=1e-12)


def test_td_transform_round_trip():
    rng = np.random.default_rng(12)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        levels = int(rng.integers(1, 7))
        x = rng.normal(size=levels * d)
        back = td_transform(td_transform(x, d), d, "T_inverse")
        np.testing.assert_allclose(back, x, atol=1e-13)
        back = td_transform(td_transform(x, d, "T_inverse"), d)
        np.testing.assert_allclose(back, x, atol=1e-13)


def test_similarity_transform_oracle():
    # T^{-1} Q T on a two-level single-phase generator, by hand:
    # [[-1,1],[2,-3]] -> [[0,1],[-1,-4]].  The off-diagonal entries are the
    # tail-sum differences the monotonicity test inspects: the leaky second
    # row puts -1 below the diagonal, so this matrix is not block monotone,
    # while its conservative completion [[-1,1],[2,-2]] is.
    Q = np.array([[-1.0, 1.0], [2.0, -3.0]])
    T = t_matrix(2, 1)
    similar = np.linalg.inv(T) @ Q @ T
    np.testing.assert_allclose(similar, [[0.0, 1.0], [-1.0, -4.0]], atol=1e-13)
    rep = generator_is_block_monotone(FiniteBlockMatrix(1, Q))
    assert not rep.holds
    assert rep.margin == pytest.approx(-1.0)
    closed = np.array([[-1.0, 1.0], [2.0, -2.0]])
    assert generator_is_block_monotone(FiniteBlockMatrix(1, closed)).holds


def test_vector_dominates_basic():
    mu = np.array([0.5, 0.3, 0.2])
    eta = np.array([0.2, 0.3, 0.5])
    assert vector_dominates(mu, eta, 1).holds
    rep = vector_dominates(eta, mu, 1)
    assert not rep.holds
    assert rep.worst_violation is not None
    assert rep.margin < 0


def test_vector_dominates_pads_shorter_vector():
    short = np.array([0.6, 0.4])
    long = np.array([0.2, 0.3, 0.5])
    assert vector_dominates(short, long, 1).holds
    assert not vector_dominates(long, short, 1).holds


def test_is_block_increasing():
    assert is_block_increasing(np.array([0.0, 1.0, 1.0, 2.5]), 1).holds
    assert is_block_increasing(np.array([1.0, 5.0, 2.0, 6.0]), 2).holds
    assert not is_block_increasing(np.array([1.0, 5.0, 0.5, 6.0]), 2).holds


def test_stochastic_monotone_identity_and_swap():
    assert is_block_monotone_stochastic(np.eye(4), 2).holds
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    rep = is_block_monotone_stochastic(swap, 1)
    assert not rep.holds


def test_stochastic_monotone_rejects_non_stochastic():
    with pytest.raises(NotStochastic):
        is_block_monotone_stochastic(np.array([[0.5, 0.4], [0.2, 0.8]]), 1)
    with pytest.raises(NotStochastic):
        is_block_monotone_stochastic(np.array([[1.1, -0.1], [0.0, 1.0]]), 1)


def test_fleet_generators_are_block_monotone(fleet_models):
    for model in fleet_models.values():
        assert generator_is_block_monotone(model).holds
        corner = lc_truncate(model, 8).matrix
        assert generator_is_block_monotone(corner).holds


def test_broken_generator_is_flagged_with_location():
    rng = np.random.default_rng(5)
    B = random_bmap(rng)
    Q = break_monotone(lc_truncate(build_generator(B), 6).matrix.values, 2, rng)
    rep = generator_is_block_monotone(FiniteBlockMatrix(2, Q))
    assert not rep.holds
    assert rep.worst_violation is not None
    assert rep.margin < -1e-6


def test_dominance_preserved_by_monotone_kernel():
    # a block monotone kernel maps ordered distributions to ordered ones,
    # and ordered distributions agree on every block increasing function
    rng = np.random.default_rng(6)
    d = 2
    for _ in range(20):
        B = random_bmap(rng)
        Q = lc_truncate(build_generator(B), 5).matrix.values
        P = np.eye(Q.shape[0]) + Q / (2.0 * np.abs(np.diag(Q)).max())
        assert is_block_monotone_stochastic(P, d).holds
        mu, eta = dominated_pair(rng, 6, d)
        assert vector_dominates(mu, eta, d).holds
        assert vector_dominates(mu @ P, eta @ P, d).holds
        f = block_increasing(rng, 6, d)
        assert is_block_increasing(f, d).holds
        assert float(mu @ f) <= float(eta @ f) + 1e-12


def test_uniformization_keeps_block_monotonicity():
    rng = np.random.default_rng(7)
    for _ in range(10):
        B = random_bmap(rng)
        Q = lc_truncate(build_generator(B), 6).matrix.values
        sigma = np.abs(np.diag(Q)).max()
        P = np.eye(Q.shape[0]) + Q / sigma
        assert is_block_monotone_stochastic(P, 2, tol=1e-10).holds


def test_truncation_dominance_carries_to_transition_rows(mm1):
    # the smaller generator's transition rows stay dominated at every time
    model = build_generator(mm1)
    fc = fc_truncate(model, 6).matrix
    lc = lc_truncate(model, 6).matrix
    for t in (0.5, 2.0):
        P_fc = transition_matrix(fc, t).values
        P_lc = transition_matrix(lc, t).values
        for r in range(P_fc.shape[0]):
            assert vector_dominates(P_fc[r], P_lc[r], 1, tol=1e-10).holds


def test_generator_dominates_models():
    base = BmapModel(d=1, D=(np.array([[-1.0]]), np.array([[1.0]])),
                     mu=MuRule(table=(2.0,)))
    faster = BmapModel(d=1, D=(np.array([[-1.0]]), np.array([[1.0]])),
                       mu=MuRule(table=(2.2,)))
    assert generator_dominates(build_generator(faster), build_generator(base)).holds
    rep = generator_dominates(build_generator(base), build_generator(faster))
    assert not rep.holds


def test_truncations_dominated_by_base_and_each_other(d2_psi05):
    model = build_generator(d2_psi05)
    lc = lc_truncate(model, 7)
    fc = fc_truncate(model, 7)
    assert generator_dominates(lc, model).holds
    assert generator_dominates(fc, lc).holds
    assert not generator_dominates(lc, fc).holds
