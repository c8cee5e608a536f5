import logging

import numpy as np
import pytest

from tensorcomp.factorize import (
    CpModel,
    CpOptions,
    EmptyModelError,
    TuckerModel,
    combine_factors,
    cp_als,
    cp_to_tucker,
    detect_ranks,
    extract_tucker,
    interpret,
    reconstruct,
)
from tensorcomp.solvers import Diagnostics, Solution, SolverConfig, solve_as_matrix, solve_constraint
from tensorcomp.tensor_core import DenseTensor, ObservationSet, ShapeError, mode_product, unfold_array
from tensorcomp.workbench import SynthSpec, gen_lowrank, haar_orthonormal, sample_observations


def _full_observation(X):
    values = X.values
    return ObservationSet.from_linear(X.shape, np.arange(values.size), values)


def _unit_columns(rng, n, r):
    A = rng.standard_normal((n, r))
    return A / np.linalg.norm(A, axis=0)


def _cp_tensor(weights, factors):
    X = np.einsum("r,ir,jr,kr->ijk", weights, *factors)
    return DenseTensor(X)


def _greedy_cosines(true, found):
    """Best absolute cosine per true column, matched greedily without reuse."""
    C = np.abs(_normalize(true).T @ _normalize(found))
    out = []
    free = list(range(C.shape[1]))
    for i in np.argsort(-C.max(axis=1)):
        j = max(free, key=lambda c: C[i, c])
        out.append(C[i, j])
        free.remove(j)
    return np.array(out)


def _normalize(A):
    return A / np.linalg.norm(A, axis=0)


def test_detect_ranks_examples():
    Z = np.diag([10.0, 5.0, 0.05])
    assert detect_ranks([Z], 0.01) == (2,)
    assert detect_ranks([Z], 0.001) == (3,)
    assert detect_ranks([np.zeros((3, 4))]) == (0,)
    assert detect_ranks([7.0 * Z]) == detect_ranks([Z])
    with pytest.raises(ValueError):
        detect_ranks([Z], 1.5)


def test_rank_detection_and_tucker_round_trip():
    X = gen_lowrank(SynthSpec((12, 10, 8), (2, 3, 4), seed=7))
    sol = solve_constraint(_full_observation(X), X.shape, SolverConfig(tol=1e-6, max_iter=3000))
    assert detect_ranks(sol.components, 0.01) == (2, 3, 4)
    tucker = extract_tucker(sol, 0.01)
    assert tucker.ranks == (2, 3, 4)
    for U in tucker.factors:
        np.testing.assert_allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-8)
    err = np.linalg.norm(reconstruct(tucker).data - X.data) / X.norm()
    assert err <= 1e-6


def test_rank_one_core_carries_the_norm():
    X = gen_lowrank(SynthSpec((6, 5, 4), (1, 1, 1), seed=2))
    sol = solve_constraint(_full_observation(X), X.shape, SolverConfig(tol=1e-6, max_iter=3000))
    tucker = extract_tucker(sol)
    assert tucker.core.shape == (1, 1, 1)
    assert abs(tucker.core.data.item()) == pytest.approx(X.norm(), rel=1e-6)


def test_extract_tucker_from_matrix_solution(small_problem):
    X, obs = small_problem
    sol = solve_as_matrix(obs, X.shape, 0, SolverConfig(max_iter=500))
    tucker = extract_tucker(sol)
    assert tucker.shape == X.shape


def test_zero_estimate_is_an_empty_model():
    shape = (3, 4, 2)
    zero = DenseTensor.zeros(shape)
    sol = Solution(
        method="constraint",
        X_hat=zero,
        components=tuple(unfold_array(zero.data, k) for k in range(3)),
        multipliers=(),
        diagnostics=Diagnostics(),
    )
    with pytest.raises(EmptyModelError):
        extract_tucker(sol)


def test_cp_als_recovers_exact_cp(rng):
    factors = [_unit_columns(rng, n, 2) for n in (6, 5, 4)]
    G = _cp_tensor(np.array([5.0, 1.0]), factors)
    model = cp_als(G, 2, CpOptions(fit_tol=1e-12, max_sweeps=2000, seed=1, restarts=3))
    assert model.fit >= 1 - 1e-6
    np.testing.assert_allclose(model.weights, [5.0, 1.0], rtol=1e-5)
    for A, B in zip(factors, model.factors):
        assert np.all(_greedy_cosines(A, B) > 1 - 1e-5)


def test_cp_als_rank_one(rng):
    a, b, c = rng.standard_normal(5), rng.standard_normal(4), rng.standard_normal(3)
    G = DenseTensor(np.einsum("i,j,k->ijk", a, b, c))
    model = cp_als(G, 1)
    expected = np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c)
    assert model.weights[0] == pytest.approx(expected, rel=1e-8)
    for v, A in zip((a, b, c), model.factors):
        assert abs(v @ A[:, 0]) / np.linalg.norm(v) == pytest.approx(1.0, abs=1e-8)


def test_cp_als_fit_is_monotone(rng):
    G = DenseTensor(rng.standard_normal((5, 4, 3)))
    model = cp_als(G, 3, CpOptions(max_sweeps=200, fit_tol=0.0))
    fits = np.array(model.fit_history)
    assert np.all(np.diff(fits) >= -1e-10)
    assert np.all(np.diff(model.weights) <= 0)


def test_cp_als_is_seeded(rng):
    G = DenseTensor(rng.standard_normal((4, 4, 3)))
    a = cp_als(G, 2, CpOptions(seed=5))
    b = cp_als(G, 2, CpOptions(seed=5))
    np.testing.assert_array_equal(a.weights, b.weights)


def test_cp_als_warns_on_too_many_components(rng, caplog):
    G = DenseTensor(rng.standard_normal((3, 3, 2)))
    with caplog.at_level(logging.WARNING, logger="tensorcomp.factorize"):
        cp_als(G, 3, CpOptions(max_sweeps=5))
    assert "exceed" in caplog.text


def test_combine_with_identity_factors_is_noop(rng):
    G = DenseTensor(rng.standard_normal((3, 3, 2)))
    cp = cp_als(G, 2, CpOptions(max_sweeps=50))
    tucker = TuckerModel(G, tuple(np.eye(n) for n in G.shape))
    combined = combine_factors(tucker, cp)
    np.testing.assert_allclose(combined.weights, cp.weights, atol=1e-12)
    for A, B in zip(cp.factors, combined.factors):
        np.testing.assert_allclose(A, B, atol=1e-12)


def test_combine_preserves_reconstruction_and_weights(rng):
    G = DenseTensor(rng.standard_normal((3, 4, 2)))
    cp = cp_als(G, 2, CpOptions(max_sweeps=50))
    Us = tuple(haar_orthonormal(n, r, rng) for n, r in zip((7, 6, 5), G.shape))
    tucker = TuckerModel(G, Us)
    combined = combine_factors(tucker, cp)
    chained = reconstruct(cp)
    for k, U in enumerate(Us):
        chained = mode_product(chained, U, k)
    np.testing.assert_allclose(reconstruct(combined).data, chained.data, atol=1e-10)
    np.testing.assert_allclose(combined.weights, cp.weights, atol=1e-10)
    with pytest.raises(ShapeError):
        combine_factors(TuckerModel(DenseTensor(np.ones((2, 2, 2))), tuple(np.eye(2) for _ in range(3))), cp)


def test_reconstruct_examples(rng):
    G = DenseTensor(rng.standard_normal((2, 3, 2)))
    np.testing.assert_allclose(reconstruct(TuckerModel(G, tuple(np.eye(n) for n in G.shape))).data, G.data)
    empty = CpModel(np.zeros(2), tuple(_unit_columns(rng, n, 2) for n in (3, 3, 2)))
    assert np.count_nonzero(reconstruct(empty).data) == 0
    with pytest.raises(TypeError):
        reconstruct(G)


def test_cp_to_tucker_reconstructs(rng):
    factors = tuple(_unit_columns(rng, n, 3) for n in (5, 4, 6))
    cp = CpModel(np.array([3.0, 2.0, 0.5]), factors)
    tucker = cp_to_tucker(cp)
    np.testing.assert_allclose(reconstruct(tucker).data, reconstruct(cp).data, atol=1e-8)


def test_model_validation(rng):
    A = _unit_columns(rng, 3, 2)
    with pytest.raises(ValueError):
        CpModel(np.array([1.0, 2.0]), (A, A))
    with pytest.raises(ValueError):
        CpModel(np.array([2.0, 1.0]), (2 * A, A))
    with pytest.raises(ValueError):
        TuckerModel(DenseTensor(np.ones((2, 2))), (np.ones((3, 2)), np.eye(2)))


def _factor_recovery(n_components, restarts):
    rng = np.random.default_rng(21)
    shape = (15, 15, 15)
    factors = [_unit_columns(rng, n, 3) for n in shape]
    X = _cp_tensor(np.array([30.0, 20.0, 10.0]), factors)
    obs = sample_observations(X, 0.5, seed=22)
    sol = solve_constraint(obs, shape, SolverConfig(tol=1e-4, max_iter=5000))
    opts = CpOptions(max_sweeps=2000, fit_tol=1e-10, seed=23, restarts=restarts)
    tucker, core_cp, full_cp = interpret(sol, n_components, 0.01, opts)
    assert tucker.ranks == (3, 3, 3)
    assert full_cp.shape == shape and full_cp.n_components == n_components
    for A, B in zip(factors, full_cp.factors):
        assert np.all(_greedy_cosines(A, B) >= 0.95)


def test_factor_recovery_from_partial_observations():
    _factor_recovery(3, restarts=5)


@pytest.mark.slow
def test_factor_recovery_with_extra_component():
    _factor_recovery(4, restarts=10)
