import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import (
    dense_least_squares,
    group_lasso_fista,
    group_lasso_objective,
    group_soft_threshold,
    orthogonal_design,
)
from fungraph import _admm_kernel as kern
from fungraph.errors import DimensionError, NumericalFailure, ValidationError
from fungraph.grouplasso import (
    AdmmConfig,
    AdmmState,
    GroupLassoProblem,
    RankDeficientWarning,
    _raise_for_status,
    admm_iterate,
    kkt_violation,
    lambda_max,
    objective,
    restricted_least_squares,
    solve_admm,
    solve_path,
    update_rho,
)

TIGHT = AdmmConfig(eps_abs=1e-10, eps_rel=1e-10, max_iter=100_000)


def random_problem(rng, n=None, K=None, M=None, signal=1.0):
    n = n or int(rng.integers(5, 31))
    K = K or int(rng.integers(1, 6))
    M = M or int(rng.integers(1, 4))
    x = rng.standard_normal((K, n, M))
    y = rng.standard_normal((n, M)) + signal * x[0] @ rng.standard_normal((M, M))
    return GroupLassoProblem(y, x)


# --- problem and lambda_max --------------------------------------------------


def test_problem_validation():
    with pytest.raises(DimensionError):
        GroupLassoProblem(np.zeros((4, 2)), np.zeros((1, 5, 2)))
    with pytest.raises(ValidationError):
        GroupLassoProblem(np.zeros((4, 2)), np.zeros((1, 4, 2)), lam=-1.0)
    with pytest.raises(ValidationError):
        GroupLassoProblem(np.full((4, 2), np.nan), np.zeros((1, 4, 2)))
    with pytest.raises(ValidationError):
        AdmmConfig(eps_abs=0.0)


def test_lambda_max_zero_response(rng):
    assert lambda_max(GroupLassoProblem(np.zeros((6, 2)), rng.standard_normal((3, 6, 2)))) == 0.0


def test_lambda_max_single_entry():
    assert lambda_max(GroupLassoProblem([[3.0]], [[[2.0]]])) == 6.0


def test_lambda_max_certificate():
    rng = np.random.default_rng(7)
    pr = random_problem(rng, n=20, K=4, M=3)
    lm = lambda_max(pr)
    above = solve_admm(pr.with_lambda(1.01 * lm))
    assert np.all(above.b_hat == 0.0)
    below = solve_admm(pr.with_lambda(0.5 * lm))
    assert len(below.support()) >= 1


# --- objective and KKT --------------------------------------------------------


def test_objective_null_model(rng):
    pr = random_problem(rng).with_lambda(0.3)
    zero = np.zeros((pr.K, pr.M, pr.M))
    assert objective(pr, zero) == pytest.approx(0.5 * np.sum(pr.y ** 2) / pr.n)


def test_objective_exact_fit(rng):
    x = rng.standard_normal((2, 10, 3))
    B = rng.standard_normal((2, 3, 3))
    pr = GroupLassoProblem(x[0] @ B[0] + x[1] @ B[1], x)
    assert objective(pr, B) == pytest.approx(0.0, abs=1e-24)


def test_objective_matches_oracle(rng):
    pr = random_problem(rng).with_lambda(0.2)
    B = rng.standard_normal((pr.K, pr.M, pr.M))
    assert objective(pr, B) == pytest.approx(group_lasso_objective(pr.y, pr.x, 0.2, B), rel=1e-12)


def test_objective_shape_check(rng):
    pr = random_problem(rng, K=2, M=2)
    with pytest.raises(DimensionError):
        objective(pr, np.zeros((3, 2, 2)))


# --- solver -------------------------------------------------------------------


def test_exact_least_squares_scalar():
    pr = GroupLassoProblem([[1.0], [1.0]], [[[1.0], [1.0]]], 0.0)
    sol = solve_admm(pr, TIGHT)
    assert sol.converged
    assert sol.b_hat[0, 0, 0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_orthogonal_design_soft_threshold(seed):
    rng = np.random.default_rng(seed)
    n, K, M = 40, 4, 3
    x = orthogonal_design(n, K, M, rng)
    y = rng.standard_normal((n, M)) * 2
    pr = GroupLassoProblem(y, x)
    Z = np.einsum("kim,il->kml", x, y) / n
    lam = float(rng.uniform(0.2, 0.9)) * lambda_max(pr)
    sol = solve_admm(pr.with_lambda(lam), TIGHT)
    assert sol.converged
    assert np.max(np.abs(sol.b_hat - group_soft_threshold(Z, lam))) < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_matches_proximal_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    pr = random_problem(rng)
    lam = float(rng.uniform(0.05, 0.95)) * lambda_max(pr)
    pr = pr.with_lambda(lam)
    sol = solve_admm(pr, TIGHT)
    ref = group_lasso_fista(pr.y, pr.x, lam)
    ref_obj = group_lasso_objective(pr.y, pr.x, lam, ref)
    assert sol.objective <= ref_obj + 1e-6
    assert abs(sol.objective - ref_obj) <= 1e-6
    assert np.max(kkt_violation(pr, sol.b_hat)) <= 1e-4 * max(1.0, lam)
    ref_norms = np.sqrt(np.sum(ref ** 2, axis=(1, 2)))
    margin = np.abs(ref_norms)
    if np.all((margin > 1e-6) | (margin == 0)):
        assert sol.support() == frozenset(np.flatnonzero(ref_norms > 0).tolist())


def test_default_config_objective_close(rng):
    pr = random_problem(rng, n=30, K=5, M=3)
    pr = pr.with_lambda(0.3 * lambda_max(pr))
    sol = solve_admm(pr)
    ref = group_lasso_fista(pr.y, pr.x, pr.lam)
    assert sol.converged
    assert sol.objective - group_lasso_objective(pr.y, pr.x, pr.lam, ref) < 1e-3


def test_lambda_zero_is_least_squares(rng):
    pr = random_problem(rng, n=25, K=1, M=3)
    sol = solve_admm(pr, TIGHT)
    ls = dense_least_squares(pr.y, pr.x, [0])
    assert np.max(np.abs(sol.b_hat - ls)) < 1e-6


def test_group_permutation(rng):
    pr = random_problem(rng, n=30, K=5, M=3)
    pr = pr.with_lambda(0.3 * lambda_max(pr))
    perm = [3, 0, 4, 2, 1]
    a = solve_admm(pr)
    b = solve_admm(GroupLassoProblem(pr.y, pr.x[perm], pr.lam))
    # same iterate sequence up to the summation order of the group average
    assert a.iterations == b.iterations
    assert np.max(np.abs(a.b_hat[perm] - b.b_hat)) < 1e-12


def test_deterministic(rng):
    pr = random_problem(rng, n=30, K=5, M=3)
    pr = pr.with_lambda(0.2 * lambda_max(pr))
    a = solve_admm(pr, record_trace=True)
    b = solve_admm(pr, record_trace=True)
    assert a.b_hat.tobytes() == b.b_hat.tobytes()
    assert a.residual_trace.tobytes() == b.residual_trace.tobytes()


def test_final_objective_near_running_minimum():
    rng = np.random.default_rng(3)
    pr = random_problem(rng, n=20, K=3, M=2)
    pr = pr.with_lambda(0.4 * lambda_max(pr))
    final = solve_admm(pr, TIGHT)
    objs = [
        solve_admm(pr, AdmmConfig(eps_abs=1e-10, eps_rel=1e-10, max_iter=h)).objective
        for h in range(1, final.iterations + 1)
    ]
    assert objs[-1] == final.objective
    assert final.objective - min(objs) <= 1e-8


def test_max_iter_reports_unconverged(rng):
    pr = random_problem(rng, n=30, K=5, M=3)
    pr = pr.with_lambda(0.1 * lambda_max(pr))
    sol = solve_admm(pr, AdmmConfig(max_iter=2))
    assert not sol.converged and sol.iterations == 2
    assert sol.final_primal_residual >= 0 and sol.final_dual_residual >= 0


def test_warm_start_shape_check(rng):
    a = random_problem(rng, n=10, K=2, M=2)
    b = random_problem(rng, n=10, K=3, M=2)
    with pytest.raises(DimensionError):
        solve_admm(b, warm_start=solve_admm(a).state)


def test_path_supports_and_warm_start_agree(rng):
    pr = random_problem(rng, n=30, K=5, M=3)
    lams = np.geomspace(1, 0.05, 8) * lambda_max(pr)
    path = solve_path(pr, lams, TIGHT)
    assert len(path[0].support()) == 0
    for lam, sol in zip(lams, path):
        cold = solve_admm(pr.with_lambda(lam), TIGHT)
        assert abs(sol.objective - cold.objective) < 1e-8


def test_diagnostics_json(rng):
    pr = random_problem(rng, K=2)
    d = solve_admm(pr.with_lambda(0.5 * lambda_max(pr)), record_trace=True).diagnostics()
    assert {"iterations", "converged", "objective", "block_norms", "residual_trace"} <= set(d)


# --- single iterations ------------------------------------------------------


def _kkt_state(rng, rho=1.0):
    n, K, M = 30, 3, 2
    x = orthogonal_design(n, K, M, rng)
    y = rng.standard_normal((n, M))
    pr = GroupLassoProblem(y, x)
    lam = 0.5 * lambda_max(pr)
    pr = pr.with_lambda(lam)
    B = group_soft_threshold(np.einsum("kim,il->kml", x, y) / n, lam)
    state = AdmmState.initial(pr, AdmmConfig(rho0=rho))
    avg = pr.fitted(B) / K
    state.p_blocks[:] = B
    state.q_bar[:] = avg
    state.u[:] = (K * avg - y) / (rho * n)
    return pr, B, state


@pytest.mark.parametrize("rho", [0.5, 1.0, 4.0])
def test_iterate_from_kkt_point_stays(rho):
    pr, B, state = _kkt_state(np.random.default_rng(11), rho)
    new, primal, dual = admm_iterate(state, pr)
    assert primal < 1e-8 and dual < 1e-8
    assert np.max(np.abs(new.p_blocks - B)) < 1e-8
    assert np.any(np.all(B == 0, axis=(1, 2))) and np.any(np.any(B != 0, axis=(1, 2)))


def test_iterate_zero_block_when_below_threshold(rng):
    pr = random_problem(rng, n=20, K=3, M=2)
    pr = pr.with_lambda(1.5 * lambda_max(pr))
    state = AdmmState.initial(pr)
    state.p_blocks[:] = rng.standard_normal(state.p_blocks.shape)
    new, *_ = admm_iterate(state, pr)
    # from the cold-start dual, V_k = A_k P_k - avg + A^Y / (rho n); with P set
    # arbitrarily only zero blocks can be asserted where the test applies
    V = pr.x @ state.p_blocks - pr.fitted(state.p_blocks) / pr.K + state.q_bar - state.u
    for k in range(pr.K):
        if np.linalg.norm(pr.x[k].T @ V[k]) <= pr.lam / state.rho:
            assert np.all(new.p_blocks[k] == 0.0)
    assert state.p_blocks is not new.p_blocks


def test_cached_eigendecomposition(rng):
    pr = random_problem(rng, n=20, K=3, M=3)
    s = AdmmState.initial(pr)
    for k in range(pr.K):
        recon = s.eig_vecs[k] @ np.diag(s.eig_vals[k]) @ s.eig_vecs[k].T
        G = pr.x[k].T @ pr.x[k]
        assert np.max(np.abs(recon - G)) <= 1e-8 * np.max(np.abs(G))


@pytest.mark.parametrize("primal, dual, expected", [(10, 0.5, 2.0), (0.5, 10, 0.5), (1, 1, 1.0)])
def test_update_rho(primal, dual, expected):
    assert update_rho(1.0, primal, dual) == expected


def test_update_rho_rejects_nonpositive():
    with pytest.raises(ValidationError):
        update_rho(0.0, 1.0, 1.0)


def test_status_codes_raise():
    _raise_for_status(kern.STATUS_OK, "x")
    _raise_for_status(kern.STATUS_MAXITER, "x")
    with pytest.raises(NumericalFailure):
        _raise_for_status(kern.STATUS_NAN, "x")
    with pytest.raises(NumericalFailure, match="bracket"):
        _raise_for_status(kern.STATUS_BRACKET, "x")


def test_rank_deficient_group_solves(rng):
    x = rng.standard_normal((2, 20, 3))
    x[1, :, 2] = x[1, :, 0]
    pr = GroupLassoProblem(rng.standard_normal((20, 3)) + x[1] @ np.ones((3, 3)), x)
    pr = pr.with_lambda(0.2 * lambda_max(pr))
    sol = solve_admm(pr, TIGHT)
    ref = group_lasso_fista(pr.y, pr.x, pr.lam)
    assert abs(sol.objective - group_lasso_objective(pr.y, pr.x, pr.lam, ref)) < 1e-6


# --- restricted least squares -------------------------------------------------


def test_restricted_empty_support(rng):
    pr = random_problem(rng)
    B = restricted_least_squares(pr, [])
    assert np.all(B == 0)
    assert np.array_equal(pr.y - pr.fitted(B), pr.y)


def test_restricted_full_support_matches_normal_equations(rng):
    pr = random_problem(rng, n=30, K=3, M=3)
    B = restricted_least_squares(pr, range(3))
    assert np.max(np.abs(B - dense_least_squares(pr.y, pr.x, [0, 1, 2]))) < 1e-8


def test_restricted_orthonormal_single_group(rng):
    n = 25
    x = orthogonal_design(n, 3, 2, rng)
    pr = GroupLassoProblem(rng.standard_normal((n, 2)), x)
    B = restricted_least_squares(pr, {1})
    assert np.allclose(B[1], x[1].T @ pr.y / n, atol=1e-12)
    assert np.all(B[[0, 2]] == 0)


def test_restricted_rank_deficient_warns(rng):
    pr = random_problem(rng, n=4, K=3, M=2)
    with pytest.warns(RankDeficientWarning):
        B = restricted_least_squares(pr, [0, 1, 2])
    assert np.all(np.isfinite(B))


def test_restricted_bad_index(rng):
    pr = random_problem(rng, K=2)
    with pytest.raises(ValidationError):
        restricted_least_squares(pr, [2])


@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_kkt_certificate_property(seed, frac):
    rng = np.random.default_rng(seed)
    pr = random_problem(rng, n=int(rng.integers(5, 20)), K=int(rng.integers(1, 4)), M=int(rng.integers(1, 3)))
    lm = lambda_max(pr)
    pr = pr.with_lambda(frac * lm)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sol = solve_admm(pr, TIGHT)
    assert np.max(kkt_violation(pr, sol.b_hat)) <= 1e-4 * max(1.0, pr.lam)
