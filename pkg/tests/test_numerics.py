import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from habitat.errors import ContractViolation, PreconditionError
from habitat.numerics import ConvexProgram, LinearProgram, check_gradient, solve_convex, solve_lp


def test_lp_single_binding_vertex():
    res = solve_lp(LinearProgram([1, 0], [[1, 1]], [1], sense="max"))
    assert res.optimal
    assert res.value == pytest.approx(1.0)
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-12)


def test_lp_objective_equals_constraint_row():
    res = solve_lp(LinearProgram([2, 1, 0.5], [[1, 1, 1], [2, 1, 0.5]], [1, 1]))
    assert res.optimal
    assert res.value == pytest.approx(1.0, abs=1e-12)


def test_lp_trinomial_vertex_by_hand():
    # vertices of {q >= 0, sum q = 1, 2 q_u + q_m + q_d / 2 = 1}: (1/3, 0, 2/3) and (0, 1, 0)
    res = solve_lp(LinearProgram([1, 0, 0], [[1, 1, 1], [2, 1, 0.5]], [1, 1], sense="max"))
    assert res.optimal
    assert res.value == pytest.approx(1 / 3, abs=1e-12)
    np.testing.assert_allclose(res.x, [1 / 3, 0, 2 / 3], atol=1e-12)


def test_lp_certificates_on_optimal_solve():
    res = solve_lp(LinearProgram([1, 0, 0], [[1, 1, 1], [2, 1, 0.5]], [1, 1], sense="max"))
    assert res.primal_residual <= 1e-9
    assert res.slackness_residual <= 1e-8
    assert res.duality_gap <= 1e-8 * (1 + abs(res.value))


def test_lp_infeasible_carries_farkas_vector():
    A = np.array([[1.0, 1.0, 1.0], [2.0, 1.5, 1.2]])
    b = np.array([1.0, 1.0])
    res = solve_lp(LinearProgram([1, 0, 0], A, b, sense="max"))
    assert res.status == "infeasible"
    y = res.certificate
    assert y is not None
    assert np.all(y @ A <= 1e-9) and y @ b > 0


def test_lp_unbounded():
    assert solve_lp(LinearProgram([1, 0], [[1, -1]], [0], sense="max")).status == "unbounded"


def test_lp_dimension_mismatch():
    with pytest.raises(ContractViolation):
        LinearProgram([1, 0], [[1, 1]], [1, 2])
    with pytest.raises(ContractViolation):
        LinearProgram([1, 0, 0], [[1, 1]], [1])


def test_lp_iteration_cap_reports_status():
    from habitat.config import DEFAULT_OPTIONS

    res = solve_lp(LinearProgram([1, 0, 0], [[1, 1, 1], [2, 1, 0.5]], [1, 1], sense="max"),
                   DEFAULT_OPTIONS.replace(lp_max_iterations=0))
    assert res.status == "max-iterations"
    assert res.x is None


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_lp_strong_duality_random(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 4)), int(rng.integers(3, 7))
    A = rng.uniform(-1, 2, (m, n))
    x0 = rng.uniform(0.1, 1.0, n)  # keeps the program feasible
    b = A @ x0
    c = rng.uniform(0, 2, n)  # nonnegative cost over x >= 0 keeps minimisation bounded
    res = solve_lp(LinearProgram(c, A, b))
    assert res.optimal
    assert res.primal_residual <= 1e-9
    dual_obj = float(res.dual @ b)
    assert abs(res.value - dual_obj) <= 1e-8 * (1 + abs(res.value))
    assert np.all(c - A.T @ res.dual >= -1e-9)


def test_lp_deterministic():
    rng = np.random.default_rng(3)
    A = rng.uniform(-1, 2, (3, 6))
    b = A @ rng.uniform(0.1, 1, 6)
    lp = LinearProgram(rng.uniform(0, 1, 6), A, b)
    first, second = solve_lp(lp), solve_lp(lp)
    assert first.x.tobytes() == second.x.tobytes()


def test_convex_quadratic():
    cp = ConvexProgram(lambda v: (v[0] - 3) ** 2, lambda v: np.array([2 * (v[0] - 3)]), 1,
                       hessian=lambda v: np.array([[2.0]]))
    res = solve_convex(cp, [0.0])
    assert res.optimal
    assert res.x[0] == pytest.approx(3.0, abs=1e-9)


def test_convex_log_symmetry():
    cp = ConvexProgram(lambda v: -np.log(v).sum(), lambda v: -1 / v, 2, hessian=lambda v: np.diag(1 / v ** 2),
                       A_eq=[[1, 1]], b_eq=[1])
    res = solve_convex(cp, [0.2, 0.8])
    assert res.optimal
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-8)


def test_convex_entropy_uniform():
    cp = ConvexProgram(lambda v: (v * np.log(v)).sum(), lambda v: np.log(v) + 1, 4, hessian=lambda v: np.diag(1 / v),
                       A_eq=np.ones((1, 4)), b_eq=[1], G=-np.eye(4), h=np.zeros(4))
    res = solve_convex(cp, [0.1, 0.2, 0.3, 0.4])
    assert res.optimal
    np.testing.assert_allclose(res.x, 0.25, atol=1e-7)
    assert res.kkt_residual <= 1e-7
    # objective along the barrier schedule never increases
    assert all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))


def test_convex_infeasible_start_rejected():
    cp = ConvexProgram(lambda v: v.sum(), lambda v: np.ones(2), 2, G=-np.eye(2), h=np.zeros(2))
    with pytest.raises(PreconditionError):
        solve_convex(cp, [-1.0, 1.0])


def test_convex_iteration_cap_reports_status():
    from habitat.config import DEFAULT_OPTIONS

    # one barrier level from a far start: a single Newton step cannot reach the KKT gate
    cp = ConvexProgram(lambda v: (v * np.log(v)).sum(), lambda v: np.log(v) + 1, 4, hessian=lambda v: np.diag(1 / v),
                       A_eq=np.ones((1, 4)), b_eq=[1], G=-np.eye(4), h=np.zeros(4), mu_start=1e-9, mu_end=1e-9)
    res = solve_convex(cp, [0.001, 0.001, 0.001, 0.997], DEFAULT_OPTIONS.replace(newton_max_iterations=1))
    assert res.status == "max-iterations"
    assert res.x is None


def test_gradient_check_on_random_points():
    rng = np.random.default_rng(0)
    cp = ConvexProgram(lambda v: (v * np.log(v)).sum(), lambda v: np.log(v) + 1, 4)
    assert check_gradient(cp, rng.uniform(0.1, 1.0, (5, 4))) <= 1e-5
