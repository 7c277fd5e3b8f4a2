import numpy as np
import pytest

from app.utils.box_qp import quadratic_value, solve_box_qp


def test_separable_problem_is_clipped_minimizer():
    hess = np.diag([2.0, 1.0])
    result = solve_box_qp(lambda x: hess @ x, np.array([10.0, 0.5]), radius=1.0, lipschitz=2.0, x0=np.zeros(2))
    assert result.converged
    np.testing.assert_allclose(result.x, [1.0, 0.5], atol=1e-6)


def test_optimality_conditions_on_random_problems():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.standard_normal((4, 4))
        hess = a @ a.T
        linear = 5 * rng.standard_normal(4)
        result = solve_box_qp(
            lambda x: hess @ x, linear, radius=1.0, lipschitz=float(np.linalg.eigvalsh(hess)[-1]), x0=np.zeros(4),
            tol=1e-10,
        )
        gradient = hess @ result.x - linear
        for xi, gi in zip(result.x, gradient):
            if xi >= 1.0 - 1e-9:
                assert gi <= 1e-6
            elif xi <= -1.0 + 1e-9:
                assert gi >= -1e-6
            else:
                assert abs(gi) <= 1e-6


def test_linear_objective_goes_to_a_vertex():
    result = solve_box_qp(lambda x: np.zeros_like(x), np.array([1.0, -2.0]), radius=3.0, lipschitz=0.0, x0=np.zeros(2))
    np.testing.assert_array_equal(result.x, [3.0, -3.0])
    assert result.value == pytest.approx(-9.0)


def test_never_worse_than_the_start():
    hess = np.diag([1.0, 1.0])
    start = np.array([0.5, 0.5])
    result = solve_box_qp(lambda x: hess @ x, start, radius=1.0, lipschitz=1.0, x0=start, max_iter=1)
    assert result.value <= quadratic_value(lambda x: hess @ x, start, start)
