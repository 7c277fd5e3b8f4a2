import numpy as np
import pytest

from app.core.errors import NoConvergence, ProblemTooLarge
from app.services.dgtd import primal_dual_update
from app.services.mdp import exact_global_solution
from app.services.oracle import (
    FALLBACK_STEP,
    OracleTrajectory,
    brute_force_kkt,
    deterministic_primal_dual,
    dense_kkt_matrix,
    finite_difference_gradient,
    lagrangian_gradient_fd,
    run_oracle_suite,
    stable_constant_step,
)
from app.services.presets import gridworld
from app.services.saddle import (
    StackedIterate,
    build_saddle_problem,
    exact_gradients,
    kkt_point,
    lagrangian_value,
    saddle_point,
)


def _triple_agreement(problem):
    w_star = exact_global_solution(problem.mats, problem.model)
    dense = brute_force_kkt(problem)
    oracle = deterministic_primal_dual(problem)
    for estimate in (dense.w, oracle.final.w):
        assert np.max(np.abs(estimate - w_star)) <= 1e-5
    return oracle


def test_triple_agreement_toy(toy_problem):
    oracle = _triple_agreement(toy_problem)
    assert oracle.last_gaps[-1] <= 1e-6
    assert oracle.checkpoints == sorted(oracle.checkpoints)


@pytest.mark.slow
def test_triple_agreement_chain4(chain4_problem):
    _triple_agreement(chain4_problem)


def test_dense_kkt_rank(toy_problem, chain4_problem):
    for problem in (toy_problem, chain4_problem):
        n, q = problem.num_agents, problem.q
        assert np.linalg.matrix_rank(dense_kkt_matrix(problem)) == 4 * n * q - q


def test_dense_kkt_matches_closed_form(chain4_problem):
    dense = brute_force_kkt(chain4_problem)
    closed = kkt_point(chain4_problem)
    np.testing.assert_allclose(dense.theta, closed.theta, atol=1e-8)
    np.testing.assert_allclose(dense.v, closed.v, atol=1e-8)
    np.testing.assert_allclose(dense.w, closed.w, atol=1e-8)
    # mu is determined up to its agent average
    lap = chain4_problem.laplacian.laplacian
    np.testing.assert_allclose(lap @ dense.mu, lap @ closed.mu, atol=1e-8)


def test_dense_kkt_size_guard():
    s = gridworld()
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0)
    with pytest.raises(ProblemTooLarge):
        dense_kkt_matrix(problem)
    assert stable_constant_step(problem) == FALLBACK_STEP


def test_stable_step_is_positive(toy_problem, chain4_problem):
    for problem in (toy_problem, chain4_problem):
        assert 0 < stable_constant_step(problem) < 10


def test_deterministic_iteration_reports_no_convergence(chain4_problem):
    with pytest.raises(NoConvergence):
        deterministic_primal_dual(chain4_problem, max_iterations=4)


def test_finite_differences_of_a_smooth_function():
    def f(x):
        return float(np.sin(x[0]) * np.exp(x[1]) + x[2] ** 3)

    def grad(x):
        return np.array([np.cos(x[0]) * np.exp(x[1]), np.sin(x[0]) * np.exp(x[1]), 3 * x[2] ** 2])

    point = np.array([0.3, -0.2, 1.1])
    np.testing.assert_allclose(finite_difference_gradient(f, point, 1e-6), grad(point), rtol=1e-6)

    partial = finite_difference_gradient(f, point, 1e-6, coordinates=[1])
    assert np.isnan(partial[0]) and np.isnan(partial[2])
    assert partial[1] == pytest.approx(grad(point)[1], rel=1e-6)

    with pytest.raises(ValueError):
        finite_difference_gradient(f, point, 0.0)


@pytest.mark.parametrize("fixture", ["chain4_problem", "toy_problem", "single_problem"])
def test_lagrangian_gradients_match_finite_differences(fixture, request):
    problem = request.getfixturevalue(fixture)
    rng = np.random.default_rng(21)
    for _ in range(20):
        it = StackedIterate(*(rng.standard_normal((problem.num_agents, problem.q)) for _ in range(4)))
        analytic = np.concatenate(exact_gradients(problem, it).flat())
        numeric = np.concatenate(lagrangian_gradient_fd(problem, it, 1e-6).flat())
        scale = max(1.0, float(np.max(np.abs(analytic))))
        assert np.max(np.abs(analytic - numeric)) / scale <= 1e-5


def test_regularized_gradients_match_finite_differences(chain4_scenario):
    s = chain4_scenario
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=0.5, rho=0.2)
    it = StackedIterate(*(np.random.default_rng(2).standard_normal((5, 2)) for _ in range(4)))
    analytic = np.concatenate(exact_gradients(problem, it).flat())
    numeric = np.concatenate(lagrangian_gradient_fd(problem, it, 1e-6).flat())
    np.testing.assert_allclose(numeric, analytic, atol=1e-5 * max(1.0, np.max(np.abs(analytic))))


def test_oracle_suite_toy(toy_problem):
    report = run_oracle_suite(toy_problem, scenario="toy2x2")
    names = {check.name for check in report.checks}
    assert {"kkt_gradients", "kkt_v_zero", "bound_w", "dense_kkt_agreement", "primal_dual_agreement"} <= names
    assert "gap_checkpoints_nonincreasing" in names
    assert report.passed
    as_dict = report.to_dict()
    assert as_dict["passed"] is True
    assert as_dict["scenario"] == "toy2x2"


def test_oracle_suite_without_agreement(chain4_problem):
    report = run_oracle_suite(chain4_problem, scenario="chain4", include_agreement=False)
    assert report.passed
    assert "primal_dual_agreement" not in {check.name for check in report.checks}


def test_oracle_suite_gridworld():
    s = gridworld()
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0)
    report = run_oracle_suite(problem, scenario="gridworld")
    assert report.passed
    assert "dense_kkt_agreement" not in {check.name for check in report.checks}


def test_oracle_suite_regularized(chain4_scenario):
    s = chain4_scenario
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0, rho=0.1)
    report = run_oracle_suite(problem, scenario="chain4-rho")
    assert report.passed
    assert {check.name for check in report.checks} == {"kkt_gradients", "gradient_finite_difference"}


def test_certified_gaps_do_not_increase_after_the_transient(toy_problem):
    oracle = deterministic_primal_dual(toy_problem)
    settled = oracle.settled_gaps()
    assert settled and settled[-1] <= 1e-6
    assert all(b <= a + 1e-10 for a, b in zip(settled, settled[1:]))
    assert oracle.settled_monotone()


@pytest.mark.slow
def test_certified_gaps_do_not_increase_on_the_chain(chain4_problem):
    oracle = deterministic_primal_dual(chain4_problem)
    assert oracle.settled_gaps()[-1] <= 1e-6
    assert oracle.settled_monotone()


def test_settled_gaps_skip_the_transient():
    trajectory = OracleTrajectory(last_gaps=[10.0, 20.0, 0.05, 0.01, 0.02])
    assert trajectory.settled_gaps() == [0.05, 0.01, 0.02]
    assert not trajectory.settled_monotone()
    assert OracleTrajectory(last_gaps=[10.0, 20.0, 5.0]).settled_gaps() == []
    assert OracleTrajectory(last_gaps=[10.0, 0.05, 0.001]).settled_monotone()


@pytest.mark.parametrize("fixture", ["toy_problem", "chain4_problem"])
def test_oracle_started_at_the_saddle_point_stays_there(fixture, request):
    problem = request.getfixturevalue(fixture)
    point = saddle_point(problem)
    step = stable_constant_step(problem)
    state = point
    for _ in range(1000):
        state = primal_dual_update(state, exact_gradients(problem, state), step, problem.boxes)
    for a, b in zip(state, point):
        assert np.max(np.abs(a - b)) <= 1e-9

    oracle = deterministic_primal_dual(problem, initial=point)
    assert oracle.iterations == 1
    for a, b in zip(oracle.final, point):
        assert np.max(np.abs(a - b)) <= 1e-9


def test_halving_the_difference_step_quarters_the_error(chain4_problem):
    # Central differences are exact on the quadratic Lagrangian; the sine term
    # carries the step^2 truncation error.
    n = chain4_problem.num_agents
    rng = np.random.default_rng(8)

    def value(z):
        return lagrangian_value(chain4_problem, StackedIterate.from_flat(*np.split(z, 4), num_agents=n)) + float(
            np.sum(np.sin(z))
        )

    for _ in range(5):
        it = StackedIterate(*(rng.standard_normal((n, 2)) for _ in range(4)))
        z = np.concatenate(it.flat())
        exact = np.concatenate(exact_gradients(chain4_problem, it).flat()) + np.cos(z)
        coarse = np.max(np.abs(finite_difference_gradient(value, z, 1e-2) - exact))
        fine = np.max(np.abs(finite_difference_gradient(value, z, 5e-3) - exact))
        assert 3.5 <= coarse / fine <= 4.5
