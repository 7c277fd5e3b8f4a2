import math
from dataclasses import replace

import numpy as np
import pytest

from app.core.errors import AssumptionViolation, DimensionMismatch, DomainError
from app.services.comm_graph import GraphDistribution
from app.services.mdp import exact_global_solution, value_function
from app.services.oracle import deterministic_primal_dual, dense_kkt_matrix
from app.services.presets import gridworld
from app.services.saddle import (
    BoxConstraints,
    BoxSettings,
    StackedIterate,
    auxiliary_constraint_residual,
    build_saddle_problem,
    complexity_requirements,
    error_rescaling,
    exact_gradients,
    gap_proxy,
    in_saddle_set,
    kkt_point,
    lagrangian_value,
    mu_solution_residual,
    perturbed_saddle_point,
    project_boxes,
    saddle_gap,
    saddle_point,
    sample_complexity,
    solution_bounds,
)


def _max_abs(it: StackedIterate) -> float:
    return max(float(np.max(np.abs(x))) for x in it)


def _check_certificate(problem):
    point = kkt_point(problem)
    assert _max_abs(exact_gradients(problem, point)) <= 1e-8
    assert np.all(point.v == 0.0)
    assert mu_solution_residual(problem, point) <= 1e-8
    assert auxiliary_constraint_residual(problem, point) <= 1e-8
    w_star = exact_global_solution(problem.mats, problem.model)
    np.testing.assert_allclose(point.w, np.tile(w_star, (problem.num_agents, 1)), atol=1e-10)
    np.testing.assert_allclose(point.theta.sum(axis=0), 0.0, atol=1e-8)


def test_kkt_certificate_chain4(chain4_problem):
    _check_certificate(chain4_problem)


def test_kkt_certificate_toy(toy_problem):
    _check_certificate(toy_problem)


def test_kkt_certificate_single_agent(single_problem):
    _check_certificate(single_problem)
    np.testing.assert_allclose(kkt_point(single_problem).theta, 0.0, atol=1e-12)


def test_kkt_certificate_gridworld():
    s = gridworld()
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0)
    _check_certificate(problem)
    # Tabular features: the consensus estimate is the exact value function
    np.testing.assert_allclose(kkt_point(problem).w[0], value_function(s.model), rtol=1e-8)


def test_kkt_point_is_cached(chain4_problem):
    assert kkt_point(chain4_problem) is kkt_point(chain4_problem)
    assert saddle_point(chain4_problem) is kkt_point(chain4_problem)


def test_kkt_point_for_other_rewards(chain4_problem, chain4_scenario):
    rewards = np.zeros_like(chain4_scenario.model.agent_rewards)
    rewards[2, 0] = 20.0
    model = chain4_scenario.model.with_rewards(rewards)
    point = kkt_point(chain4_problem, model)
    assert _max_abs(exact_gradients(chain4_problem, point, rewards)) <= 1e-8
    assert point is not kkt_point(chain4_problem)


def test_kkt_point_rejects_regularized_problem(chain4_scenario):
    s = chain4_scenario
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0, rho=0.1)
    with pytest.raises(DomainError):
        kkt_point(problem)


def test_perturbed_saddle_point_is_stationary(chain4_scenario):
    s = chain4_scenario
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0, rho=0.1)
    point = perturbed_saddle_point(problem)
    assert _max_abs(exact_gradients(problem, point)) <= 1e-8
    assert saddle_point(problem) is point


def test_perturbed_point_approaches_kkt_point(chain4_problem, chain4_scenario):
    s = chain4_scenario
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0, rho=1e-7)
    w_star = kkt_point(chain4_problem).w
    perturbed = perturbed_saddle_point(problem).w
    assert np.max(np.abs(perturbed - w_star)) <= 1e-3 * (1 + np.max(np.abs(w_star)))


def test_perturbed_point_requires_rho(chain4_problem):
    with pytest.raises(DomainError):
        perturbed_saddle_point(chain4_problem)


def test_negative_weights_are_rejected(chain4_scenario):
    s = chain4_scenario
    with pytest.raises(DomainError):
        build_saddle_problem(s.model, s.features, s.graph, kappa=-1.0)


def test_agent_count_must_match(chain4_scenario):
    s = chain4_scenario
    with pytest.raises(DimensionMismatch):
        build_saddle_problem(s.model, s.features, GraphDistribution(3, ((0, 1), (1, 2)), np.ones(2)))


def test_lagrangian_is_saddle_shaped(chain4_problem):
    point = kkt_point(chain4_problem)
    rng = np.random.default_rng(11)
    center = lagrangian_value(chain4_problem, point)
    for _ in range(10):
        shift = rng.standard_normal(point.theta.shape)
        assert lagrangian_value(chain4_problem, replace(point, theta=point.theta + shift)) >= center - 1e-9
        assert lagrangian_value(chain4_problem, replace(point, v=point.v + shift)) >= center - 1e-9
        assert lagrangian_value(chain4_problem, replace(point, w=point.w + shift)) <= center + 1e-9


def test_bounds_dominate_saddle_chain4(chain4_problem):
    bounds = solution_bounds(chain4_problem)
    point = kkt_point(chain4_problem)
    for bound, actual in zip((bounds.theta, bounds.v, bounds.mu, bounds.w), point.max_abs()):
        assert actual <= bound


def test_bounds_dominate_saddle_random_instances(random_instances):
    for model, features, graph in random_instances:
        problem = build_saddle_problem(model, features, graph, kappa=1.0)
        bounds = solution_bounds(problem)
        point = kkt_point(problem)
        for bound, actual in zip((bounds.theta, bounds.v, bounds.mu, bounds.w), point.max_abs()):
            assert actual <= bound
        assert problem.boxes.audited


def test_box_radii_from_bounds(chain4_problem):
    bounds = solution_bounds(chain4_problem)
    boxes = chain4_problem.boxes
    assert boxes.radius_w == pytest.approx(2 * bounds.w + 1)
    assert boxes.radius_theta == pytest.approx(2 * bounds.theta + 1)
    assert boxes.audited


def test_box_audit_failure(chain4_scenario):
    s = chain4_scenario
    with pytest.raises(AssumptionViolation, match="w: radius"):
        build_saddle_problem(s.model, s.features, s.graph, settings=BoxSettings(radius_w=1e-3))
    relaxed = build_saddle_problem(
        s.model, s.features, s.graph, settings=BoxSettings(radius_w=1e-3, enforce_audit=False)
    )
    assert not relaxed.boxes.audited


def test_box_radii_must_be_positive():
    with pytest.raises(ValueError):
        BoxConstraints(1.0, 0.0, 1.0, 1.0)


def test_projection_idempotent_and_nonexpansive():
    boxes = BoxConstraints(1.0, 2.0, 0.5, 3.0)
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = StackedIterate(*(5 * rng.standard_normal((3, 2)) for _ in range(4)))
        b = StackedIterate(*(5 * rng.standard_normal((3, 2)) for _ in range(4)))
        pa, pb = project_boxes(boxes, a), project_boxes(boxes, b)
        for x, y in zip(project_boxes(boxes, pa), pa):
            np.testing.assert_array_equal(x, y)
        dist = math.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(a, b)))
        projected = math.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(pa, pb)))
        assert projected <= dist + 1e-12
        assert boxes.contains(pa)


def test_saddle_gap_vanishes_at_saddle(toy_problem, chain4_problem):
    for problem in (toy_problem, chain4_problem):
        point = kkt_point(problem)
        assert saddle_gap(problem, point) <= 1e-8
        assert in_saddle_set(problem, point, 1e-6)
        assert gap_proxy(problem, point) == pytest.approx(0.0, abs=1e-9)


def test_gap_proxy_bounds_saddle_gap_from_below(toy_problem):
    point = kkt_point(toy_problem)
    rng = np.random.default_rng(8)
    for _ in range(10):
        candidate = project_boxes(
            toy_problem.boxes, StackedIterate(*(x + rng.standard_normal(x.shape) for x in point))
        )
        proxy = gap_proxy(toy_problem, candidate)
        assert proxy >= -1e-9
        assert proxy <= saddle_gap(toy_problem, candidate) + 1e-6


def test_saddle_gap_rejects_points_outside_boxes(toy_problem):
    point = kkt_point(toy_problem)
    outside = replace(point, w=point.w + 10 * toy_problem.boxes.radius_w)
    with pytest.raises(DomainError):
        saddle_gap(toy_problem, outside)


def _independent_omegas(epsilon, delta, alpha0, c):
    omega_1 = 8 * c ** 2 / epsilon ** 2 * ((alpha0 + 2) ** 2 * c ** 2 + (alpha0 + 4) * epsilon / 6) * math.log(1 / delta)
    omega_2 = 4 * c ** 4 * (2 / alpha0 + alpha0) ** 2 / epsilon ** 2
    return omega_1, omega_2


def test_sample_complexity_matches_formulas():
    rng = np.random.default_rng(12)
    for _ in range(100):
        epsilon = float(10 ** rng.uniform(-3, 1))
        delta = float(rng.uniform(0.001, 0.999))
        alpha0 = float(10 ** rng.uniform(-2, 2))
        c = float(10 ** rng.uniform(-1, 2))
        estimate = sample_complexity(epsilon, delta, alpha0, c)
        omega_1, omega_2 = _independent_omegas(epsilon, delta, alpha0, c)
        assert estimate.omega_1 == pytest.approx(omega_1, rel=1e-12)
        assert estimate.omega_2 == pytest.approx(omega_2, rel=1e-12)
        assert estimate.t_required == math.ceil(max(estimate.omega_1, estimate.omega_2))


def test_omega_2_scales_with_inverse_square_epsilon():
    base = sample_complexity(0.2, 0.1, 10.0, 5.0)
    halved = sample_complexity(0.1, 0.1, 10.0, 5.0)
    assert halved.omega_2 == pytest.approx(4 * base.omega_2, rel=1e-12)


@pytest.mark.parametrize(
    "epsilon, delta, alpha0, c",
    [(0.0, 0.1, 1.0, 1.0), (0.1, 0.0, 1.0, 1.0), (0.1, 1.0, 1.0, 1.0), (0.1, 0.1, 0.0, 1.0), (0.1, 0.1, 1.0, -1.0)],
)
def test_sample_complexity_domain(epsilon, delta, alpha0, c):
    with pytest.raises(DomainError):
        sample_complexity(epsilon, delta, alpha0, c)


def test_complexity_requirements(chain4_problem, single_problem):
    requirements = complexity_requirements(0.1, 0.1, 10.0, 50.0, chain4_problem)
    assert requirements["saddle"] == sample_complexity(0.1, 0.1, 10.0, 50.0)
    assert requirements["consensus"] == sample_complexity(0.05, 0.1, 10.0, 50.0)
    scale = error_rescaling(chain4_problem)
    assert requirements["error"] == sample_complexity(scale * 0.1, 0.1, 10.0, 50.0)

    assert complexity_requirements(0.1, 0.1, 10.0, 50.0, single_problem)["consensus"] is None
    assert complexity_requirements(0.1, 0.1, 10.0, 50.0)["error"] is None


def test_error_rescaling(chain4_problem):
    eig = np.linalg.eigvalsh(chain4_problem.mats.gram)
    expected = min(eig[0] ** 2, 1.0) / (2 * math.sqrt(eig[-1] ** 2 + 1.0))
    assert error_rescaling(chain4_problem) == pytest.approx(expected)
    assert 0 < error_rescaling(chain4_problem) < 0.5


def test_error_rescaling_denominator_counts_the_v_block(chain4_problem):
    # lambda_max(C) < 1 on the chain, where clamping at 1 would drop the v block
    eig = np.linalg.eigvalsh(chain4_problem.mats.gram)
    assert eig[-1] < 1.0
    assert error_rescaling(chain4_problem) == pytest.approx(min(eig[0] ** 2, 1.0) / (2 * math.sqrt(eig[-1] ** 2 + 1.0)))
    assert error_rescaling(chain4_problem) < min(eig[0] ** 2, 1.0) / 2


def _numeric_hessian(problem, point):
    # Exact for a quadratic: second differences with unit steps
    n = problem.num_agents
    z = np.concatenate(point.flat())

    def value(x):
        return lagrangian_value(problem, StackedIterate.from_flat(*np.split(x, 4), num_agents=n))

    eye = np.eye(z.size)
    base = value(z)
    single = np.array([value(z + e) for e in eye])
    hess = np.empty((z.size, z.size))
    for i in range(z.size):
        for j in range(i, z.size):
            hess[i, j] = hess[j, i] = value(z + eye[i] + eye[j]) - single[i] - single[j] + base
    return hess


@pytest.mark.parametrize("fixture", ["toy_problem", "chain4_problem"])
def test_lagrangian_is_convex_concave(fixture, request):
    problem = request.getfixturevalue(fixture)
    size = problem.num_agents * problem.q
    hess = _numeric_hessian(problem, kkt_point(problem))
    np.testing.assert_allclose(hess, dense_kkt_matrix(problem), atol=1e-6)
    assert np.linalg.eigvalsh(hess[: 3 * size, : 3 * size])[0] >= -1e-8
    assert np.linalg.eigvalsh(hess[3 * size:, 3 * size:])[-1] <= 1e-8


def test_regularized_lagrangian_is_strongly_convex_concave(chain4_scenario):
    s = chain4_scenario
    rho = 0.3
    problem = build_saddle_problem(s.model, s.features, s.graph, kappa=1.0, rho=rho)
    size = problem.num_agents * problem.q
    hess = _numeric_hessian(problem, StackedIterate.zeros(problem.num_agents, problem.q))
    mu_block = hess[2 * size: 3 * size, 2 * size: 3 * size]
    np.testing.assert_allclose(np.linalg.eigvalsh(mu_block), rho, atol=1e-8)
    primal = np.linalg.eigvalsh(hess[: 3 * size, : 3 * size])
    assert primal[0] >= min(rho, float(np.linalg.eigvalsh(problem.mats.gram)[0]), 1.0) - 1e-8
    assert np.linalg.eigvalsh(hess[3 * size:, 3 * size:])[-1] <= -rho + 1e-8


def test_primal_dual_converges_to_the_same_point_from_any_start(toy_problem):
    point = kkt_point(toy_problem)
    lap = toy_problem.laplacian.laplacian
    rng = np.random.default_rng(30)
    for _ in range(4):
        start = project_boxes(
            toy_problem.boxes, StackedIterate(*(5.0 * rng.standard_normal(x.shape) for x in point))
        )
        final = deterministic_primal_dual(toy_problem, initial=start).final
        np.testing.assert_allclose(final.theta, point.theta, atol=1e-5)
        np.testing.assert_allclose(final.v, point.v, atol=1e-5)
        np.testing.assert_allclose(final.w, point.w, atol=1e-5)
        np.testing.assert_allclose(lap @ final.mu, lap @ point.mu, atol=1e-5)


def _random_candidates(problem, rng, count):
    radii = problem.boxes.radii()
    shape = (problem.num_agents, problem.q)
    for _ in range(count):
        yield StackedIterate(*(rng.uniform(-r, r, size=shape) for r in radii))


def test_saddle_gap_dominates_proxy_and_consensus_penalty(chain4_problem):
    rng = np.random.default_rng(50)
    lap = chain4_problem.laplacian.laplacian
    for candidate in _random_candidates(chain4_problem, rng, 50):
        proxy = gap_proxy(chain4_problem, candidate)
        gap = saddle_gap(chain4_problem, candidate)
        slack = 1e-6 * max(1.0, abs(gap))
        assert proxy <= gap + slack
        penalty = 0.5 * chain4_problem.kappa * float(np.sum(candidate.w * (lap @ candidate.w)))
        assert penalty <= proxy + slack
        assert penalty <= gap + slack
