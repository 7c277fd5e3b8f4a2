"""
Lagrangian saddle-point machinery for distributed GTD.

All stacked quantities are (N, q) arrays whose i-th row is agent i's block, so
the stacked Laplacian (L x I_q) acts as a left product with the N x N mean
Laplacian. The Lagrangian is

    L(theta, v, mu, w) = sum_i 1/2 theta_i^T C theta_i - theta_i^T b_i + 1/2 ||v||^2
                         + <B^T theta - L v - L mu, w> - kappa/2 <w, L w>
                         + rho/2 ||mu||^2 - rho/2 ||w||^2

with C = Phi^T D Phi, b_i = Phi^T D r_i and B = Phi^T D (I - gamma P) Phi.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy import linalg

from app.core import config
from app.core.errors import AssumptionViolation, DimensionMismatch, DomainError
from app.services.comm_graph import (
    LaplacianView,
    RandomGraph,
    StackedLaplacian,
    assert_mean_connectivity,
    laplacian_pseudoinverse,
    mean_laplacian,
    stacked_laplacian,
)
from app.services.mdp import (
    BellmanMatrices,
    FeatureMap,
    MdpModel,
    assemble_bellman,
    check_b_nonsingular,
    d_norm,
    exact_global_solution,
    value_function,
)
from app.utils.box_qp import solve_box_qp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StackedIterate:
    """(theta, v, mu, w), each an (N, q) array of agent blocks"""
    theta: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.theta), np.shape(self.v), np.shape(self.mu), np.shape(self.w)}
        if len(shapes) != 1:
            raise DimensionMismatch(f"stacked iterate blocks disagree in shape: {sorted(shapes)}")
        if len(np.shape(self.theta)) != 2:
            raise DimensionMismatch("stacked iterate blocks must be (N, q) arrays")

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.theta, self.v, self.mu, self.w))

    @property
    def num_agents(self) -> int:
        return self.theta.shape[0]

    @property
    def q(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def zeros(cls, num_agents: int, q: int) -> "StackedIterate":
        return cls(*(np.zeros((num_agents, q)) for _ in range(4)))

    @classmethod
    def from_flat(cls, theta, v, mu, w, num_agents: int) -> "StackedIterate":
        """Build from four length-Nq vectors"""
        return cls(*(np.asarray(x, dtype=float).reshape(num_agents, -1) for x in (theta, v, mu, w)))

    def flat(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return tuple(x.ravel() for x in self)

    def copy(self) -> "StackedIterate":
        return StackedIterate(*(np.array(x, dtype=float) for x in self))

    def max_abs(self) -> Tuple[float, float, float, float]:
        return tuple(float(np.max(np.abs(x))) if x.size else 0.0 for x in self)


@dataclass(frozen=True)
class BoxConstraints:
    radius_theta: float
    radius_v: float
    radius_mu: float
    radius_w: float
    # Set once the radii were checked against the solution bounds and the saddle point
    audited: bool = False

    def __post_init__(self):
        for name, radius in zip(("theta", "v", "mu", "w"), self.radii()):
            if not radius > 0:
                raise ValueError(f"box radius for {name} must be strictly positive, got {radius}")

    def radii(self) -> Tuple[float, float, float, float]:
        return self.radius_theta, self.radius_v, self.radius_mu, self.radius_w

    def contains(self, it: StackedIterate, slack: float = 0.0) -> bool:
        return all(m <= r + slack for m, r in zip(it.max_abs(), self.radii()))


@dataclass(frozen=True)
class BoxSettings:
    """How box radii are derived from the solution bounds"""
    safety_factor: float = 2.0
    margin: float = 1.0
    c_v: Optional[float] = None
    radius_theta: Optional[float] = None
    radius_v: Optional[float] = None
    radius_mu: Optional[float] = None
    radius_w: Optional[float] = None
    enforce_audit: bool = True


@dataclass(frozen=True)
class SolutionBounds:
    w: float
    v: float
    theta: float
    mu: float


@dataclass(frozen=True)
class SaddleProblem:
    mats: BellmanMatrices
    model: MdpModel
    features: FeatureMap
    laplacian: LaplacianView
    mean_laplacian_block: StackedLaplacian
    kappa: float
    rho: float
    boxes: BoxConstraints
    solution_cache: Dict[str, object] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kappa < 0 or self.rho < 0:
            raise DomainError(f"kappa and rho must be nonnegative, got kappa={self.kappa}, rho={self.rho}")

    @property
    def num_agents(self) -> int:
        return self.laplacian.num_agents

    @property
    def q(self) -> int:
        return self.mats.q

    def weighted_rewards(self, rewards: Optional[np.ndarray] = None) -> np.ndarray:
        rewards = self.model.agent_rewards if rewards is None else np.atleast_2d(rewards)
        if rewards.shape != self.model.agent_rewards.shape:
            raise DimensionMismatch(
                f"rewards must have shape {self.model.agent_rewards.shape}, got {rewards.shape}"
            )
        return self.mats.weighted_rewards(rewards)

    def check_iterate(self, it: StackedIterate) -> None:
        if it.theta.shape != (self.num_agents, self.q):
            raise DimensionMismatch(f"iterate blocks must be ({self.num_agents}, {self.q}), got {it.theta.shape}")


def build_saddle_problem(
    model: MdpModel,
    features: FeatureMap,
    dist: RandomGraph,
    kappa: float = 0.0,
    rho: float = 0.0,
    settings: Optional[BoxSettings] = None,
) -> SaddleProblem:
    """
    Assemble the saddle problem and its constraint boxes.

    Raises:
        NotConnected: mean graph disconnected
        SingularB: B is singular
        AssumptionViolation: the boxes miss a saddle component and settings.enforce_audit is set
    """
    settings = settings or BoxSettings()
    if model.num_agents != dist.num_agents:
        raise DimensionMismatch(f"model has {model.num_agents} agents, graph has {dist.num_agents}")
    mats = assemble_bellman(model, features)
    check_b_nonsingular(mats)
    assert_mean_connectivity(dist)
    view = mean_laplacian(dist)

    provisional = BoxConstraints(1.0, 1.0, 1.0, 1.0)
    problem = SaddleProblem(
        mats=mats,
        model=model,
        features=features,
        laplacian=view,
        mean_laplacian_block=stacked_laplacian(view, mats.q),
        kappa=float(kappa),
        rho=float(rho),
        boxes=provisional,
    )
    bounds = solution_bounds(problem, model, features, c_v=settings.c_v)
    boxes = make_boxes(bounds, settings)
    problem = replace(problem, boxes=boxes, solution_cache={})
    boxes = audit_boxes(problem, bounds, enforce=settings.enforce_audit)
    return replace(problem, boxes=boxes)


def _coupling(p: SaddleProblem, it: StackedIterate) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lap = p.laplacian.laplacian
    return lap @ it.v, lap @ it.mu, lap @ it.w


def lagrangian_value(p: SaddleProblem, it: StackedIterate, rewards: Optional[np.ndarray] = None) -> float:
    p.check_iterate(it)
    return lagrangian_from_weighted(p, it, p.weighted_rewards(rewards))


def lagrangian_from_weighted(p: SaddleProblem, it: StackedIterate, b: np.ndarray) -> float:
    """Lagrangian value given the weighted rewards b directly"""
    C, B = p.mats.gram, p.mats.B
    lv, lm, lw = _coupling(p, it)
    psi = 0.5 * np.sum(it.theta * (it.theta @ C)) - np.sum(it.theta * b) + 0.5 * np.sum(it.v * it.v)
    coupling = np.sum((it.theta @ B - lv - lm) * it.w)
    return float(
        psi
        + coupling
        - 0.5 * p.kappa * np.sum(it.w * lw)
        + 0.5 * p.rho * np.sum(it.mu * it.mu)
        - 0.5 * p.rho * np.sum(it.w * it.w)
    )


def exact_gradients(p: SaddleProblem, it: StackedIterate, rewards: Optional[np.ndarray] = None) -> StackedIterate:
    """Analytic (grad_theta, grad_v, grad_mu, grad_w) packed as a StackedIterate"""
    p.check_iterate(it)
    b = p.weighted_rewards(rewards)
    C, B = p.mats.gram, p.mats.B
    lv, lm, lw = _coupling(p, it)
    grad_theta = it.theta @ C - b + it.w @ B.T
    grad_v = it.v - lw
    grad_mu = -lw + p.rho * it.mu
    grad_w = it.theta @ B - lv - lm - p.kappa * lw - p.rho * it.w
    return StackedIterate(grad_theta, grad_v, grad_mu, grad_w)


def kkt_point(p: SaddleProblem, model: Optional[MdpModel] = None, feats: Optional[FeatureMap] = None) -> StackedIterate:
    """
    Closed-form KKT point of the unregularized problem.

    theta_i* = C^{-1}(b_i - b_avg), v* = 0, w_i* = w*, and mu* = L^dagger (rows theta_i*^T B),
    the minimum-norm member of the affine mu-solution set.

    Raises:
        DomainError: rho > 0 (use perturbed_saddle_point)
        NotConnected, SingularB
    """
    if p.rho > 0:
        raise DomainError("kkt_point describes the rho = 0 problem; use perturbed_saddle_point for rho > 0")
    cacheable = model is None or model is p.model
    model = model or p.model
    if cacheable and "kkt" in p.solution_cache:
        return p.solution_cache["kkt"]

    b = p.mats.weighted_rewards(model.agent_rewards)
    w_star = exact_global_solution(p.mats, model)
    theta = linalg.solve(p.mats.gram, (b - b.mean(axis=0)).T, assume_a="pos").T
    mu = laplacian_pseudoinverse(p.laplacian) @ (theta @ p.mats.B)
    n = p.num_agents
    point = StackedIterate(
        theta=theta,
        v=np.zeros((n, p.q)),
        mu=mu,
        w=np.tile(w_star, (n, 1)),
    )
    if cacheable:
        p.solution_cache["kkt"] = point
    return point


def perturbed_saddle_point(p: SaddleProblem) -> StackedIterate:
    """
    Saddle point of the rho-regularized Lagrangian.

    Eliminating theta, v = Lw and mu = Lw / rho leaves, per agent block,
    (B^T C^{-1} B) w_i + [(1 + 1/rho) L^2 w + kappa L w + rho w]_i = B^T C^{-1} b_i,
    which decouples in the eigenbasis of L into N systems of size q.
    """
    if not p.rho > 0:
        raise DomainError("perturbed_saddle_point requires rho > 0")
    if "perturbed" in p.solution_cache:
        return p.solution_cache["perturbed"]

    C, B = p.mats.gram, p.mats.B
    b = p.weighted_rewards()
    c_inv_b = linalg.solve(C, B, assume_a="pos")
    reduced = B.T @ c_inv_b
    rhs = b @ c_inv_b

    eigenvalues, eigenvectors = linalg.eigh(p.laplacian.laplacian)
    rhs_rotated = eigenvectors.T @ rhs
    w_rotated = np.empty_like(rhs_rotated)
    identity = np.eye(p.q)
    for k, lam in enumerate(eigenvalues):
        shift = (1.0 + 1.0 / p.rho) * lam * lam + p.kappa * lam + p.rho
        w_rotated[k] = linalg.solve(reduced + shift * identity, rhs_rotated[k], assume_a="sym")
    w = eigenvectors @ w_rotated

    lw = p.laplacian.laplacian @ w
    theta = linalg.solve(C, (b - w @ B.T).T, assume_a="pos").T
    point = StackedIterate(theta=theta, v=lw, mu=lw / p.rho, w=w)
    p.solution_cache["perturbed"] = point
    return point


def saddle_point(p: SaddleProblem) -> StackedIterate:
    return perturbed_saddle_point(p) if p.rho > 0 else kkt_point(p)


def mu_solution_residual(p: SaddleProblem, it: StackedIterate) -> float:
    """||L mu - (rows theta_i^T B)||_inf, membership of mu in the affine solution set"""
    return float(np.max(np.abs(p.laplacian.laplacian @ it.mu - it.theta @ p.mats.B)))


def auxiliary_constraint_residual(p: SaddleProblem, it: StackedIterate, rewards: Optional[np.ndarray] = None) -> float:
    """
    Reconstruct the eliminated variables eps = C theta, h = v and return the
    sup-norm residual of B w + eps - b = 0, L w - h = 0, L w = 0.
    """
    b = p.weighted_rewards(rewards)
    eps = it.theta @ p.mats.gram
    h = it.v
    lw = p.laplacian.laplacian @ it.w
    residuals = (it.w @ p.mats.B.T + eps - b, lw - h, lw)
    return float(max(np.max(np.abs(r)) for r in residuals))


def solution_bounds(
    p: SaddleProblem,
    model: Optional[MdpModel] = None,
    feats: Optional[FeatureMap] = None,
    c_v: Optional[float] = None,
) -> SolutionBounds:
    """
    Sup-norm bounds on the saddle components.

    Uses sigma, xi, |S|, N, lambda_min(Phi^T Phi), ||Pi J - J||_D, ||L^dagger||_inf and
    ||Phi||_inf. The v bound is c_v, defaulting to the theta bound.
    """
    model = model or p.model
    feats = feats or p.features
    phi = feats.phi
    n_states = model.num_states
    n_agents = p.num_agents
    sigma = model.sigma
    xi = p.mats.xi
    lambda_min = float(linalg.eigvalsh(phi.T @ phi)[0])

    J = value_function(model)
    projection_error = d_norm(p.mats.Pi @ J - J, p.mats)
    w_bound = (
        math.sqrt(n_states / lambda_min) * (projection_error / math.sqrt(xi) + sigma) / (1.0 - model.gamma)
    )
    theta_bound = 2.0 * sigma * n_states * math.sqrt(n_agents / (xi * lambda_min))
    pinv_norm = float(np.max(np.sum(np.abs(laplacian_pseudoinverse(p.laplacian)), axis=1)))
    phi_norm = float(np.max(np.sum(np.abs(phi), axis=1)))
    mu_bound = pinv_norm * phi_norm ** 2 * n_states * theta_bound
    v_bound = theta_bound if c_v is None else float(c_v)
    return SolutionBounds(w=w_bound, v=v_bound, theta=theta_bound, mu=mu_bound)


def make_boxes(bounds: SolutionBounds, settings: BoxSettings) -> BoxConstraints:
    """Radius = safety_factor * bound + margin unless overridden"""

    def radius(override: Optional[float], bound: float) -> float:
        return float(override) if override is not None else settings.safety_factor * bound + settings.margin

    return BoxConstraints(
        radius_theta=radius(settings.radius_theta, bounds.theta),
        radius_v=radius(settings.radius_v, bounds.v),
        radius_mu=radius(settings.radius_mu, bounds.mu),
        radius_w=radius(settings.radius_w, bounds.w),
    )


def audit_boxes(p: SaddleProblem, bounds: SolutionBounds, enforce: bool = True) -> BoxConstraints:
    """
    Check that every radius covers its bound and its saddle component.

    Returns:
        the boxes with the audited flag set on success

    Raises:
        AssumptionViolation: on failure when enforce is set
    """
    point = saddle_point(p)
    bound_values = (bounds.theta, bounds.v, bounds.mu, bounds.w)
    failures = []
    for name, radius, bound, actual in zip(("theta", "v", "mu", "w"), p.boxes.radii(), bound_values, point.max_abs()):
        if actual > radius or (p.rho == 0 and bound > radius):
            failures.append(f"{name}: radius {radius:.6g}, bound {bound:.6g}, saddle component {actual:.6g}")
    if failures:
        message = "constraint boxes do not contain the saddle point: " + "; ".join(failures)
        if enforce:
            raise AssumptionViolation(message)
        logger.warning(message)
        return p.boxes
    return replace(p.boxes, audited=True)


def project_boxes(boxes: BoxConstraints, it: StackedIterate) -> StackedIterate:
    return StackedIterate(
        *(np.clip(x, -r, r) for x, r in zip(it, boxes.radii()))
    )


def gap_proxy(
    p: SaddleProblem,
    it: StackedIterate,
    solution: Optional[StackedIterate] = None,
    rewards: Optional[np.ndarray] = None,
) -> float:
    """L(x, w*) - L(x*, w), a lower bound of the saddle gap"""
    solution = solution or saddle_point(p)
    upper = lagrangian_value(p, replace(it, w=solution.w), rewards)
    lower = lagrangian_value(p, replace(solution, w=it.w), rewards)
    return upper - lower


def _best_response_x(p: SaddleProblem, candidate: StackedIterate, b: np.ndarray) -> StackedIterate:
    C, B = p.mats.gram, p.mats.B
    boxes = p.boxes
    qp = solve_box_qp(
        hess_apply=lambda theta: theta @ C,
        linear=b - candidate.w @ B.T,
        radius=boxes.radius_theta,
        lipschitz=float(linalg.eigvalsh(C)[-1]),
        x0=candidate.theta,
        tol=config.GAP_TOL,
        max_iter=config.GAP_MAX_ITER,
    )
    lw = p.laplacian.laplacian @ candidate.w
    v = np.clip(lw, -boxes.radius_v, boxes.radius_v)
    if p.rho > 0:
        mu = np.clip(lw / p.rho, -boxes.radius_mu, boxes.radius_mu)
    else:
        mu = boxes.radius_mu * np.sign(lw)
    return StackedIterate(theta=qp.x, v=v, mu=mu, w=candidate.w)


def _best_response_w(p: SaddleProblem, candidate: StackedIterate) -> np.ndarray:
    lap = p.laplacian.laplacian
    lv, lm, _ = _coupling(p, candidate)
    linear = candidate.theta @ p.mats.B - lv - lm
    lipschitz = p.kappa * float(p.laplacian.eigenvalues[-1]) + p.rho
    qp = solve_box_qp(
        hess_apply=lambda w: p.kappa * (lap @ w) + p.rho * w,
        linear=linear,
        radius=p.boxes.radius_w,
        lipschitz=lipschitz,
        x0=candidate.w,
        tol=config.GAP_TOL,
        max_iter=config.GAP_MAX_ITER,
    )
    return qp.x


def saddle_gap(p: SaddleProblem, candidate: StackedIterate, rewards: Optional[np.ndarray] = None) -> float:
    """
    sup_w L(x_hat, w) - inf_x L(x, w_hat) over the boxes.

    Both inner problems start from the candidate, so the result is nonnegative.

    Raises:
        DomainError: candidate outside the boxes
    """
    p.check_iterate(candidate)
    if not p.boxes.contains(candidate, slack=1e-12):
        raise DomainError("saddle_gap candidate must lie inside the constraint boxes")
    b = p.weighted_rewards(rewards)
    upper = lagrangian_value(p, replace(candidate, w=_best_response_w(p, candidate)), rewards)
    lower = lagrangian_value(p, _best_response_x(p, candidate, b), rewards)
    return max(0.0, upper - lower)


def in_saddle_set(p: SaddleProblem, candidate: StackedIterate, epsilon: float, rewards: Optional[np.ndarray] = None) -> bool:
    return saddle_gap(p, candidate, rewards) <= epsilon


@dataclass(frozen=True)
class ComplexityEstimate:
    epsilon: float
    delta: float
    omega_1: float
    omega_2: float
    t_required: int


def sample_complexity(epsilon: float, delta: float, alpha0: float, c: float) -> ComplexityEstimate:
    """
    Iterations after which the averaged iterate lies in the epsilon-saddle set
    with probability at least 1 - delta.

    Raises:
        DomainError: epsilon <= 0, delta outside (0, 1), alpha0 <= 0 or c <= 0
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if not alpha0 > 0:
        raise DomainError(f"alpha0 must be positive, got {alpha0}")
    if not c > 0:
        raise DomainError(f"C must be positive, got {c}")
    c2 = c * c
    omega_1 = 8.0 * c2 * ((alpha0 + 2.0) ** 2 * c2 + (alpha0 + 4.0) * epsilon / 6.0) / epsilon ** 2 * math.log(1.0 / delta)
    omega_2 = 4.0 * c2 * c2 * (2.0 / alpha0 + alpha0) ** 2 / epsilon ** 2
    return ComplexityEstimate(
        epsilon=epsilon,
        delta=delta,
        omega_1=omega_1,
        omega_2=omega_2,
        t_required=int(math.ceil(max(omega_1, omega_2))),
    )


def error_rescaling(p: SaddleProblem) -> float:
    """
    min{lambda_min(C)^2, 1} / (2 sqrt(lambda_max(C)^2 + 1)), from the Hessian
    H = diag(C, I) of psi in (theta, v): the v block adds 1 to the top of the
    spectrum of H^T H and caps its bottom at 1.
    """
    eig = linalg.eigvalsh(p.mats.gram)
    lambda_min_sq = min(float(eig[0]) ** 2, 1.0)
    return lambda_min_sq / (2.0 * math.sqrt(float(eig[-1]) ** 2 + 1.0))


def complexity_requirements(
    epsilon: float,
    delta: float,
    alpha0: float,
    c: float,
    problem: Optional[SaddleProblem] = None,
) -> Dict[str, Optional[ComplexityEstimate]]:
    """
    Requirements for the saddle gap, for consensus (w^T L w <= epsilon) and for
    the primal error; the latter two need the problem matrices.
    """
    requirements: Dict[str, Optional[ComplexityEstimate]] = {
        "saddle": sample_complexity(epsilon, delta, alpha0, c),
        "consensus": None,
        "error": None,
    }
    if problem is None:
        return requirements
    if problem.kappa > 0:
        requirements["consensus"] = sample_complexity(0.5 * problem.kappa * epsilon, delta, alpha0, c)
    requirements["error"] = sample_complexity(error_rescaling(problem) * epsilon, delta, alpha0, c)
    return requirements
