"""
Stochastic distributed GTD engine.

Every iteration samples a communication graph, then a transition (common to all
agents or one per agent), then reward noise, and applies one synchronous
primal-dual step followed by projection onto the constraint boxes.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from app.core import config
from app.core.errors import DimensionMismatch, DomainError
from app.schemas.run import RewardNoise, RunConfig
from app.services.comm_graph import LaplacianView, RandomGraph, sample_graph
from app.services.mdp import BellmanMatrices, FeatureMap, MdpModel
from app.services.saddle import (
    BoxConstraints,
    SaddleProblem,
    StackedIterate,
    lagrangian_from_weighted,
    project_boxes,
    saddle_point,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransitionSample:
    """Per-agent source/destination states, feature rows and reward realizations"""
    states: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    phi: np.ndarray
    phi_next: np.ndarray


def _normalized_cdf(weights: np.ndarray) -> np.ndarray:
    """Cumulative sums along the last axis, rescaled so that every last entry is exactly 1"""
    cdf = np.cumsum(weights, axis=-1)
    cdf /= cdf[..., -1:]
    cdf[..., -1] = 1.0
    return cdf


class TransitionSampler:
    """Inverse-CDF sampler over d and the rows of P, built once per run"""

    def __init__(
        self,
        model: MdpModel,
        mats: BellmanMatrices,
        noise: Optional[RewardNoise] = None,
        attribution: str = "source",
        independent_states: bool = False,
    ):
        if attribution not in ("source", "destination"):
            raise ValueError(f"unknown reward attribution '{attribution}'")
        self.model = model
        self.phi = mats.phi
        self.noise = noise or RewardNoise()
        self.attribution = attribution
        self.independent_states = independent_states
        self._state_cdf = _normalized_cdf(mats.d)
        self._row_cdf = _normalized_cdf(model.transition)
        self._agents = np.arange(model.num_agents)

    @staticmethod
    def _draw_states(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
        # u < 1 = cdf[-1], and zero-probability states own empty intervals
        return np.searchsorted(cdf, u, side="right")

    def draw(self, rng: np.random.Generator) -> TransitionSample:
        n = self.model.num_agents
        draws = n if self.independent_states else 1
        states = self._draw_states(self._state_cdf, rng.random(draws))
        u_next = rng.random(draws)
        next_states = np.array(
            [self._draw_states(self._row_cdf[s], u) for s, u in zip(states, u_next)], dtype=int
        )
        if not self.independent_states:
            states = np.repeat(states, n)
            next_states = np.repeat(next_states, n)

        indexed = states if self.attribution == "source" else next_states
        expected = self.model.agent_rewards[self._agents, indexed]
        rewards = expected
        if self.noise.kind == "bounded-uniform" and self.noise.half_width > 0:
            # Shrinking the half-width near 0 and sigma keeps the draw unbiased and in range
            half_width = np.minimum(self.noise.half_width, np.minimum(expected, self.model.sigma - expected))
            rewards = expected + half_width * rng.uniform(-1.0, 1.0, size=n)

        return TransitionSample(
            states=states,
            next_states=next_states,
            rewards=rewards,
            phi=self.phi[states],
            phi_next=self.phi[next_states],
        )


def sample_transition(
    model: MdpModel,
    mats: BellmanMatrices,
    rng: np.random.Generator,
    noise: Optional[RewardNoise] = None,
    attribution: str = "source",
    independent_states: bool = False,
) -> TransitionSample:
    """s ~ d, s' ~ P[s, :] and per-agent rewards in [0, sigma] with mean r_i"""
    return TransitionSampler(model, mats, noise, attribution, independent_states).draw(rng)


def stochastic_gradients(
    state: StackedIterate,
    sample: TransitionSample,
    graph: LaplacianView,
    gamma: float,
    kappa: float,
    rho: float,
) -> StackedIterate:
    """
    One-sample estimates of (grad_theta, grad_v, grad_mu, grad_w).

    Their conditional mean is exact_gradients at the mean Laplacian.
    """
    lap = graph.laplacian
    if state.theta.shape != sample.phi.shape:
        raise DimensionMismatch(f"iterate blocks {state.theta.shape} do not match feature rows {sample.phi.shape}")
    if lap.shape[0] != state.num_agents:
        raise DimensionMismatch(f"graph has {lap.shape[0]} agents, iterate has {state.num_agents}")

    phi, phi_next = sample.phi, sample.phi_next
    theta_proj = np.sum(phi * state.theta, axis=1)
    td_error = theta_proj + np.sum(phi * state.w, axis=1) - gamma * np.sum(phi_next * state.w, axis=1) - sample.rewards
    lw = lap @ state.w

    grad_theta = td_error[:, None] * phi
    grad_v = state.v - lw
    grad_mu = -lw + rho * state.mu
    grad_w = (
        -(lap @ state.v)
        - lap @ state.mu
        + theta_proj[:, None] * (phi - gamma * phi_next)
        - kappa * lw
        - rho * state.w
    )
    return StackedIterate(grad_theta, grad_v, grad_mu, grad_w)


def primal_dual_update(
    state: StackedIterate, grads: StackedIterate, alpha: float, boxes: BoxConstraints
) -> StackedIterate:
    """Descent in (theta, v, mu), ascent in w, then projection"""
    if not alpha > 0:
        raise DomainError(f"step size must be positive, got {alpha}")
    half_step = StackedIterate(
        theta=state.theta - alpha * grads.theta,
        v=state.v - alpha * grads.v,
        mu=state.mu - alpha * grads.mu,
        w=state.w + alpha * grads.w,
    )
    return project_boxes(boxes, half_step)


def dgtd_step(
    state: StackedIterate,
    sample: TransitionSample,
    graph: LaplacianView,
    alpha: float,
    kappa: float,
    rho: float,
    boxes: BoxConstraints,
    gamma: float,
) -> StackedIterate:
    grads = stochastic_gradients(state, sample, graph, gamma, kappa, rho)
    return primal_dual_update(state, grads, alpha, boxes)


@dataclass
class MetricSeries:
    k: List[int] = field(default_factory=list)
    consensus_penalty: List[float] = field(default_factory=list)
    theta_err: List[float] = field(default_factory=list)
    v_norm: List[float] = field(default_factory=list)
    w_err: List[float] = field(default_factory=list)
    gap_proxy: List[float] = field(default_factory=list)
    w_blocks: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.k)

    def value_at(self, column: str, k: int) -> float:
        """Value of a column at the last recorded iteration <= k"""
        index = int(np.searchsorted(np.asarray(self.k), k, side="right")) - 1
        if index < 0:
            raise ValueError(f"no record at or before iteration {k}")
        return getattr(self, column)[index]


class MetricRecorder:
    """Evaluates the per-record metrics against a fixed saddle point"""

    def __init__(self, problem: SaddleProblem, solution: StackedIterate):
        self.problem = problem
        self.solution = solution
        self.b = problem.weighted_rewards()
        self.lap = problem.laplacian.laplacian

    def record(self, series: MetricSeries, k: int, it: StackedIterate) -> None:
        sol = self.solution
        series.k.append(k)
        series.consensus_penalty.append(float(np.sum(it.w * (self.lap @ it.w))))
        series.theta_err.append(float(np.sum((it.theta - sol.theta) ** 2)))
        series.v_norm.append(float(np.sum(it.v ** 2)))
        series.w_err.append(float(np.sum((it.w - sol.w) ** 2)))
        upper = lagrangian_from_weighted(self.problem, replace(it, w=sol.w), self.b)
        lower = lagrangian_from_weighted(self.problem, replace(sol, w=it.w), self.b)
        series.gap_proxy.append(upper - lower)
        series.w_blocks.append(np.array(it.w, copy=True))


@dataclass
class RunTrace:
    seed: int
    total_iterations: int
    stride: int
    series: Dict[str, MetricSeries]
    averaged: StackedIterate
    last: StackedIterate
    solution: StackedIterate
    empirical_c: float
    history: Optional[List[StackedIterate]] = None

    @property
    def primary(self) -> MetricSeries:
        return self.series.get("averaged") or self.series["last"]


def record_stride(total_iterations: int, record_every: Optional[int] = None) -> int:
    if record_every:
        return record_every
    return max(1, math.ceil(total_iterations / config.TRACE_ROW_CAP))


def run(
    problem: SaddleProblem,
    model: MdpModel,
    feats: FeatureMap,
    dist: RandomGraph,
    cfg: RunConfig,
    initial: Optional[StackedIterate] = None,
) -> RunTrace:
    """
    Execute T iterations and return the recorded trace.

    The sampler draws rewards from `model` (state-indexed, attributed per
    cfg.reward_attribution); metrics are measured against the saddle point of
    `problem`. The averaged iterate is the mean of x_0..x_{T-1}. With
    cfg.average_from = f > 0 the average restarts at b = floor(f T) and the
    output is the tail mean of x_b..x_{T-1}; records before b still show the
    mean from x_0.
    """
    if model.num_agents != problem.num_agents or feats.q != problem.q:
        raise DimensionMismatch("model, features and problem disagree on agents or feature dimension")

    rng = np.random.default_rng(cfg.seed)
    sampler = TransitionSampler(model, problem.mats, cfg.reward_noise, cfg.reward_attribution, cfg.independent_states)
    solution = saddle_point(problem)
    recorder = MetricRecorder(problem, solution)
    stride = record_stride(cfg.total_iterations, cfg.record_every)
    series = {}
    if cfg.output in ("averaged", "both"):
        series["averaged"] = MetricSeries()
    if cfg.output in ("last", "both"):
        series["last"] = MetricSeries()

    state = initial.copy() if initial is not None else StackedIterate.zeros(problem.num_agents, problem.q)
    state = project_boxes(problem.boxes, state)
    average = [np.zeros_like(x) for x in state]
    average_start = math.floor(cfg.average_from * cfg.total_iterations)
    history = [] if cfg.keep_history else None
    empirical_c = 0.0
    gamma = model.gamma

    logger.info(f"DGTD run seed={cfg.seed} T={cfg.total_iterations} stride={stride} average_start={average_start}")
    for k in range(cfg.total_iterations):
        alpha = cfg.schedule.step(k)
        graph = sample_graph(dist, rng)
        sample = sampler.draw(rng)

        count = k + 1 if k < average_start else k - average_start + 1
        for acc, x in zip(average, state):
            acc += (x - acc) / count
        if history is not None:
            history.append(state)

        grads = stochastic_gradients(state, sample, graph, gamma, problem.kappa, problem.rho)
        primal_norm = math.sqrt(sum(float(np.sum(g * g)) for g in (grads.theta, grads.v, grads.mu)))
        empirical_c = max(empirical_c, primal_norm, float(np.linalg.norm(grads.w)))
        state = primal_dual_update(state, grads, alpha, problem.boxes)

        completed = k + 1
        if completed % stride == 0 or completed == cfg.total_iterations:
            if "averaged" in series:
                recorder.record(series["averaged"], completed, StackedIterate(*average))
            if "last" in series:
                recorder.record(series["last"], completed, state)

    logger.info(f"DGTD run seed={cfg.seed} finished, empirical C = {empirical_c:.6g}")
    return RunTrace(
        seed=cfg.seed,
        total_iterations=cfg.total_iterations,
        stride=stride,
        series=series,
        averaged=StackedIterate(*(np.array(a) for a in average)),
        last=state,
        solution=solution,
        empirical_c=empirical_c,
        history=history,
    )


def block_spread(w: np.ndarray) -> float:
    """max over agent pairs of ||w_i - w_j||_inf"""
    if w.shape[0] < 2:
        return 0.0
    return float(np.max(w.max(axis=0) - w.min(axis=0)))
