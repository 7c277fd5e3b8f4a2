"""
Finite MDP policy-evaluation algebra: the policy-induced chain, features,
the projected Bellman matrices, MSPBE and the closed-form global solution.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.sparse import csgraph, csr_matrix

from app.core import config
from app.core.errors import DimensionMismatch, NonErgodic, SingularB, SingularGram

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
MIN_STATIONARY_MASS = 1e-12
GRAM_RANK_TOL = 1e-10
B_SINGULAR_TOL = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MdpModel:
    """Policy-evaluated Markov chain with per-agent state-indexed expected rewards"""
    transition: np.ndarray
    agent_rewards: np.ndarray
    sigma: float
    gamma: float

    def __post_init__(self):
        transition = _frozen(self.transition)
        rewards = _frozen(np.atleast_2d(self.agent_rewards))
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "agent_rewards", rewards)

        if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
            raise DimensionMismatch(f"transition must be square, got shape {transition.shape}")
        if np.any(transition < 0):
            raise ValueError("transition has negative entries")
        row_sums = transition.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError(f"transition rows must sum to 1, got {row_sums.tolist()}")
        if rewards.shape[1] != transition.shape[0]:
            raise DimensionMismatch(
                f"agent_rewards has {rewards.shape[1]} states, transition has {transition.shape[0]}"
            )
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if np.any(rewards < 0) or np.any(rewards > self.sigma):
            raise ValueError(f"agent rewards must lie in [0, {self.sigma}]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_agents(self) -> int:
        return self.agent_rewards.shape[0]

    def average_reward(self) -> np.ndarray:
        return self.agent_rewards.mean(axis=0)

    def with_rewards(self, agent_rewards: np.ndarray) -> "MdpModel":
        return MdpModel(self.transition, agent_rewards, self.sigma, self.gamma)


@dataclass(frozen=True)
class FeatureMap:
    phi: np.ndarray

    def __post_init__(self):
        phi = _frozen(self.phi)
        if phi.ndim != 2:
            raise DimensionMismatch(f"phi must be a |S| x q matrix, got shape {phi.shape}")
        object.__setattr__(self, "phi", phi)

    @property
    def q(self) -> int:
        return self.phi.shape[1]

    @property
    def num_states(self) -> int:
        return self.phi.shape[0]

    def has_full_column_rank(self) -> bool:
        singular_values = linalg.svdvals(self.phi)
        return singular_values[-1] > GRAM_RANK_TOL * singular_values[0]

    @classmethod
    def tabular(cls, num_states: int) -> "FeatureMap":
        return cls(np.eye(num_states))


@dataclass(frozen=True)
class BellmanMatrices:
    d: np.ndarray
    D: np.ndarray
    xi: float
    Pi: np.ndarray
    B: np.ndarray
    # Carried along so the saddle machinery does not need the feature map separately
    phi: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)
    gamma: float = 0.0

    @property
    def q(self) -> int:
        return self.phi.shape[1]

    def weighted_rewards(self, rewards: np.ndarray) -> np.ndarray:
        """Rows b_i = Phi^T D r_i for a stack of state-indexed reward vectors"""
        rewards = np.atleast_2d(rewards)
        return rewards @ (self.D @ self.phi)


def _is_irreducible(transition: np.ndarray) -> bool:
    n_components, _ = csgraph.connected_components(
        csr_matrix(transition > 0), directed=True, connection="strong"
    )
    return n_components == 1


def _eigen_stationary(transition: np.ndarray) -> Optional[np.ndarray]:
    eigenvalues, eigenvectors = linalg.eig(transition.T)
    idx = int(np.argmin(np.abs(eigenvalues - 1.0)))
    vector = np.real(eigenvectors[:, idx])
    total = vector.sum()
    if abs(total) < MIN_STATIONARY_MASS:
        return None
    return vector / total


def stationary_distribution(
    model: MdpModel,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> np.ndarray:
    """
    Stationary distribution of the policy-induced chain.

    Damped power iteration on (P + I)/2, which shares the stationary vector of P
    and is aperiodic. Falls back to an eigensolve of P^T if the iteration cap is hit.

    Raises:
        NonErgodic: reducible chain, or a limiting entry is not strictly positive
    """
    max_iter = max_iter or config.POWER_ITER_CAP
    tol = tol or config.POWER_ITER_TOL
    transition = model.transition

    if not _is_irreducible(transition):
        raise NonErgodic("transition matrix is reducible: no unique positive stationary distribution")

    damped = 0.5 * (transition + np.eye(model.num_states))
    d = np.full(model.num_states, 1.0 / model.num_states)
    converged = False
    for iteration in range(max_iter):
        d_next = d @ damped
        if np.abs(d_next - d).sum() <= tol:
            d = d_next
            converged = True
            logger.debug(f"Power iteration converged after {iteration + 1} steps")
            break
        d = d_next

    if not converged:
        logger.warning(f"Power iteration did not converge in {max_iter} steps, using eigensolve")
        d = _eigen_stationary(transition)
        if d is None:
            raise NonErgodic("power iteration did not converge and the eigensolve failed")

    d = d / d.sum()
    if np.any(d <= MIN_STATIONARY_MASS):
        raise NonErgodic(f"stationary distribution has non-positive entries: min {d.min():.3e}")
    return d


def assemble_bellman(model: MdpModel, features: FeatureMap) -> BellmanMatrices:
    if features.num_states != model.num_states:
        raise DimensionMismatch(
            f"features have {features.num_states} rows, model has {model.num_states} states"
        )
    d = stationary_distribution(model)
    D = np.diag(d)
    phi = features.phi

    gram = phi.T @ D @ phi
    singular_values = linalg.svdvals(gram)
    if singular_values[-1] <= GRAM_RANK_TOL * singular_values[0]:
        raise SingularGram(
            f"Phi^T D Phi is numerically singular (sigma_min/sigma_max = "
            f"{singular_values[-1] / singular_values[0]:.3e}); Phi must have full column rank"
        )

    Pi = phi @ linalg.solve(gram, phi.T @ D, assume_a="pos")
    B = phi.T @ D @ (np.eye(model.num_states) - model.gamma * model.transition) @ phi

    return BellmanMatrices(
        d=_frozen(d),
        D=_frozen(D),
        xi=float(d.min()),
        Pi=_frozen(Pi),
        B=_frozen(B),
        phi=features.phi,
        gram=_frozen(gram),
        transition=model.transition,
        gamma=model.gamma,
    )


def check_b_nonsingular(mats: BellmanMatrices) -> None:
    singular_values = linalg.svdvals(mats.B)
    if singular_values[-1] <= B_SINGULAR_TOL:
        raise SingularB(f"B = Phi^T D (I - gamma P) Phi is singular (sigma_min = {singular_values[-1]:.3e})")


def mspbe(w: np.ndarray, agent: int, mats: BellmanMatrices, model: MdpModel) -> float:
    """Local objective 1/2 ||Pi(r_i + gamma P Phi w) - Phi w||_D^2 of one agent"""
    w = np.asarray(w, dtype=float)
    if w.shape != (mats.q,):
        raise DimensionMismatch(f"w must have shape ({mats.q},), got {w.shape}")
    values = mats.phi @ w
    backup = model.agent_rewards[agent] + model.gamma * model.transition @ values
    residual = mats.Pi @ backup - values
    return 0.5 * float(residual @ mats.D @ residual)


def exact_global_solution(mats: BellmanMatrices, model: MdpModel) -> np.ndarray:
    """w* = B^{-1} Phi^T D r_avg, the fixed point of the projected Bellman equation"""
    check_b_nonsingular(mats)
    return linalg.solve(mats.B, mats.phi.T @ mats.D @ model.average_reward())


def value_function(model: MdpModel) -> np.ndarray:
    """J = (I - gamma P)^{-1} r_avg"""
    return linalg.solve(np.eye(model.num_states) - model.gamma * model.transition, model.average_reward())


def projected_bellman_residual(w: np.ndarray, mats: BellmanMatrices, model: MdpModel) -> np.ndarray:
    values = mats.phi @ w
    return mats.Pi @ (model.average_reward() + model.gamma * model.transition @ values) - values


def d_norm(x: np.ndarray, mats: BellmanMatrices) -> float:
    return float(np.sqrt(x @ mats.D @ x))


def effective_rewards(model: MdpModel, attribution: str) -> MdpModel:
    """
    State-indexed expected rewards seen by the sampler.

    With destination attribution the reward is paid on arrival at s', so the
    expected reward from state s is (P r)(s).
    """
    if attribution == "source":
        return model
    if attribution == "destination":
        return model.with_rewards(model.agent_rewards @ model.transition.T)
    raise ValueError(f"unknown reward attribution '{attribution}'")
