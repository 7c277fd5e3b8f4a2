"""
Built-in scenarios: the 4-state chain with five agents, a 20x20 grid-world
patrol, its single-agent reduction and a hand-checkable 2-state toy.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import networkx as nx
import numpy as np
from scipy.spatial import distance

from app.core.errors import UnknownPreset
from app.services.comm_graph import GraphDistribution, RandomGraph, empty_graph, ring_with_chord
from app.services.mdp import FeatureMap, MdpModel

logger = logging.getLogger(__name__)

CHAIN4_TRANSITION = [
    [0.1, 0.5, 0.2, 0.2],
    [0.5, 0.0, 0.1, 0.4],
    [0.0, 0.9, 0.1, 0.0],
    [0.2, 0.1, 0.1, 0.6],
]

GRID_SIZE = 20
GRID_PROXIMITY = 5.0
GRID_REWARD = 100.0
# (row slice, col slice) rewarded for each gridworld agent
GRID_REGIONS = (
    (slice(0, 5), slice(0, 5)),
    (slice(0, 5), slice(15, 20)),
    (slice(15, 20), slice(8, 13)),
)


@dataclass(frozen=True)
class Scenario:
    name: str
    model: MdpModel
    features: FeatureMap
    graph: RandomGraph
    run_defaults: Dict[str, Any] = field(default_factory=dict)
    acceptance_defaults: Dict[str, Any] = field(default_factory=dict)
    grid_shape: Optional[Tuple[int, int]] = None
    description: str = ""


def chain4_features() -> FeatureMap:
    states = np.arange(1, 5, dtype=float)
    return FeatureMap(np.column_stack([np.exp(-states ** 2), np.exp(-(states - 4.0) ** 2)]))


def _chain4(num_agents: int = 5) -> Tuple[MdpModel, FeatureMap]:
    rewards = np.zeros((num_agents, 4))
    rewards[0, 3] = 50.0
    model = MdpModel(np.array(CHAIN4_TRANSITION), rewards, sigma=50.0, gamma=0.8)
    return model, chain4_features()


def chain4() -> Scenario:
    model, features = _chain4()
    return Scenario(
        name="chain4",
        model=model,
        features=features,
        graph=ring_with_chord(5),
        run_defaults={
            "total_iterations": 50000,
            "kappa": 1.0,
            "schedule": {"kind": "inverse-sqrt", "alpha0": 10.0, "beta": 100.0},
            "output": "both",
            "average_from": 0.5,
        },
        acceptance_defaults={
            "max_block_spread": 0.05,
            "max_w_error": 0.1,
            "min_pass_fraction": 0.8,
            "require_consensus_decrease": True,
        },
        description="4-state chain, two Gaussian features, five agents, only agent 1 rewarded",
    )


def single_agent() -> Scenario:
    model, features = _chain4(num_agents=1)
    return Scenario(
        name="single-agent",
        model=model,
        features=features,
        graph=empty_graph(1),
        run_defaults={
            "total_iterations": 50000,
            "kappa": 0.0,
            "schedule": {"kind": "inverse-sqrt", "alpha0": 10.0, "beta": 100.0},
        },
        acceptance_defaults={"max_mean_w_error": 0.05},
        description="the 4-state chain with one agent: plain GTD",
    )


def toy2x2() -> Scenario:
    model = MdpModel(
        np.array([[0.5, 0.5], [0.25, 0.75]]),
        np.array([[1.0, 0.0], [0.0, 1.0]]),
        sigma=1.0,
        gamma=0.8,
    )
    return Scenario(
        name="toy2x2",
        model=model,
        features=FeatureMap(np.array([[1.0], [2.0]])),
        graph=GraphDistribution(2, ((0, 1),), np.ones(1)),
        run_defaults={
            "total_iterations": 1000,
            "kappa": 1.0,
            "schedule": {"kind": "inverse-sqrt", "alpha0": 0.5, "beta": 1.0},
        },
        description="2 states, 2 agents, one feature: small enough to check by hand",
    )


def grid_transition(rows: int, cols: int) -> np.ndarray:
    """Lazy random walk: stay or move to a uniformly chosen grid neighbor"""
    grid = nx.grid_2d_graph(rows, cols)
    index = {node: node[0] * cols + node[1] for node in grid.nodes}
    transition = np.zeros((rows * cols, rows * cols))
    for node in grid.nodes:
        options = [node] + list(grid.neighbors(node))
        for target in options:
            transition[index[node], index[target]] = 1.0 / len(options)
    return transition


def proximity_probability(d: np.ndarray, rows: int, cols: int, radius: float) -> float:
    """P(|x - y|_1 <= radius) for two independent walkers drawn from d, in grid steps"""
    coords = np.array([(r, c) for r in range(rows) for c in range(cols)], dtype=float)
    distances = distance.cdist(coords, coords, metric="cityblock")
    return float(d @ (distances <= radius) @ d)


def gridworld() -> Scenario:
    transition = grid_transition(GRID_SIZE, GRID_SIZE)
    num_states = GRID_SIZE * GRID_SIZE
    rewards = np.zeros((len(GRID_REGIONS), num_states))
    for agent, (rows, cols) in enumerate(GRID_REGIONS):
        mask = np.zeros((GRID_SIZE, GRID_SIZE), dtype=bool)
        mask[rows, cols] = True
        rewards[agent, mask.ravel()] = GRID_REWARD
    model = MdpModel(transition, rewards, sigma=GRID_REWARD, gamma=0.5)

    # Stationary law of the lazy walk is proportional to (degree + 1)
    degrees = transition.astype(bool).sum(axis=1).astype(float)
    d = degrees / degrees.sum()
    probability = proximity_probability(d, GRID_SIZE, GRID_SIZE, GRID_PROXIMITY)
    graph = GraphDistribution.from_networkx(nx.complete_graph(len(GRID_REGIONS)), probability)
    logger.debug(f"Gridworld proximity edge probability {probability:.4f}")

    return Scenario(
        name="gridworld",
        model=model,
        features=FeatureMap.tabular(num_states),
        graph=graph,
        run_defaults={
            "total_iterations": 50000,
            "kappa": 1.0,
            "schedule": {"kind": "inverse-sqrt", "alpha0": 1.0, "beta": 100.0},
            "independent_states": True,
            "record_every": 50,
        },
        grid_shape=(GRID_SIZE, GRID_SIZE),
        description="20x20 lazy random walk, tabular features, three patrol agents",
    )


PRESETS: Dict[str, Callable[[], Scenario]] = {
    "chain4": chain4,
    "gridworld": gridworld,
    "single-agent": single_agent,
    "toy2x2": toy2x2,
}


def preset_names() -> Tuple[str, ...]:
    return tuple(PRESETS)


def preset(name: str) -> Scenario:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset '{name}'; available: {', '.join(PRESETS)}") from None
    logger.info(f"Resolved preset {name}")
    return factory()
