import os

# Keep the app's import-time create_all away from the working directory
os.environ.setdefault("DGTD_DATABASE_URL", "sqlite://")

import numpy as np
import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

import app.models  # noqa: F401
from app.core.dependencies import get_output_dir
from app.database import Base, get_db
from app.services.comm_graph import GraphDistribution, empty_graph
from app.services.mdp import FeatureMap, MdpModel
from app.services.presets import chain4, single_agent, toy2x2
from app.services.saddle import build_saddle_problem

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture
def chain4_scenario():
    return chain4()


@pytest.fixture
def toy_scenario():
    return toy2x2()


@pytest.fixture
def single_scenario():
    return single_agent()


@pytest.fixture
def chain4_problem(chain4_scenario):
    s = chain4_scenario
    return build_saddle_problem(s.model, s.features, s.graph, kappa=1.0)


@pytest.fixture
def toy_problem(toy_scenario):
    s = toy_scenario
    return build_saddle_problem(s.model, s.features, s.graph, kappa=1.0)


@pytest.fixture
def single_problem(single_scenario):
    s = single_scenario
    return build_saddle_problem(s.model, s.features, s.graph, kappa=0.0)


def random_instance(rng: np.random.Generator):
    """Ergodic chain with |S| <= 6, q <= 3, N <= 4 on a random connected graph"""
    num_states = int(rng.integers(2, 7))
    q = int(rng.integers(1, min(3, num_states) + 1))
    num_agents = int(rng.integers(1, 5))
    sigma = float(rng.uniform(1.0, 10.0))

    transition = rng.random((num_states, num_states)) + 0.05
    transition /= transition.sum(axis=1, keepdims=True)
    rewards = rng.uniform(0.0, sigma, size=(num_agents, num_states))
    model = MdpModel(transition, rewards, sigma=sigma, gamma=float(rng.uniform(0.3, 0.95)))
    features = FeatureMap(rng.standard_normal((num_states, q)))

    if num_agents == 1:
        graph = empty_graph(1)
    else:
        edges = [(i, i + 1) for i in range(num_agents - 1)]
        extra = [(i, j) for i in range(num_agents) for j in range(i + 2, num_agents)]
        edges += [e for e in extra if rng.random() < 0.5]
        graph = GraphDistribution(num_agents, tuple(edges), rng.uniform(0.3, 1.0, size=len(edges)))
    return model, features, graph


@pytest.fixture
def random_instances():
    rng = np.random.default_rng(20240611)
    return [random_instance(rng) for _ in range(20)]


@pytest.fixture
def db_session():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    Base.metadata.create_all(bind=engine)
    TestingSession = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    session = TestingSession()
    try:
        yield session
    finally:
        session.close()
        Base.metadata.drop_all(bind=engine)


@pytest.fixture
def client(db_session, tmp_path):
    from main import app

    def override_get_db():
        yield db_session

    app.dependency_overrides[get_db] = override_get_db
    app.dependency_overrides[get_output_dir] = lambda: tmp_path
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()
