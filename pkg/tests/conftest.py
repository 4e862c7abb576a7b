from importlib import resources

import numpy as np
import pytest

from gasmix.network import parse_network
from gasmix.workflow import ScenarioDocument, run_workflow

SIGMA1 = 338.38
SIGMA2 = 4 * SIGMA1


def data_path(name):
    return resources.files("gasmix") / "data" / name


def pipe_network(length_km=10.0, actuators=()):
    """One supply node feeding one withdrawal node through a single pipe."""
    return parse_network({
        "nodes": [{"id": 1, "kind": "supply"}, {"id": 2, "kind": "withdrawal"}],
        "edges": [{"id": 1, "from": 1, "to": 2, "length_km": length_km, "diameter_m": 0.5, "friction": 0.011}],
        "actuators": list(actuators),
    })


def chain_network(n_withdrawal, length_km=10.0):
    nodes = [{"id": 1, "kind": "supply"}] + [{"id": i + 2, "kind": "withdrawal"} for i in range(n_withdrawal)]
    edges = [{"id": i + 1, "from": i + 1, "to": i + 2, "length_km": length_km, "diameter_m": 0.5, "friction": 0.011}
             for i in range(n_withdrawal)]
    return parse_network({"nodes": nodes, "edges": edges})


@pytest.fixture(scope="session")
def fixture_doc():
    return ScenarioDocument.load(data_path("four_node_scenario.yaml"))


@pytest.fixture(scope="session")
def fixture_net(fixture_doc):
    return fixture_doc.refined_network()


@pytest.fixture(scope="session")
def workflow_runs(fixture_doc, tmp_path_factory):
    """Full optimize/simulate/validate runs keyed by hydrogen fraction (computed lazily)."""
    cache = {}

    def get(fraction):
        if fraction not in cache:
            out = tmp_path_factory.mktemp(f"run_{fraction:g}")
            report = run_workflow(fixture_doc.with_hydrogen_fraction(fraction), out)
            cache[fraction] = (report, out)
        return cache[fraction]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
