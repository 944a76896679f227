from __future__ import annotations

import pytest

from causal_bo.cache_manager import cache_manager
from causal_bo.causal_graph import CausalGraph
from causal_bo.models import NodeRole
from causal_bo.scenarios import scenario_service
from causal_bo.scm import sample_observational

T, C, Y = NodeRole.TREATMENT, NodeRole.CONTEXT, NodeRole.TARGET


@pytest.fixture(autouse=True)
def _fresh_caches():
    cache_manager.clear_all()
    yield
    cache_manager.clear_all()


@pytest.fixture
def toy():
    return scenario_service.get("toy")


@pytest.fixture
def synthetic():
    return scenario_service.get("synthetic")


@pytest.fixture
def healthcare():
    return scenario_service.get("healthcare")


@pytest.fixture
def frontdoor():
    return scenario_service.get("frontdoor")


@pytest.fixture
def toy_graph():
    return CausalGraph.build(["X", "Z", "Y"], [("X", "Z"), ("Z", "Y")], roles={"X": T, "Z": T, "Y": Y})


@pytest.fixture
def synthetic_graph():
    """F を除いた合成例のグラフ"""
    return CausalGraph.build(
        ["A", "B", "C", "D", "E", "Y"],
        [("A", "E"), ("B", "C"), ("C", "D"), ("C", "E"), ("D", "Y"), ("E", "Y")],
        [("A", "Y"), ("B", "Y")],
        roles={"A": C, "B": T, "C": C, "D": T, "E": T, "Y": Y},
    )


@pytest.fixture
def toy_data(toy):
    return sample_observational(toy.sem, 1000, seed=11)


@pytest.fixture
def run_dir(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    return out
