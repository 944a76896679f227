from __future__ import annotations

import pytest

from causal_bo.causal_graph import (
    CausalGraph,
    PomisRegistry,
    ancestors,
    causal_dimension,
    enumerate_mis,
    exploration_set,
    format_set,
    mutilate,
    parse_graph,
    validate,
)
from causal_bo.errors import (
    CycleDetected,
    GraphParseError,
    MultipleTargets,
    NonManipulativeCut,
    NoTarget,
    PomisUnavailable,
    RoleConflict,
    UnknownNode,
)
from causal_bo.models import ExplorationSetKind, NodeRole
from causal_bo.scenarios import scenario_service

T, C, Y = NodeRole.TREATMENT, NodeRole.CONTEXT, NodeRole.TARGET


def chain_graph(length: int) -> CausalGraph:
    """X0 -> X1 -> ... -> X{length-1}、Y の親は最後の2ノード"""
    names = [f"X{i}" for i in range(length)]
    edges = [(a, b) for a, b in zip(names, names[1:])]
    edges += [(names[-2], "Y"), (names[-1], "Y")]
    return CausalGraph.build(names + ["Y"], edges, roles={**{n: T for n in names}, "Y": Y})


class TestValidate:
    def test_toy_chain_is_valid(self, toy_graph):
        validate(toy_graph)

    def test_single_target_node(self):
        validate(CausalGraph.build(["Y"], roles={"Y": Y}))

    def test_two_cycle(self):
        g = CausalGraph.build(["X", "Z", "Y"], [("X", "Z"), ("Z", "X")], roles={"Y": Y})
        with pytest.raises(CycleDetected) as excinfo:
            validate(g)
        assert set(excinfo.value.nodes) == {"X", "Z"}

    def test_missing_target(self):
        with pytest.raises(NoTarget):
            validate(CausalGraph.build(["X"], roles={"X": T}))

    def test_two_targets(self):
        g = CausalGraph.build(["Y1", "Y2"], roles={"Y1": Y, "Y2": Y})
        with pytest.raises(MultipleTargets) as excinfo:
            validate(g)
        assert excinfo.value.nodes == ("Y1", "Y2")

    def test_invalid_node_name(self):
        g = CausalGraph.build(["1X", "Y"], roles={"Y": Y})
        with pytest.raises(GraphParseError, match="invalid node name") as excinfo:
            validate(g)
        assert excinfo.value.nodes == ("1X",)

    def test_role_outside_graph(self):
        g = CausalGraph(nodes=("Y",), directed_edges=frozenset(), bidirected_edges=frozenset(),
                        roles={"Y": Y, "Q": T})
        with pytest.raises(RoleConflict):
            validate(g)


class TestAncestors:
    def test_toy(self, toy_graph):
        assert ancestors(toy_graph, "Y") == {"X", "Z"}
        assert ancestors(toy_graph, "X") == set()

    def test_synthetic(self, synthetic_graph):
        assert ancestors(synthetic_graph, "Y") == {"A", "B", "C", "D", "E"}

    def test_bundled_synthetic_includes_context_f(self, synthetic):
        assert ancestors(synthetic.graph, "Y") == {"A", "B", "C", "D", "E", "F"}

    def test_unknown_node(self, toy_graph):
        with pytest.raises(UnknownNode):
            ancestors(toy_graph, "W")


class TestMutilate:
    def test_cut_removes_incoming_edges_only(self, toy_graph):
        cut = mutilate(toy_graph, {"Z"})
        assert cut.directed_edges == frozenset({("Z", "Y")})

    def test_empty_cut_is_identity(self, toy_graph):
        assert mutilate(toy_graph, set()) == toy_graph

    def test_synthetic_cut(self, synthetic_graph):
        cut = mutilate(synthetic_graph, {"D", "E"})
        assert not {("C", "D"), ("C", "E"), ("A", "E")} & cut.directed_edges
        assert {("D", "Y"), ("E", "Y"), ("B", "C")} <= cut.directed_edges
        # D, E に接しない交絡辺は残る
        assert cut.bidirected_edges == frozenset({("A", "Y"), ("B", "Y")})

    def test_confounder_on_cut_node_removed(self, synthetic_graph):
        cut = mutilate(synthetic_graph, {"B"})
        assert cut.bidirected_edges == frozenset({("A", "Y")})

    def test_idempotent(self, synthetic_graph):
        once = mutilate(synthetic_graph, {"B", "E"})
        assert mutilate(once, {"B", "E"}) == once

    def test_context_node_cannot_be_cut(self, synthetic_graph):
        with pytest.raises(NonManipulativeCut) as excinfo:
            mutilate(synthetic_graph, {"C", "D"})
        assert excinfo.value.nodes == ("C",)


class TestEnumerateMis:
    def test_toy(self, toy_graph):
        assert enumerate_mis(toy_graph) == [(), ("X",), ("Z",)]

    def test_synthetic(self, synthetic):
        assert enumerate_mis(synthetic.graph) == [
            (), ("B",), ("D",), ("E",), ("B", "D"), ("B", "E"), ("D", "E"),
        ]

    def test_healthcare(self, healthcare):
        assert enumerate_mis(healthcare.graph) == [(), ("aspirin",), ("statin",), ("aspirin", "statin")]

    def test_max_size(self, synthetic):
        assert enumerate_mis(synthetic.graph, max_size=1) == [(), ("B",), ("D",), ("E",)]

    @pytest.mark.parametrize("name", ["toy", "synthetic", "healthcare", "frontdoor", "ecology"])
    def test_members_stay_ancestors_of_target(self, name):
        graph = scenario_service.get(name).graph
        sets = enumerate_mis(graph)
        assert sets[0] == ()
        for nodes in sets:
            assert set(nodes) <= ancestors(mutilate(graph, nodes), graph.target)

    def test_ecology_respects_bound(self):
        scenario = scenario_service.get("ecology")
        sets = enumerate_mis(scenario.graph, max_size=scenario.max_set_size)
        assert max(len(s) for s in sets) <= 3
        assert sets == sorted(sets, key=lambda s: (len(s), s))


class TestExplorationSet:
    def test_toy_pomis(self, toy):
        assert exploration_set(toy.graph, ExplorationSetKind.POMIS) == [("Z",)]

    def test_synthetic_pomis(self, synthetic):
        assert exploration_set(synthetic.graph, "pomis") == [
            (), ("B",), ("D",), ("E",), ("B", "D"), ("D", "E"),
        ]

    def test_synthetic_bo(self, synthetic):
        assert exploration_set(synthetic.graph, ExplorationSetKind.BO) == [("B", "D", "E")]

    @pytest.mark.parametrize("name", ["toy", "synthetic", "healthcare"])
    def test_pomis_within_mis(self, name):
        graph = scenario_service.get(name).graph
        assert set(exploration_set(graph, "pomis")) <= set(exploration_set(graph, "mis"))

    def test_unregistered_graph(self, toy_graph):
        with pytest.raises(PomisUnavailable):
            exploration_set(toy_graph, ExplorationSetKind.POMIS, registry=PomisRegistry())

    def test_custom_sets_are_normalized(self, synthetic_graph):
        sets = exploration_set(synthetic_graph, "custom", custom=[["E", "B"], ["D"], ["B", "E"], []])
        assert sets == [(), ("D",), ("B", "E")]

    def test_custom_rejects_context_nodes(self, synthetic_graph):
        with pytest.raises(NonManipulativeCut):
            exploration_set(synthetic_graph, "custom", custom=[["A"]])

    def test_custom_rejects_unknown_nodes(self, synthetic_graph):
        with pytest.raises(UnknownNode):
            exploration_set(synthetic_graph, "custom", custom=[["Q"]])


class TestCausalDimension:
    def test_toy(self, toy_graph):
        assert causal_dimension(toy_graph) == 1

    def test_long_chain(self):
        assert causal_dimension(chain_graph(199)) == 2

    def test_parentless_target(self):
        assert causal_dimension(CausalGraph.build(["X", "Y"], roles={"X": T, "Y": Y})) == 0


class TestParseGraph:
    def test_round_trip_of_bundled_text(self, synthetic):
        assert synthetic.graph.treatments == ("B", "D", "E")
        assert synthetic.graph.contexts == ("A", "C", "F")
        assert synthetic.graph.confounded_with("Y") == ("A", "B")

    def test_undeclared_node_reports_line(self):
        text = "node X treatment\nnode Y target\n\nedge X -> W\n"
        with pytest.raises(GraphParseError) as excinfo:
            parse_graph(text)
        assert excinfo.value.line == 4
        assert "line 4" in str(excinfo.value)

    def test_unknown_role(self):
        with pytest.raises(GraphParseError):
            parse_graph("node X knob\nnode Y target\n")

    def test_conflicting_roles(self):
        with pytest.raises(RoleConflict):
            parse_graph("node X treatment\nnode X context\nnode Y target\n")

    def test_comments_and_default_role(self):
        graph = parse_graph("# comment\nnode W   # context by default\nnode Y target\nedge W -> Y\n")
        assert graph.roles["W"] == NodeRole.CONTEXT
        assert graph.parents("Y") == ("W",)


def test_format_set():
    assert format_set(()) == "{}"
    assert format_set(("B", "D")) == "{B,D}"
