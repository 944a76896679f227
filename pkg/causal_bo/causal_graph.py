"""
因果グラフ - ADMG（有向辺 + 双方向辺）と介入集合の列挙
"""
import itertools
import logging
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx

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

logger = logging.getLogger(__name__)

InterventionSet = Tuple[str, ...]

_NODE_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def normalize_set(nodes: Iterable[str]) -> InterventionSet:
    """介入集合を辞書順のタプルに正規化"""
    return tuple(sorted(set(nodes)))


def format_set(nodes: Sequence[str]) -> str:
    if not nodes:
        return "{}"
    return "{" + ",".join(nodes) + "}"


@dataclass(frozen=True)
class CausalGraph:
    """ADMG: 有向辺は直接の因果、双方向辺は潜在交絡"""
    nodes: Tuple[str, ...]
    directed_edges: FrozenSet[Tuple[str, str]]
    bidirected_edges: FrozenSet[Tuple[str, str]]
    roles: Mapping[str, NodeRole] = field(hash=False)

    @classmethod
    def build(
        cls,
        nodes: Iterable[str],
        directed: Iterable[Tuple[str, str]] = (),
        bidirected: Iterable[Tuple[str, str]] = (),
        roles: Optional[Mapping[str, NodeRole]] = None,
    ) -> "CausalGraph":
        node_list = tuple(sorted(set(nodes)))
        role_map = {n: NodeRole.CONTEXT for n in node_list}
        for name, role in (roles or {}).items():
            role_map[name] = NodeRole(role)
        return cls(
            nodes=node_list,
            directed_edges=frozenset((a, b) for a, b in directed),
            bidirected_edges=frozenset(tuple(sorted((a, b))) for a, b in bidirected),
            roles=dict(role_map),
        )

    @cached_property
    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.directed_edges)
        return g

    @property
    def treatments(self) -> Tuple[str, ...]:
        return tuple(n for n in self.nodes if self.roles.get(n) == NodeRole.TREATMENT)

    @property
    def contexts(self) -> Tuple[str, ...]:
        return tuple(n for n in self.nodes if self.roles.get(n) == NodeRole.CONTEXT)

    @property
    def target(self) -> str:
        targets = [n for n in self.nodes if self.roles.get(n) == NodeRole.TARGET]
        if not targets:
            raise NoTarget("graph has no target node")
        if len(targets) > 1:
            raise MultipleTargets("graph has more than one target node", nodes=targets)
        return targets[0]

    def parents(self, node: str) -> Tuple[str, ...]:
        self._require(node)
        return tuple(sorted(self.digraph.predecessors(node)))

    def children(self, node: str) -> Tuple[str, ...]:
        self._require(node)
        return tuple(sorted(self.digraph.successors(node)))

    def descendants(self, node: str) -> Set[str]:
        self._require(node)
        return set(nx.descendants(self.digraph, node))

    def confounded_with(self, node: str) -> Tuple[str, ...]:
        """双方向辺で結ばれたノード"""
        self._require(node)
        out = {b if a == node else a for a, b in self.bidirected_edges if node in (a, b)}
        return tuple(sorted(out))

    def topological_order(self) -> List[str]:
        """辞書順で決定的なトポロジカル順序"""
        return list(nx.lexicographical_topological_sort(self.digraph))

    def fingerprint(self) -> Tuple:
        return (
            self.nodes,
            tuple(sorted(self.directed_edges)),
            tuple(sorted(self.bidirected_edges)),
            tuple(sorted((n, r.value) for n, r in self.roles.items())),
        )

    def _require(self, node: str) -> None:
        if node not in self.roles:
            raise UnknownNode(f"node {node!r} is not in the graph", nodes=[node])


def validate(graph: CausalGraph) -> None:
    """グラフの整合性チェック（違反があれば例外）"""
    node_set = set(graph.nodes)
    for name in graph.nodes:
        if not _NODE_NAME.match(name):
            raise GraphParseError(f"invalid node name {name!r}", nodes=[name])
    extra = sorted(set(graph.roles) - node_set)
    if extra:
        raise RoleConflict("roles assigned to nodes outside the graph", nodes=extra)
    for a, b in list(graph.directed_edges) + list(graph.bidirected_edges):
        missing = [n for n in (a, b) if n not in node_set]
        if missing:
            raise UnknownNode(f"edge {a} - {b} references an unknown node", nodes=missing)
    for a, b in graph.bidirected_edges:
        if a == b:
            raise CycleDetected("confounder edge must join two distinct nodes", nodes=[a])

    try:
        cycle = nx.find_cycle(graph.digraph)
    except nx.NetworkXNoCycle:
        cycle = []
    if cycle:
        members = sorted({u for u, _ in cycle})
        raise CycleDetected("directed cycle", nodes=members)

    # target がちょうど1つであることを確認
    _ = graph.target


def ancestors(graph: CausalGraph, node: str) -> Set[str]:
    """node の真の祖先集合"""
    graph._require(node)
    return set(nx.ancestors(graph.digraph, node))


def mutilate(graph: CausalGraph, cut: Iterable[str]) -> CausalGraph:
    """cut に入る有向辺と cut に接する双方向辺を取り除く"""
    cut_set = set(cut)
    for node in sorted(cut_set):
        graph._require(node)
    blocked = sorted(n for n in cut_set if graph.roles[n] != NodeRole.TREATMENT)
    if blocked:
        raise NonManipulativeCut("only treatment nodes can be intervened on", nodes=blocked)
    return replace(
        graph,
        directed_edges=frozenset((a, b) for a, b in graph.directed_edges if b not in cut_set),
        bidirected_edges=frozenset(e for e in graph.bidirected_edges if not (set(e) & cut_set)),
    )


def enumerate_mis(graph: CausalGraph, max_size: Optional[int] = None) -> List[InterventionSet]:
    """最小介入集合の列挙（サイズ順、同サイズは辞書順）"""
    target = graph.target
    treatments = sorted(graph.treatments)
    limit = len(treatments) if max_size is None else min(max_size, len(treatments))
    result: List[InterventionSet] = []
    for size in range(limit + 1):
        for combo in itertools.combinations(treatments, size):
            reach = ancestors(mutilate(graph, combo), target)
            if all(x in reach for x in combo):
                result.append(combo)
    logger.debug(f"MIS for target {target}: {[format_set(s) for s in result]}")
    return result


def causal_dimension(graph: CausalGraph) -> int:
    """目的変数の親の数"""
    return len(graph.parents(graph.target))


class PomisRegistry:
    """グラフごとに登録されたPOMIS一覧"""

    def __init__(self):
        self._entries: Dict[Tuple, List[InterventionSet]] = {}

    def register(self, graph: CausalGraph, sets: Iterable[Iterable[str]]) -> None:
        self._entries[graph.fingerprint()] = [normalize_set(s) for s in sets]

    def lookup(self, graph: CausalGraph) -> List[InterventionSet]:
        try:
            return list(self._entries[graph.fingerprint()])
        except KeyError:
            raise PomisUnavailable("no POMIS list registered for this graph") from None


pomis_registry = PomisRegistry()


def exploration_set(
    graph: CausalGraph,
    kind: ExplorationSetKind,
    custom: Optional[Iterable[Iterable[str]]] = None,
    registry: Optional[PomisRegistry] = None,
    max_size: Optional[int] = None,
) -> List[InterventionSet]:
    """探索集合を返す"""
    kind = ExplorationSetKind(kind)
    if kind == ExplorationSetKind.MIS:
        return enumerate_mis(graph, max_size=max_size)
    if kind == ExplorationSetKind.BO:
        return [normalize_set(graph.treatments)]
    if kind == ExplorationSetKind.POMIS:
        sets = (registry or pomis_registry).lookup(graph)
        if max_size is not None:
            sets = [s for s in sets if len(s) <= max_size]
        return sets

    sets = []
    for raw in custom or ():
        members = normalize_set(raw)
        for node in members:
            graph._require(node)
        blocked = [n for n in members if graph.roles[n] != NodeRole.TREATMENT]
        if blocked:
            raise NonManipulativeCut("custom set contains non-treatment nodes", nodes=blocked)
        if members not in sets:
            sets.append(members)
    return sorted(sets, key=lambda s: (len(s), s))


# ---- テキスト形式 -------------------------------------------------------

_NODE_LINE = re.compile(r"^node\s+(\S+)(?:\s+(\S+))?$")
_EDGE_LINE = re.compile(r"^edge\s+(\S+)\s*->\s*(\S+)$")
_CONF_LINE = re.compile(r"^confounder\s+(\S+)\s*<->\s*(\S+)$")


class GraphBuilder:
    """行単位でグラフ宣言を受け取り CausalGraph を組み立てる"""

    def __init__(self):
        self.roles: Dict[str, NodeRole] = {}
        self.directed: List[Tuple[str, str]] = []
        self.bidirected: List[Tuple[str, str]] = []

    def accepts(self, line: str) -> bool:
        return line.split(None, 1)[0] in ("node", "edge", "confounder")

    def feed(self, line: str, lineno: int) -> None:
        m = _NODE_LINE.match(line)
        if m:
            name, role_text = m.group(1), (m.group(2) or NodeRole.CONTEXT.value)
            if not _NODE_NAME.match(name):
                raise GraphParseError(f"invalid node name {name!r}", line=lineno)
            try:
                role = NodeRole(role_text.lower())
            except ValueError:
                raise GraphParseError(f"unknown role {role_text!r}", line=lineno) from None
            if name in self.roles and self.roles[name] != role:
                raise RoleConflict(f"node declared with two roles (line {lineno})", nodes=[name])
            self.roles[name] = role
            return

        for pattern, sink in ((_EDGE_LINE, self.directed), (_CONF_LINE, self.bidirected)):
            m = pattern.match(line)
            if m:
                a, b = m.group(1), m.group(2)
                for n in (a, b):
                    if n not in self.roles:
                        raise GraphParseError(f"edge references undeclared node {n!r}", line=lineno)
                sink.append((a, b))
                return
        raise GraphParseError(f"cannot parse {line!r}", line=lineno)

    def finish(self) -> CausalGraph:
        graph = CausalGraph.build(self.roles.keys(), self.directed, self.bidirected, self.roles)
        validate(graph)
        return graph


def strip_comment(raw: str) -> str:
    return raw.split("#", 1)[0].strip()


def parse_graph(text: str) -> CausalGraph:
    """テキストからグラフを読み込む"""
    builder = GraphBuilder()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = strip_comment(raw)
        if line:
            builder.feed(line, lineno)
    return builder.finish()
