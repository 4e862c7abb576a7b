"""Pipeline network graph, refinement into lumped segments, and incidence matrices.

Nodes are either supply (slack) nodes with prescribed constituent densities or
withdrawal nodes with prescribed outgoing mass flux.  Supply nodes come first
in the node ordering.  Every edge carries an optional inlet compressor ratio and
an optional outlet regulator ratio; slots without an actuator are fixed to 1.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import yaml

KM = 1000.0

SUPPLY = "supply"
WITHDRAWAL = "withdrawal"
INLET = "inlet"
OUTLET = "outlet"


class NetworkError(ValueError):
    """Raised for malformed network documents or graphs."""


@dataclass(frozen=True)
class GasConstituent:
    name: str
    sound_speed: float

    def __post_init__(self):
        if not self.sound_speed > 0:
            raise NetworkError(f"sound speed of {self.name!r} must be positive")


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    position: tuple[float, float] | None = None
    parent: int | None = None  # original node id; None for auxiliary nodes

    @property
    def is_supply(self) -> bool:
        return self.kind == SUPPLY


@dataclass(frozen=True)
class Edge:
    id: int
    source: int
    target: int
    length: float  # m
    diameter: float  # m
    friction: float

    @property
    def area(self) -> float:
        return 0.25 * math.pi * self.diameter**2


@dataclass(frozen=True)
class Actuator:
    """A compressor (inlet) or regulator (outlet) on one edge.

    ``segment`` selects which refined segment of the parent edge receives the
    actuator: ``"first"`` or ``"last"``.  By default an inlet compressor goes on
    the first segment and an outlet regulator on the last one.
    """

    id: int
    edge: int
    position: str
    min_ratio: float = 1.0
    max_ratio: float = 2.0
    segment: str | None = None
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or f"a{self.id}"

    @property
    def is_compressor(self) -> bool:
        return self.position == INLET


@dataclass(frozen=True)
class EdgeArrays:
    """Flat per-edge index and coefficient arrays used by the numeric kernels."""

    tail: np.ndarray  # index into supply vector if tail_supply else withdrawal vector
    head: np.ndarray  # index into withdrawal vector
    tail_supply: np.ndarray  # int8 flag
    length: np.ndarray
    diameter: np.ndarray
    friction: np.ndarray
    kfric: np.ndarray  # lambda_k / (2 D_k)
    lk: np.ndarray  # l_k lambda_k / (2 D_k)


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    actuators: tuple[Actuator, ...] = ()

    def __post_init__(self):
        _validate(self)

    # -- basic lookups -----------------------------------------------------
    @cached_property
    def node_index(self) -> dict[int, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def edge_index(self) -> dict[int, int]:
        return {e.id: k for k, e in enumerate(self.edges)}

    @property
    def supply_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.is_supply)

    @property
    def withdrawal_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if not n.is_supply)

    @property
    def num_supply(self) -> int:
        return len(self.supply_nodes)

    @property
    def num_withdrawal(self) -> int:
        return len(self.nodes) - self.num_supply

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    @cached_property
    def arrays(self) -> EdgeArrays:
        r = self.num_supply
        idx = self.node_index
        tail = np.empty(len(self.edges), dtype=np.intp)
        head = np.empty(len(self.edges), dtype=np.intp)
        tail_supply = np.zeros(len(self.edges), dtype=np.int8)
        for k, e in enumerate(self.edges):
            i, j = idx[e.source], idx[e.target]
            if i < r:
                tail[k] = i
                tail_supply[k] = 1
            else:
                tail[k] = i - r
            head[k] = j - r
        length = np.array([e.length for e in self.edges])
        diameter = np.array([e.diameter for e in self.edges])
        friction = np.array([e.friction for e in self.edges])
        kfric = friction / (2.0 * diameter)
        return EdgeArrays(tail, head, tail_supply, length, diameter, friction, kfric, length * kfric)

    def actuator_edges(self) -> np.ndarray:
        """Edge index that each actuator acts on."""
        return np.array([self.edge_index[a.edge] for a in self.actuators], dtype=np.intp)

    def ratio_vectors(self, values=None) -> tuple[np.ndarray, np.ndarray]:
        """Expand actuator ratios into per-edge ``(mu_in, mu_out)``.

        ``values`` has one entry per actuator, or shape ``(B, A)`` for a batch.
        Non-actuated slots are 1.
        """
        E, A = len(self.edges), len(self.actuators)
        if values is None:
            values = np.ones(A)
        values = np.asarray(values, dtype=float)
        batch = values.ndim == 2
        vals = values if batch else values[None, :]
        if vals.shape[1] != A:
            raise ValueError(f"expected {A} actuator ratios, got {vals.shape[1]}")
        if np.any(vals < 1.0):
            raise ValueError("actuator ratios must be >= 1")
        mu_in = np.ones((vals.shape[0], E))
        mu_out = np.ones((vals.shape[0], E))
        for a, act in enumerate(self.actuators):
            k = self.edge_index[act.edge]
            target = mu_in if act.is_compressor else mu_out
            target[:, k] = vals[:, a]
        if batch:
            return mu_in, mu_out
        return mu_in[0], mu_out[0]

    @cached_property
    def _incidence_structure(self) -> "_IncidenceStructure":
        return _IncidenceStructure(self)


@dataclass(frozen=True)
class RefinedNetwork(Network):
    parent_edge: dict[int, int] = field(default_factory=dict)
    segment_length_cap: float = math.inf


def _validate(net: Network) -> None:
    if not net.nodes:
        raise NetworkError("network has no nodes")
    node_ids = [n.id for n in net.nodes]
    if len(set(node_ids)) != len(node_ids):
        raise NetworkError("duplicate node id")
    edge_ids = [e.id for e in net.edges]
    if len(set(edge_ids)) != len(edge_ids):
        raise NetworkError("duplicate edge id")
    if node_ids != sorted(node_ids) or edge_ids != sorted(edge_ids):
        raise NetworkError("nodes and edges must be ordered by integer label")
    seen_withdrawal = False
    for n in net.nodes:
        if n.kind not in (SUPPLY, WITHDRAWAL):
            raise NetworkError(f"node {n.id}: unknown kind {n.kind!r}")
        if n.is_supply and seen_withdrawal:
            raise NetworkError(f"supply node {n.id} listed after a withdrawal node")
        seen_withdrawal |= not n.is_supply
    kinds = {n.id: n.kind for n in net.nodes}
    incoming = {n.id: 0 for n in net.nodes}
    for e in net.edges:
        for end in (e.source, e.target):
            if end not in kinds:
                raise NetworkError(f"edge {e.id} references unknown node {end}")
        if e.source == e.target:
            raise NetworkError(f"edge {e.id} is a self loop")
        if not (e.length > 0 and e.diameter > 0 and e.friction > 0):
            raise NetworkError(f"edge {e.id}: nonpositive physical parameter")
        if kinds[e.target] == SUPPLY:
            raise NetworkError(f"edge {e.id} enters supply node {e.target}")
        incoming[e.target] += 1
    for n in net.nodes:
        if not n.is_supply and incoming[n.id] == 0:
            raise NetworkError(f"withdrawal node {n.id} has no incoming edge")
    if not any(n.is_supply for n in net.nodes):
        raise NetworkError("network needs at least one supply node")
    _check_connected(net)
    edge_set = set(edge_ids)
    act_ids = [a.id for a in net.actuators]
    if len(set(act_ids)) != len(act_ids):
        raise NetworkError("duplicate actuator id")
    slots = set()
    for a in net.actuators:
        if a.edge not in edge_set:
            raise NetworkError(f"actuator {a.id} references unknown edge {a.edge}")
        if a.position not in (INLET, OUTLET):
            raise NetworkError(f"actuator {a.id}: position must be inlet or outlet")
        if a.segment not in (None, "first", "last"):
            raise NetworkError(f"actuator {a.id}: segment must be first or last")
        if not 1.0 <= a.min_ratio <= a.max_ratio:
            raise NetworkError(f"actuator {a.id}: need 1 <= min_ratio <= max_ratio")
        if (a.edge, a.position, a.segment) in slots:
            raise NetworkError(f"actuator {a.id}: slot already occupied")
        slots.add((a.edge, a.position, a.segment))


def _check_connected(net: Network) -> None:
    adj: dict[int, list[int]] = {n.id: [] for n in net.nodes}
    for e in net.edges:
        adj[e.source].append(e.target)
        adj[e.target].append(e.source)
    start = net.nodes[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(net.nodes):
        raise NetworkError("network graph is disconnected")


# -- document I/O ------------------------------------------------------------


def parse_network(document: dict | str) -> Network:
    """Build a :class:`Network` from a parsed document (or YAML text).

    Lengths in the document are kilometres and are converted to metres.
    """
    if isinstance(document, str):
        document = yaml.safe_load(document)
    if not isinstance(document, dict):
        raise NetworkError("network document must be a mapping")
    try:
        nodes = tuple(
            Node(
                id=int(n["id"]),
                kind=str(n["kind"]),
                position=tuple(n["position"]) if n.get("position") is not None else None,
                parent=int(n["parent"]) if n.get("parent") is not None else None,
            )
            for n in document["nodes"]
        )
        edges = tuple(
            Edge(
                id=int(e["id"]),
                source=int(e["from"]),
                target=int(e["to"]),
                length=float(e["length_km"]) * KM,
                diameter=float(e["diameter_m"]),
                friction=float(e["friction"]),
            )
            for e in document["edges"]
        )
        actuators = tuple(
            Actuator(
                id=int(a.get("id", i + 1)),
                edge=int(a["edge"]),
                position=str(a["position"]),
                min_ratio=float(a.get("min_ratio", 1.0)),
                max_ratio=float(a.get("max_ratio", 2.0)),
                segment=a.get("segment"),
                name=a.get("name"),
            )
            for i, a in enumerate(document.get("actuators") or [])
        )
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from exc
    parents = document.get("parent_edge")
    if parents:
        return RefinedNetwork(
            nodes,
            edges,
            actuators,
            parent_edge={int(k): int(v) for k, v in parents.items()},
            segment_length_cap=float(document.get("segment_cap_km", math.inf)) * KM,
        )
    return Network(nodes, edges, actuators)


def load_network(path) -> Network:
    with open(path) as fh:
        return parse_network(yaml.safe_load(fh))


def network_document(net: Network) -> dict:
    doc = {
        "nodes": [
            {k: v for k, v in (("id", n.id), ("kind", n.kind), ("parent", n.parent)) if v is not None}
            for n in net.nodes
        ],
        "edges": [
            {
                "id": e.id,
                "from": e.source,
                "to": e.target,
                "length_km": e.length / KM,
                "diameter_m": e.diameter,
                "friction": e.friction,
            }
            for e in net.edges
        ],
        "actuators": [
            {
                k: v
                for k, v in (
                    ("id", a.id),
                    ("name", a.name),
                    ("edge", a.edge),
                    ("position", a.position),
                    ("segment", a.segment),
                    ("min_ratio", a.min_ratio),
                    ("max_ratio", a.max_ratio),
                )
                if v is not None
            }
            for a in net.actuators
        ],
    }
    if isinstance(net, RefinedNetwork):
        doc["parent_edge"] = dict(net.parent_edge)
        doc["segment_cap_km"] = net.segment_length_cap / KM
    return doc


def save_network(net: Network, path) -> None:
    Path(path).write_text(yaml.safe_dump(network_document(net), sort_keys=False))


# -- refinement --------------------------------------------------------------


def _num_segments(length: float, cap: float) -> int:
    return max(1, math.ceil(length / cap * (1.0 - 1e-12)))


def refine(net: Network, cap: float) -> RefinedNetwork:
    """Split each edge into ``ceil(length / cap)`` equal segments.

    Original nodes keep their ids; auxiliary nodes get ids after the largest
    original id, numbered along each parent edge in edge order.  Auxiliary
    nodes are withdrawal nodes (their withdrawal is identically zero).
    """
    if not cap > 0:
        raise ValueError("segment length cap must be positive")
    root_parent = getattr(net, "parent_edge", None) or {}
    next_node = max(n.id for n in net.nodes) + 1
    nodes = [Node(n.id, n.kind, n.position, n.parent if n.parent is not None else n.id) for n in net.nodes]
    edges: list[Edge] = []
    parent_edge: dict[int, int] = {}
    first_seg: dict[int, int] = {}
    last_seg: dict[int, int] = {}
    for e in net.edges:
        nseg = _num_segments(e.length, cap)
        chain = [e.source]
        for _ in range(nseg - 1):
            nodes.append(Node(next_node, WITHDRAWAL))
            chain.append(next_node)
            next_node += 1
        chain.append(e.target)
        for s in range(nseg):
            eid = len(edges) + 1
            edges.append(Edge(eid, chain[s], chain[s + 1], e.length / nseg, e.diameter, e.friction))
            parent_edge[eid] = root_parent.get(e.id, e.id)
            if s == 0:
                first_seg[e.id] = eid
            last_seg[e.id] = eid
    actuators = []
    for a in net.actuators:
        seg = a.segment or ("first" if a.is_compressor else "last")
        target = first_seg[a.edge] if seg == "first" else last_seg[a.edge]
        actuators.append(
            Actuator(a.id, target, a.position, a.min_ratio, a.max_ratio, None, a.name)
        )
    return RefinedNetwork(
        tuple(sorted(nodes, key=lambda n: n.id)),
        tuple(edges),
        tuple(actuators),
        parent_edge=parent_edge,
        segment_length_cap=float(cap),
    )


# -- incidence matrices ------------------------------------------------------


@dataclass(frozen=True)
class IncidenceSet:
    """Signed ratio matrix ``M`` and the derived sub/part/sign matrices.

    ``M_bar_w`` holds the regulator (positive) entries of ``M_w`` and
    ``M_under_w`` the compressor (negative) entries, so ``M_w = M_bar_w +
    M_under_w`` and ``|M_w| = M_bar_w - M_under_w``.
    """

    M: sp.csr_matrix
    M_s: sp.csr_matrix
    M_w: sp.csr_matrix
    M_bar_w: sp.csr_matrix
    M_under_w: sp.csr_matrix
    Q_w: sp.csr_matrix
    Q_bar_w: sp.csr_matrix
    Q_under_w: sp.csr_matrix
    Q_s: sp.csr_matrix
    Q_under_s: sp.csr_matrix
    L: sp.dia_matrix
    K: sp.dia_matrix

    def mass_matrix(self) -> sp.csr_matrix:
        """``Q_bar_w^T L M_bar_w``; diagonal whenever heads are withdrawal nodes."""
        return (self.Q_bar_w.T @ self.L @ self.M_bar_w).tocsr()


class _IncidenceStructure:
    """Cached sparsity pattern of ``M``: one tail and one head entry per edge."""

    def __init__(self, net: Network):
        idx = net.node_index
        E, V, r = len(net.edges), len(net.nodes), net.num_supply
        self.shape = (E, V)
        self.r = r
        rows = np.repeat(np.arange(E), 2)
        cols = np.empty(2 * E, dtype=np.intp)
        for k, e in enumerate(net.edges):
            cols[2 * k] = idx[e.source]
            cols[2 * k + 1] = idx[e.target]
        self.rows, self.cols = rows, cols
        self.sign = np.tile([-1.0, 1.0], E)
        self.length = np.array([e.length for e in net.edges])
        self.kfric = np.array([e.friction / (2 * e.diameter) for e in net.edges])

    def matrix(self, vals: np.ndarray, cols: slice | None = None) -> sp.csr_matrix:
        m = sp.csr_matrix((vals, (self.rows, self.cols)), shape=self.shape)
        return m if cols is None else m[:, cols].tocsr()


def incidence(net: Network, ratios=None) -> IncidenceSet:
    """Assemble the incidence set for actuator ``ratios`` (default all 1)."""
    mu_in, mu_out = net.ratio_vectors(ratios)
    st = net._incidence_structure
    E = st.shape[0]
    vals = np.empty(2 * E)
    vals[0::2] = -mu_in
    vals[1::2] = mu_out
    sup, wd = slice(0, st.r), slice(st.r, None)
    neg = np.where(st.sign < 0, vals, 0.0)
    pos = np.where(st.sign > 0, vals, 0.0)
    M = st.matrix(vals)
    return IncidenceSet(
        M=M,
        M_s=st.matrix(vals, sup),
        M_w=st.matrix(vals, wd),
        M_bar_w=st.matrix(pos, wd),
        M_under_w=st.matrix(neg, wd),
        Q_w=st.matrix(st.sign, wd),
        Q_bar_w=st.matrix(np.where(st.sign > 0, 1.0, 0.0), wd),
        Q_under_w=st.matrix(np.where(st.sign < 0, -1.0, 0.0), wd),
        Q_s=st.matrix(st.sign, sup),
        Q_under_s=st.matrix(np.where(st.sign < 0, -1.0, 0.0), sup),
        L=sp.diags(st.length),
        K=sp.diags(st.kfric),
    )
