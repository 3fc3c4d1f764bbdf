#!/usr/bin/env python3
"""
Directed-graph mathematics for the causal discovery layer.

Covers the matrix exponential, the acyclicity penalty h(A) = tr(e^{A*A}) - d
and its gradient, DAG checks, thresholding of learned weights, and the
TPR/FDR/SHD rubrics used to score a recovered graph against the truth.
Everything here is a pure function over numpy arrays.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from errors import CycleError, InvalidInputError

logger = logging.getLogger(__name__)

MAX_NODES = 64
SERIES_ORDER = 12
SCALED_NORM_LIMIT = 0.5
DEFAULT_TAU = 0.3


def _default_names(d):
    return [f"z{i}" for i in range(d)]


@dataclass
class WeightedDigraph:
    """Real adjacency matrix; weights[j, i] is the weight of edge j -> i"""

    weights: np.ndarray
    node_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.weights = _check_square(self.weights, "weights")
        if not self.node_names:
            self.node_names = _default_names(self.d)
        if len(self.node_names) != self.d:
            raise InvalidInputError(f"Expected {self.d} node names, got {len(self.node_names)}")
        if np.any(np.diag(self.weights) != 0.0):
            raise InvalidInputError("Self-loops are not allowed: diagonal of weights must be zero")

    @property
    def d(self):
        return self.weights.shape[0]

    def to_json(self):
        return {"nodes": list(self.node_names), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, data):
        try:
            return cls(np.asarray(data["weights"], dtype=float), list(data["nodes"]))
        except KeyError as e:
            raise InvalidInputError(f"Graph JSON is missing key {e}") from e


@dataclass
class BinaryGraph:
    """Boolean adjacency; edges[j, i] is True when j -> i is present"""

    edges: np.ndarray
    node_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        edges = np.asarray(self.edges)
        if edges.ndim != 2 or edges.shape[0] != edges.shape[1]:
            raise InvalidInputError(f"Adjacency must be square, got shape {edges.shape}")
        self.edges = edges.astype(bool)
        if not self.node_names:
            self.node_names = _default_names(self.d)
        if len(self.node_names) != self.d:
            raise InvalidInputError(f"Expected {self.d} node names, got {len(self.node_names)}")
        if np.any(np.diag(self.edges)):
            raise InvalidInputError("Self-loops are not allowed in a BinaryGraph")

    @property
    def d(self):
        return self.edges.shape[0]

    @property
    def n_edges(self):
        return int(self.edges.sum())

    def edge_list(self):
        return [(int(j), int(i)) for j, i in zip(*np.nonzero(self.edges))]

    def parents(self, i):
        return [int(j) for j in np.nonzero(self.edges[:, i])[0]]

    def roots(self):
        return [i for i in range(self.d) if not self.edges[:, i].any()]

    def to_json(self):
        return {"nodes": list(self.node_names), "weights": self.edges.astype(int).tolist()}

    @classmethod
    def from_json(cls, data):
        try:
            return cls(np.asarray(data["weights"]) != 0, list(data["nodes"]))
        except KeyError as e:
            raise InvalidInputError(f"Graph JSON is missing key {e}") from e

    @classmethod
    def from_edges(cls, d, edges, node_names=None):
        adj = np.zeros((d, d), dtype=bool)
        for j, i in edges:
            adj[j, i] = True
        return cls(adj, list(node_names or []))

    def __eq__(self, other):
        if not isinstance(other, BinaryGraph):
            return NotImplemented
        return self.d == other.d and bool(np.array_equal(self.edges, other.edges))

    def __hash__(self):
        return hash(self.edges.tobytes())


@dataclass(frozen=True)
class GraphRubrics:
    tpr: float
    fdr: float
    shd: int

    def as_dict(self):
        return {"tpr": self.tpr, "fdr": self.fdr, "shd": self.shd}


def _check_square(M, what="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{what} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{what} contains non-finite entries")
    return M


def _weights_of(A):
    if isinstance(A, WeightedDigraph):
        return A.weights
    return _check_square(A, "adjacency")


def matrix_exponential(M):
    """e^M by scaling and squaring around a truncated Taylor series"""
    M = _check_square(M)
    d = M.shape[0]
    if d > MAX_NODES:
        raise InvalidInputError(f"Matrix exponential limited to d <= {MAX_NODES}, got {d}")
    if d == 0:
        return np.zeros((0, 0))

    norm = np.abs(M).sum(axis=0).max()
    squarings = 0
    if norm > SCALED_NORM_LIMIT:
        squarings = int(math.ceil(math.log2(norm / SCALED_NORM_LIMIT)))
    scaled = M / (2.0 ** squarings)

    result = np.eye(d)
    term = np.eye(d)
    for j in range(1, SERIES_ORDER + 1):
        term = term @ scaled / j
        result = result + term

    for _ in range(squarings):
        result = result @ result
    return result


def acyclicity_penalty(A):
    """h(A) = tr(e^{A*A}) - d; zero exactly when the support of A is a DAG"""
    W = _weights_of(A)
    E = matrix_exponential(W * W)
    return float(np.trace(E) - W.shape[0])


def acyclicity_gradient(A):
    """Gradient of h(A): (e^{A*A})^T * 2A"""
    W = _weights_of(A)
    E = matrix_exponential(W * W)
    return E.T * (2.0 * W)


def find_cycle(G: BinaryGraph) -> Optional[List[int]]:
    """One directed cycle as a node list, or None for a DAG"""
    WHITE, GREY, BLACK = 0, 1, 2
    color = [WHITE] * G.d
    parent = [-1] * G.d

    for start in range(G.d):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(np.nonzero(G.edges[start])[0]))]
        color[start] = GREY
        while stack:
            node, children = stack[-1]
            advanced = False
            for child in children:
                child = int(child)
                if color[child] == WHITE:
                    parent[child] = node
                    color[child] = GREY
                    stack.append((child, iter(np.nonzero(G.edges[child])[0])))
                    advanced = True
                    break
                if color[child] == GREY:
                    cycle = [node]
                    while cycle[-1] != child:
                        cycle.append(parent[cycle[-1]])
                    return cycle[::-1]
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def is_dag(G: BinaryGraph) -> bool:
    return find_cycle(G) is None


def topological_order(G: BinaryGraph) -> List[int]:
    """Kahn's algorithm, lowest index first among ready nodes"""
    indegree = G.edges.sum(axis=0).astype(int)
    ready = [i for i in range(G.d) if indegree[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for child in np.nonzero(G.edges[node])[0]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, int(child))
    if len(order) != G.d:
        raise CycleError(find_cycle(G), G.node_names)
    return order


def binarize(A, tau=DEFAULT_TAU) -> BinaryGraph:
    if not tau > 0:
        raise InvalidInputError(f"Threshold tau must be positive, got {tau}")
    W = _weights_of(A)
    edges = np.abs(W) >= tau
    np.fill_diagonal(edges, False)
    names = A.node_names if isinstance(A, WeightedDigraph) else []
    return BinaryGraph(edges, list(names))


def _pair_state(edges, i, j):
    return (bool(edges[i, j]), bool(edges[j, i]))


def graph_rubrics(pred: BinaryGraph, truth: BinaryGraph) -> GraphRubrics:
    """TPR, FDR and SHD of a predicted graph; a reversal costs one edit"""
    if pred.d != truth.d:
        raise InvalidInputError(f"Graphs differ in size: {pred.d} vs {truth.d}")

    n_true = truth.n_edges
    n_pred = pred.n_edges
    correct = int(np.logical_and(pred.edges, truth.edges).sum())
    tpr = correct / n_true if n_true else 1.0
    fdr = (n_pred - correct) / max(1, n_pred)

    shd = 0
    for i in range(truth.d):
        for j in range(i + 1, truth.d):
            p = _pair_state(pred.edges, i, j)
            t = _pair_state(truth.edges, i, j)
            if p == t:
                continue
            # both directions vs nothing needs two edits, every other mismatch one
            if {p, t} == {(True, True), (False, False)}:
                shd += 2
            else:
                shd += 1
    return GraphRubrics(float(tpr), float(fdr), shd)


def permute(A: WeightedDigraph, order: Sequence[int], node_names=None) -> WeightedDigraph:
    """Reindex a weighted graph so that new node k is old node order[k]"""
    idx = np.asarray(order, dtype=int)
    W = A.weights[np.ix_(idx, idx)]
    return WeightedDigraph(W.copy(), list(node_names or [A.node_names[k] for k in idx]))
