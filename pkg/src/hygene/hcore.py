"""Hypergraph and bipartite data model, conversions and Laplacians."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class InvalidGraphError(ValueError):
    """Raised when a graph violates a structural precondition."""


@dataclass(frozen=True)
class Hypergraph:
    """Node count plus an ordered list of hyperedges.

    Each hyperedge is stored as a sorted tuple of distinct node indices.
    Duplicate hyperedges are allowed.
    """

    num_nodes: int
    hyperedges: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        if self.num_nodes < 0:
            raise InvalidGraphError("num_nodes must be non-negative")
        edges = []
        for e in self.hyperedges:
            members = tuple(sorted(set(int(v) for v in e)))
            if not members:
                raise InvalidGraphError("hyperedges must be non-empty")
            if members[0] < 0 or members[-1] >= self.num_nodes:
                raise InvalidGraphError(f"hyperedge {members} out of range for {self.num_nodes} nodes")
            edges.append(members)
        object.__setattr__(self, "hyperedges", tuple(edges))

    @property
    def num_edges(self) -> int:
        return len(self.hyperedges)

    def incidence_matrix(self) -> np.ndarray:
        H = np.zeros((self.num_nodes, self.num_edges))
        for j, e in enumerate(self.hyperedges):
            H[list(e), j] = 1.0
        return H

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=int)
        for e in self.hyperedges:
            deg[list(e)] += 1
        return deg

    def edge_sizes(self) -> np.ndarray:
        return np.array([len(e) for e in self.hyperedges], dtype=int)

    def canonical(self) -> Hypergraph:
        """Same hypergraph with hyperedges sorted lexicographically."""
        return Hypergraph(self.num_nodes, tuple(sorted(self.hyperedges)))

    def relabel(self, perm: Sequence[int]) -> Hypergraph:
        """Rename node ``i`` to ``perm[i]``."""
        return Hypergraph(self.num_nodes, tuple(tuple(perm[v] for v in e) for e in self.hyperedges))

    def to_dict(self) -> dict:
        c = self.canonical()
        return {"n": c.num_nodes, "edges": [list(e) for e in c.hyperedges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> Hypergraph:
        return cls(int(d["n"]), tuple(tuple(e) for e in d["edges"]))

    @classmethod
    def from_json(cls, line: str) -> Hypergraph:
        return cls.from_dict(json.loads(line))


@dataclass(frozen=True)
class BipartiteGraph:
    """Bipartite graph with ``n_left`` left nodes and ``n_right`` right nodes.

    ``edges`` holds unique (left, right) pairs sorted ascending; that order
    is the canonical edge order used by edge selections and edge features.
    """

    n_left: int
    n_right: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.n_left < 0 or self.n_right < 0:
            raise InvalidGraphError("side sizes must be non-negative")
        pairs = sorted({(int(a), int(b)) for a, b in self.edges})
        if len(pairs) != len(self.edges):
            raise InvalidGraphError("duplicate edge pairs")
        for a, b in pairs:
            if not (0 <= a < self.n_left and 0 <= b < self.n_right):
                raise InvalidGraphError(f"edge {(a, b)} out of range")
        object.__setattr__(self, "edges", tuple(pairs))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_nodes(self) -> int:
        return self.n_left + self.n_right

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Edges as an integer array of shape (m, 2)."""
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    def biadjacency(self) -> np.ndarray:
        M = np.zeros((self.n_left, self.n_right))
        if self.edges:
            M[self.edge_array[:, 0], self.edge_array[:, 1]] = 1.0
        return M

    def adjacency(self) -> np.ndarray:
        n = self.num_nodes
        A = np.zeros((n, n))
        M = self.biadjacency()
        A[: self.n_left, self.n_left :] = M
        A[self.n_left :, : self.n_left] = M.T
        return A

    def left_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_array[:, 0], minlength=self.n_left)

    def right_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_array[:, 1], minlength=self.n_right)

    def right_neighborhoods(self) -> list[frozenset[int]]:
        nbrs: list[set[int]] = [set() for _ in range(self.n_right)]
        for a, b in self.edges:
            nbrs[b].add(a)
        return [frozenset(s) for s in nbrs]

    def relabel(self, left_perm: Sequence[int], right_perm: Sequence[int]) -> BipartiteGraph:
        """Rename left ``i`` to ``left_perm[i]`` and right ``j`` to ``right_perm[j]``."""
        return BipartiteGraph(
            self.n_left, self.n_right, tuple((left_perm[a], right_perm[b]) for a, b in self.edges)
        )

    def to_dict(self) -> dict:
        return {"n_left": self.n_left, "n_right": self.n_right, "edges": [list(e) for e in self.edges]}


def minimal_bipartite() -> BipartiteGraph:
    """One left node linked to one right node."""
    return BipartiteGraph(1, 1, ((0, 0),))


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted graph without self-loops.

    Keys of ``weights`` are pairs ``(u, v)`` with ``u < v``.
    """

    num_nodes: int
    weights: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean: dict[tuple[int, int], float] = {}
        for (u, v), w in self.weights.items():
            if u == v:
                raise InvalidGraphError("self-loops are not allowed")
            if w <= 0:
                raise InvalidGraphError("edge weights must be strictly positive")
            a, b = (u, v) if u < v else (v, u)
            if not (0 <= a and b < self.num_nodes):
                raise InvalidGraphError(f"edge {(u, v)} out of range")
            clean[(a, b)] = clean.get((a, b), 0.0) + float(w)
        object.__setattr__(self, "weights", clean)

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.weights)

    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.num_nodes, self.num_nodes))
        for (u, v), w in self.weights.items():
            W[u, v] = W[v, u] = w
        return W

    def laplacian(self) -> np.ndarray:
        W = self.adjacency()
        return np.diag(W.sum(axis=1)) - W


def star_expansion(h: Hypergraph) -> BipartiteGraph:
    return BipartiteGraph(
        h.num_nodes, h.num_edges, tuple((v, j) for j, e in enumerate(h.hyperedges) for v in e)
    )


def clique_expansion(h: Hypergraph) -> WeightedGraph:
    """Clique expansion where pair {u, v} weighs the sum of 1/|e| over hyperedges holding both."""
    weights: dict[tuple[int, int], float] = {}
    for e in h.hyperedges:
        w = 1.0 / len(e)
        for i, u in enumerate(e):
            for v in e[i + 1 :]:
                weights[(u, v)] = weights.get((u, v), 0.0) + w
    return WeightedGraph(h.num_nodes, weights)


def from_bipartite(b: BipartiteGraph) -> Hypergraph:
    """Collapse right nodes into hyperedges, discarding isolated nodes and empty hyperedges.

    Surviving left nodes are re-indexed densely in ascending original order.
    """
    nbrs: list[list[int]] = [[] for _ in range(b.n_right)]
    for a, r in b.edges:
        nbrs[r].append(a)
    used = sorted({a for a, _ in b.edges})
    remap = {a: i for i, a in enumerate(used)}
    edges = tuple(tuple(remap[a] for a in members) for members in nbrs if members)
    return Hypergraph(len(used), edges)


def bolla_laplacian(h: Hypergraph) -> np.ndarray:
    """D_V - H D_E^{-1} H^T."""
    H = h.incidence_matrix()
    sizes = H.sum(axis=0)
    if np.any(sizes == 0):
        raise InvalidGraphError("empty hyperedge")
    return np.diag(H.sum(axis=1)) - (H / sizes) @ H.T


def zhou_laplacian(h: Hypergraph) -> np.ndarray:
    """I - D_V^{-1/2} H D_E^{-1} H^T D_V^{-1/2}; requires every node to be covered."""
    H = h.incidence_matrix()
    deg = H.sum(axis=1)
    if np.any(deg == 0):
        raise InvalidGraphError("isolated node: Zhou Laplacian undefined")
    dinv = 1.0 / np.sqrt(deg)
    M = dinv[:, None] * H / np.sqrt(H.sum(axis=0))
    L = np.eye(h.num_nodes) - M @ M.T
    return (L + L.T) / 2


def bipartite_normalized_laplacian(b: BipartiteGraph, allow_isolated: bool = False) -> np.ndarray:
    """I - D^{-1/2} A D^{-1/2} on the n_left + n_right node graph.

    With ``allow_isolated`` an isolated node gets an identity row instead of
    an error (used when embedding half-built graphs during sampling).
    """
    A = b.adjacency()
    deg = A.sum(axis=1)
    isolated = deg == 0
    if np.any(isolated) and not allow_isolated:
        raise InvalidGraphError("isolated node: normalized Laplacian undefined")
    dinv = np.zeros_like(deg)
    dinv[~isolated] = 1.0 / np.sqrt(deg[~isolated])
    return np.eye(b.num_nodes) - dinv[:, None] * A * dinv[None, :]


def connected_components(num_nodes: int, pairs: Iterable[tuple[int, int]]) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(num_nodes)]
    for u, v in pairs:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * num_nodes
    comps = []
    for s in range(num_nodes):
        if seen[s]:
            continue
        seen[s] = True
        comp, queue = [], deque([s])
        while queue:
            u = queue.popleft()
            comp.append(u)
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    queue.append(w)
        comps.append(sorted(comp))
    return comps


def is_connected(b: BipartiteGraph) -> bool:
    if b.num_nodes <= 1:
        return True
    pairs = ((a, b.n_left + r) for a, r in b.edges)
    return len(connected_components(b.num_nodes, pairs)) == 1


def hypergraph_is_connected(h: Hypergraph) -> bool:
    return is_connected(star_expansion(h))


def read_jsonl(path) -> list[Hypergraph]:
    with open(path) as fh:
        return [Hypergraph.from_json(line) for line in fh if line.strip()]


def write_jsonl(path, graphs: Iterable[Hypergraph]) -> None:
    with open(path, "w") as fh:
        for h in graphs:
            fh.write(h.to_json() + "\n")
