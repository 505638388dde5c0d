"""Spectrum-preserving coarsening of hypergraphs in their bipartite and clique views."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hcore import (
    BipartiteGraph,
    Hypergraph,
    InvalidGraphError,
    WeightedGraph,
    clique_expansion,
    hypergraph_is_connected,
    star_expansion,
)

MAX_RIGHT_CLUSTER = 3
SMALL_GRAPH_NODES = 16


class CoarseningError(RuntimeError):
    """Raised when a level cannot be reduced at all."""

    def __init__(self, message: str, graph: BipartiteGraph | None = None):
        super().__init__(message)
        self.graph = graph


@dataclass(frozen=True)
class ContractionPair:
    u: int
    v: int
    cost: float


@dataclass(frozen=True)
class CoarseningStep:
    """Partitions mapping a fine level onto the next coarser one.

    ``left_partition[p]`` lists the fine left nodes merged into coarse left
    node ``p``; ``right_partition`` does the same for right nodes.
    """

    left_partition: tuple[tuple[int, ...], ...]
    right_partition: tuple[tuple[int, ...], ...]
    coarse_bipartite: BipartiteGraph
    coarse_clique: WeightedGraph

    @property
    def max_right_cluster(self) -> int:
        return max((len(p) for p in self.right_partition), default=0)

    def to_dict(self) -> dict:
        return {
            "left_partition": [list(p) for p in self.left_partition],
            "right_partition": [list(p) for p in self.right_partition],
        }


@dataclass
class CoarseningSequence:
    """Levels ``graphs[0]`` (the input) to ``graphs[-1]`` (a single linked pair).

    ``steps[l]`` coarsens ``graphs[l]`` into ``graphs[l + 1]``.
    """

    graphs: list[BipartiteGraph]
    cliques: list[WeightedGraph]
    steps: list[CoarseningStep] = field(default_factory=list)
    reduction_fractions: list[float] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def max_right_cluster(self) -> int:
        return max((s.max_right_cluster for s in self.steps), default=1)


def local_variation_costs(c: WeightedGraph, k: int = 8) -> list[ContractionPair]:
    """Local variation cost of contracting each edge of ``c``.

    Uses the ``k`` lowest eigenpairs of the combinatorial Laplacian, widened
    to include the whole eigenspace straddling the cutoff so the result does
    not depend on the eigenbasis chosen inside a degenerate eigenvalue.
    Sorted ascending by cost, ties by node indices.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    edges = c.edge_list()
    if not edges:
        return []
    L = c.laplacian()
    vals, vecs = np.linalg.eigh(L)
    cut = min(k, len(vals))
    while cut < len(vals) and abs(vals[cut] - vals[cut - 1]) <= 1e-8 * max(1.0, abs(vals[cut - 1])):
        cut += 1
    vals, vecs = vals[:cut], vecs[:, :cut]
    scale = np.zeros(cut)
    nonzero = vals > 1e-8
    scale[nonzero] = 1.0 / np.sqrt(vals[nonzero])
    B = vecs * scale
    deg = np.diag(L)
    proj = np.eye(2) - 0.5
    out = []
    for u, v in edges:
        w = c.weights[(u, v)]
        local = np.array([[2 * deg[u] - w, -w], [-w, 2 * deg[v] - w]])
        Bc = proj @ B[[u, v]]
        cost = float(np.linalg.norm(Bc.T @ local @ Bc))
        out.append(ContractionPair(u, v, cost))
    out.sort(key=lambda p: (p.cost, p.u, p.v))
    return out


def coarsen_with_pairs(
    b: BipartiteGraph, c: WeightedGraph, pairs: list[tuple[int, int]]
) -> tuple[BipartiteGraph, WeightedGraph, CoarseningStep]:
    """Merge disjoint left-node pairs, then merge right nodes with equal neighborhoods.

    Coarse nodes are ordered by their smallest member.
    """
    group = list(range(b.n_left))
    for u, v in pairs:
        if group[u] != u or group[v] != v:
            raise ValueError("contraction pairs must be disjoint")
        group[u] = group[v] = min(u, v)
    reps = sorted(set(group))
    coarse_of = {r: i for i, r in enumerate(reps)}
    left_parts: list[list[int]] = [[] for _ in reps]
    for i, g in enumerate(group):
        left_parts[coarse_of[g]].append(i)

    nbrs: list[set[int]] = [set() for _ in range(b.n_right)]
    for a, r in b.edges:
        nbrs[r].add(coarse_of[group[a]])
    by_nbhd: dict[frozenset[int], list[int]] = {}
    for r in range(b.n_right):
        by_nbhd.setdefault(frozenset(nbrs[r]), []).append(r)
    right_parts = sorted(by_nbhd.values(), key=lambda p: p[0])
    coarse_edges = []
    for q, part in enumerate(right_parts):
        coarse_edges.extend((p, q) for p in nbrs[part[0]])
    coarse_b = BipartiteGraph(len(reps), len(right_parts), tuple(coarse_edges))

    weights: dict[tuple[int, int], float] = {}
    for (u, v), w in c.weights.items():
        a, z = coarse_of[group[u]], coarse_of[group[v]]
        if a == z:
            continue
        key = (a, z) if a < z else (z, a)
        weights[key] = weights.get(key, 0.0) + w
    coarse_c = WeightedGraph(len(reps), weights)
    step = CoarseningStep(
        tuple(tuple(p) for p in left_parts),
        tuple(tuple(p) for p in right_parts),
        coarse_b,
        coarse_c,
    )
    return coarse_b, coarse_c, step


def coarsen_pair(
    b: BipartiteGraph, c: WeightedGraph, pair: ContractionPair | tuple[int, int]
) -> tuple[BipartiteGraph, WeightedGraph, CoarseningStep]:
    u, v = (pair.u, pair.v) if isinstance(pair, ContractionPair) else pair
    if (min(u, v), max(u, v)) not in c.weights:
        raise ValueError(f"{(u, v)} is not an edge of the clique expansion")
    return coarsen_with_pairs(b, c, [(u, v)])


class _RightClusterTracker:
    """Incremental right-side cluster sizes while contractions accumulate on one level."""

    def __init__(self, b: BipartiteGraph):
        self.group = list(range(b.n_left))
        self.touching: list[list[int]] = [[] for _ in range(b.n_left)]
        for a, r in b.edges:
            self.touching[a].append(r)
        self.nbhd = [frozenset(s) for s in b.right_neighborhoods()]
        self.count: dict[frozenset[int], int] = {}
        for s in self.nbhd:
            self.count[s] = self.count.get(s, 0) + 1

    def try_merge(self, u: int, v: int, limit: int) -> bool:
        """Merge singleton groups ``u`` and ``v`` if no right cluster exceeds ``limit``."""
        g = min(u, v)
        affected = sorted(set(self.touching[u]) | set(self.touching[v]))
        new = {}
        for r in affected:
            s = self.nbhd[r]
            new[r] = frozenset(g if x in (u, v) else x for x in s)
        count = dict(self.count)
        for r in affected:
            count[self.nbhd[r]] -= 1
        for r in affected:
            count[new[r]] = count.get(new[r], 0) + 1
        if any(count[new[r]] > limit for r in affected):
            return False
        self.count = count
        for r in affected:
            self.nbhd[r] = new[r]
        self.group[u] = self.group[v] = g
        return True


def sample_coarsening_sequence(
    h: Hypergraph,
    rho_min: float = 0.1,
    rho_max: float = 0.3,
    lam: float = 0.3,
    k: int = 8,
    rng: np.random.Generator | None = None,
    max_right_cluster: int = MAX_RIGHT_CLUSTER,
) -> CoarseningSequence:
    """Randomized greedy coarsening down to a single linked pair.

    Each level draws a reduction fraction (``rho_max`` below 16 left nodes),
    then walks clique edges by ascending local variation cost, skipping each
    with probability ``1 - lam``. A pair is rejected when it touches an
    accepted one or when it would grow a right cluster beyond
    ``max_right_cluster`` nodes of the level. Skipped pairs are revisited in
    later passes until the target is met or no candidate remains.
    """
    if not (0 < rho_min <= rho_max < 1):
        raise ValueError("need 0 < rho_min <= rho_max < 1")
    if not (0 <= lam <= 1):
        raise ValueError("lam must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng()
    if not hypergraph_is_connected(h):
        raise InvalidGraphError("coarsening requires a connected hypergraph")
    b, c = star_expansion(h), clique_expansion(h)
    seq = CoarseningSequence([b], [c])
    if b.n_left == 1 and b.n_right > 1:
        raise CoarseningError("single node with several hyperedges cannot be reduced", b)
    while b.n_left > 1:
        n = b.n_left
        red_frac = float(rng.uniform(rho_min, rho_max))
        if n < SMALL_GRAPH_NODES:
            red_frac = rho_max
        candidates = local_variation_costs(c, k)
        tracker = _RightClusterTracker(b)
        used: set[int] = set()
        accepted: list[tuple[int, int]] = []
        done = False
        while candidates and not done:
            skipped = []
            for pair in candidates:
                if rng.random() >= lam:
                    skipped.append(pair)
                    continue
                if pair.u in used or pair.v in used:
                    continue
                if tracker.try_merge(pair.u, pair.v, max_right_cluster):
                    accepted.append((pair.u, pair.v))
                    used.update((pair.u, pair.v))
                    if len(accepted) > red_frac * n:
                        done = True
                        break
            candidates = [p for p in skipped if p.u not in used and p.v not in used]
        if not accepted:
            raise CoarseningError(f"no admissible contraction on a level with {n} left nodes", b)
        b, c, step = coarsen_with_pairs(b, c, accepted)
        seq.graphs.append(b)
        seq.cliques.append(c)
        seq.steps.append(step)
        seq.reduction_fractions.append(red_frac)
    return seq


def length_bound(n: int, rho_min: float, slack: float = 2.0) -> int:
    """``slack * ceil(log_{1+eps} n)`` with ``eps = rho_min / (1 - rho_min)``."""
    eps = rho_min / (1.0 - rho_min)
    if n <= 1:
        return 0
    return int(slack * math.ceil(math.log(n) / math.log1p(eps)))


def _relabel_clique(c: WeightedGraph, perm) -> WeightedGraph:
    return WeightedGraph(c.num_nodes, {(perm[u], perm[v]): w for (u, v), w in c.weights.items()})


def align_sequence(seq: CoarseningSequence) -> tuple[CoarseningSequence, np.ndarray, np.ndarray]:
    """Relabel every level so each part maps to a contiguous block in coarse order.

    After alignment, expanding ``graphs[l + 1]`` with the part sizes of
    ``steps[l]`` orders copies exactly like the nodes of ``graphs[l]``.
    Returns the aligned sequence plus the left and right permutations
    taking the original level-0 indices to aligned ones.
    """
    L = seq.length
    graphs = list(seq.graphs)
    cliques = list(seq.cliques)
    steps: list[CoarseningStep | None] = [None] * L
    left_sigma = np.arange(graphs[L].n_left)
    right_sigma = np.arange(graphs[L].n_right)
    for l in range(L - 1, -1, -1):
        st = seq.steps[l]
        lparts: list[tuple[int, ...]] = [()] * len(st.left_partition)
        rparts: list[tuple[int, ...]] = [()] * len(st.right_partition)
        for p, part in enumerate(st.left_partition):
            lparts[left_sigma[p]] = part
        for q, part in enumerate(st.right_partition):
            rparts[right_sigma[q]] = part
        fine = graphs[l]
        phi_l = np.empty(fine.n_left, dtype=int)
        phi_r = np.empty(fine.n_right, dtype=int)
        pos = 0
        for part in lparts:
            for i in sorted(part):
                phi_l[i] = pos
                pos += 1
        pos = 0
        for part in rparts:
            for j in sorted(part):
                phi_r[j] = pos
                pos += 1
        graphs[l] = fine.relabel(phi_l, phi_r)
        cliques[l] = _relabel_clique(cliques[l], phi_l)
        steps[l] = CoarseningStep(
            tuple(tuple(sorted(int(phi_l[i]) for i in part)) for part in lparts),
            tuple(tuple(sorted(int(phi_r[j]) for j in part)) for part in rparts),
            graphs[l + 1],
            cliques[l + 1],
        )
        left_sigma, right_sigma = phi_l, phi_r
    aligned = CoarseningSequence(graphs, cliques, list(steps), list(seq.reduction_fractions))
    return aligned, left_sigma, right_sigma
