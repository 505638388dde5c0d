"""Expansion, refinement and the labels that invert a coarsening step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .coarsen import CoarseningStep
from .hcore import BipartiteGraph


class InconsistentStepError(ValueError):
    """The coarsening step does not describe the given fine graph."""


@dataclass(frozen=True)
class ExpansionVectors:
    v_l: np.ndarray
    v_r: np.ndarray

    def __post_init__(self) -> None:
        v_l = np.asarray(self.v_l, dtype=np.int64)
        v_r = np.asarray(self.v_r, dtype=np.int64)
        if np.any(v_l < 1) or np.any(v_r < 1):
            raise ValueError("expansion counts must be >= 1")
        object.__setattr__(self, "v_l", v_l)
        object.__setattr__(self, "v_r", v_r)

    @classmethod
    def ones(cls, b: BipartiteGraph) -> ExpansionVectors:
        return cls(np.ones(b.n_left, dtype=np.int64), np.ones(b.n_right, dtype=np.int64))


def _check_lengths(b: BipartiteGraph, ev: ExpansionVectors) -> None:
    if len(ev.v_l) != b.n_left or len(ev.v_r) != b.n_right:
        raise ValueError("expansion vector lengths do not match the graph")


def _offsets(counts: np.ndarray) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)


def expand(b: BipartiteGraph, ev: ExpansionVectors) -> BipartiteGraph:
    """Replace node p by ``ev[p]`` copies and connect every copy pair whose parents are linked.

    Copies are numbered parent by parent, then by copy index.
    """
    _check_lengths(b, ev)
    off_l, off_r = _offsets(ev.v_l), _offsets(ev.v_r)
    edges = []
    for p, q in b.edges:
        for i in range(ev.v_l[p]):
            for j in range(ev.v_r[q]):
                edges.append((int(off_l[p] + i), int(off_r[q] + j)))
    return BipartiteGraph(int(ev.v_l.sum()), int(ev.v_r.sum()), tuple(edges))


def refine(b_exp: BipartiteGraph, selection) -> BipartiteGraph:
    """Keep edge ``i`` (canonical order) iff ``selection[i]`` is set."""
    sel = np.asarray(selection)
    if sel.shape != (b_exp.num_edges,):
        raise ValueError(f"selection has length {sel.size}, graph has {b_exp.num_edges} edges")
    kept = tuple(e for e, s in zip(b_exp.edges, sel) if s)
    return BipartiteGraph(b_exp.n_left, b_exp.n_right, kept)


def perturbed_expand(
    b: BipartiteGraph,
    ev: ExpansionVectors,
    radius: int = 1,
    p: float = 0.1,
    rng: np.random.Generator | None = None,
) -> BipartiteGraph:
    """Expansion plus random extra edges between copies of nodes at distance <= 2*radius + 1.

    Each eligible copy pair that is not already linked is added
    independently with probability ``p``.
    """
    if radius < 0 or not (0 <= p <= 1):
        raise ValueError("need radius >= 0 and 0 <= p <= 1")
    base = expand(b, ev)
    if radius == 0 or p == 0 or b.num_edges == 0:
        return base
    if rng is None:
        rng = np.random.default_rng()
    n = b.num_nodes
    ea = b.edge_array
    A = csr_matrix((np.ones(len(ea)), (ea[:, 0], b.n_left + ea[:, 1])), shape=(n, n))
    dist = shortest_path(A, directed=False, unweighted=True, indices=np.arange(b.n_left))
    dist = dist[:, b.n_left :]
    far = (dist > 1) & (dist <= 2 * radius + 1)
    off_l, off_r = _offsets(ev.v_l), _offsets(ev.v_r)
    candidates = []
    for pl, pr in zip(*np.nonzero(far)):
        for i in range(ev.v_l[pl]):
            for j in range(ev.v_r[pr]):
                candidates.append((int(off_l[pl] + i), int(off_r[pr] + j)))
    if not candidates:
        return base
    candidates.sort()
    keep = rng.random(len(candidates)) < p
    extra = [e for e, k in zip(candidates, keep) if k]
    return BipartiteGraph(base.n_left, base.n_right, base.edges + tuple(extra))


def inversion_bijection(step: CoarseningStep) -> tuple[np.ndarray, np.ndarray]:
    """Position of each fine node among the copies of the expanded coarse graph.

    The i-th smallest member of part p goes to copy i of coarse node p.
    """
    def positions(parts) -> np.ndarray:
        n = sum(len(p) for p in parts)
        phi = np.full(n, -1, dtype=np.int64)
        pos = 0
        for part in parts:
            for i in sorted(part):
                if not (0 <= i < n) or phi[i] >= 0:
                    raise InconsistentStepError("partition does not cover the node set exactly once")
                phi[i] = pos
                pos += 1
        return phi

    return positions(step.left_partition), positions(step.right_partition)


def inversion_labels(fine: BipartiteGraph, step: CoarseningStep) -> tuple[ExpansionVectors, np.ndarray]:
    """Expansion vectors and edge selection that rebuild ``fine`` from ``step.coarse_bipartite``.

    ``refine(expand(coarse, ev), e)`` equals ``fine`` relabeled by
    :func:`inversion_bijection`; for aligned sequences that map is the identity.
    """
    coarse = step.coarse_bipartite
    if len(step.left_partition) != coarse.n_left or len(step.right_partition) != coarse.n_right:
        raise InconsistentStepError("partition sizes do not match the coarse graph")
    phi_l, phi_r = inversion_bijection(step)
    if len(phi_l) != fine.n_left or len(phi_r) != fine.n_right:
        raise InconsistentStepError("partitions do not cover the fine graph")
    ev = ExpansionVectors(
        np.array([len(p) for p in step.left_partition], dtype=np.int64),
        np.array([len(p) for p in step.right_partition], dtype=np.int64),
    )
    expanded = expand(coarse, ev)
    mapped = {(int(phi_l[a]), int(phi_r[r])) for a, r in fine.edges}
    selection = np.array([e in mapped for e in expanded.edges], dtype=np.int8)
    if int(selection.sum()) != len(mapped):
        raise InconsistentStepError("fine graph has edges between unlinked coarse clusters")
    return ev, selection
