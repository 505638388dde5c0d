"""Synthetic hypergraph generators and seeded train/val/test dataset files."""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hcore import Hypergraph, hypergraph_is_connected, write_jsonl

KINDS = ("er", "sbm", "ego", "tree")
SPLITS = ("train", "val", "test")


class GenerationError(RuntimeError):
    """A generator exhausted its retry budget."""


@functools.lru_cache(maxsize=32)
def _subsets(n: int, size: int) -> np.ndarray:
    if size > n:
        out = np.zeros((0, size), dtype=np.int64)
    else:
        out = np.array(list(itertools.combinations(range(n), size)), dtype=np.int64).reshape(-1, size)
    out.setflags(write=False)
    return out


def _check_prob(*ps: float) -> None:
    for p in ps:
        if not 0 <= p <= 1:
            raise ValueError(f"probability {p} outside [0, 1]")


def gen_er(
    n: int = 32,
    p2: float = 0.1,
    p3: float = 0.005,
    p4: float = 0.0005,
    rng: np.random.Generator | None = None,
) -> Hypergraph:
    """Include every 2-, 3- and 4-subset independently with probability p2, p3, p4."""
    _check_prob(p2, p3, p4)
    rng = rng if rng is not None else np.random.default_rng()
    edges = []
    for size, p in ((2, p2), (3, p3), (4, p4)):
        cand = _subsets(n, size)
        keep = rng.random(len(cand)) < p
        edges.extend(tuple(int(x) for x in row) for row in cand[keep])
    return Hypergraph(n, tuple(edges))


def gen_sbm(
    n: int = 32,
    p_intra: float = 0.05,
    p_inter: float = 0.001,
    rng: np.random.Generator | None = None,
) -> Hypergraph:
    """Two equal groups ``[0, n/2)`` and ``[n/2, n)``; 3-subsets inside a group use ``p_intra``."""
    if n % 2:
        raise ValueError("gen_sbm needs an even node count")
    _check_prob(p_intra, p_inter)
    rng = rng if rng is not None else np.random.default_rng()
    cand = _subsets(n, 3)
    group = cand >= n // 2
    intra = np.all(group == group[:, :1], axis=1)
    keep = rng.random(len(cand)) < np.where(intra, p_intra, p_inter)
    return Hypergraph(n, tuple(tuple(int(x) for x in row) for row in cand[keep]))


def gen_ego(
    n_range: tuple[int, int] = (150, 200),
    n_edges: int = 3000,
    max_size: int = 5,
    rng: np.random.Generator | None = None,
    max_tries: int = 100,
) -> Hypergraph:
    """Ego hypergraph: hyperedges of a random base graph that contain one random node.

    The base graph has a uniform node count in ``n_range`` (inclusive) and
    ``n_edges`` hyperedges with sizes uniform in ``2..max_size``. Nodes left
    without hyperedges are dropped and the rest relabeled in order.
    """
    lo, hi = n_range
    if not (2 <= lo <= hi) or not (2 <= max_size <= lo) or n_edges < 1:
        raise ValueError("invalid ego generator parameters")
    rng = rng if rng is not None else np.random.default_rng()
    for _ in range(max_tries):
        n = int(rng.integers(lo, hi + 1))
        sizes = rng.integers(2, max_size + 1, size=n_edges)
        keys = rng.random((n_edges, n))
        ego = int(rng.integers(n))
        # a hyperedge holds the `size` lowest keys of its row (stable order);
        # rank the ego key first so only its hyperedges get sorted
        k_ego = keys[:, ego : ego + 1]
        rank = (keys < k_ego).sum(axis=1) + (keys[:, :ego] == k_ego).sum(axis=1)
        edges = [np.argsort(keys[i], kind="stable")[: sizes[i]] for i in np.flatnonzero(rank < sizes)]
        if not edges:
            continue
        used = np.unique(np.concatenate(edges))
        index = {int(v): i for i, v in enumerate(used)}
        return Hypergraph(len(used), tuple(tuple(index[int(v)] for v in e) for e in edges))
    raise GenerationError(f"ego node without hyperedges in {max_tries} tries")


def random_tree_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Edges of a uniform random labeled tree, decoded from a random Prüfer sequence."""
    if n < 2:
        raise ValueError("a tree needs at least 2 nodes")
    if n == 2:
        return [(0, 1)]
    seq = [int(x) for x in rng.integers(0, n, size=n - 2)]
    degree = np.ones(n, dtype=int)
    for x in seq:
        degree[x] += 1
    edges = []
    for x in seq:
        leaf = int(np.flatnonzero(degree == 1)[0])
        edges.append((min(leaf, x), max(leaf, x)))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = np.flatnonzero(degree == 1)
    edges.append((int(u), int(v)))
    return edges


def gen_tree(
    n: int = 32,
    max_size: int = 5,
    rng: np.random.Generator | None = None,
    merge_budget: int | None = None,
) -> Hypergraph:
    """Random tree whose edges are merged into hyperedges of at most ``max_size`` nodes.

    Repeatedly merges a uniformly random pair of hyperedges that share a
    node and whose union fits ``max_size``, until no such pair remains or
    ``merge_budget`` merges have been made.
    """
    if max_size < 2:
        raise ValueError("max_size must be >= 2")
    rng = rng if rng is not None else np.random.default_rng()
    edges = [frozenset(e) for e in random_tree_edges(n, rng)]
    merges = 0
    while merge_budget is None or merges < merge_budget:
        pairs = [
            (i, j)
            for i, j in itertools.combinations(range(len(edges)), 2)
            if edges[i] & edges[j] and len(edges[i] | edges[j]) <= max_size
        ]
        if not pairs:
            break
        i, j = pairs[int(rng.integers(len(pairs)))]
        merged = edges[i] | edges[j]
        edges = [e for t, e in enumerate(edges) if t not in (i, j)] + [merged]
        merges += 1
    return Hypergraph(n, tuple(tuple(sorted(e)) for e in edges))


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "tree"
    params: dict = field(default_factory=dict)
    train: int = 128
    val: int = 32
    test: int = 40
    seed: int = 0
    max_retries: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if min(self.train, self.val, self.test) < 1:
            raise ValueError("split counts must be positive")

    @property
    def counts(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}


GENERATORS = {"er": gen_er, "sbm": gen_sbm, "ego": gen_ego, "tree": gen_tree}


def generate(kind: str, rng: np.random.Generator, **params) -> Hypergraph:
    if kind not in GENERATORS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if kind == "ego" and "n_range" in params:
        params = dict(params, n_range=tuple(params["n_range"]))
    return GENERATORS[kind](rng=rng, **params)


@dataclass
class Dataset:
    splits: dict[str, list[Hypergraph]]
    rejected: int

    def write(self, out_dir, kind: str) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for split, graphs in self.splits.items():
            paths[split] = out / f"{kind}_{split}.jsonl"
            write_jsonl(paths[split], graphs)
        return paths


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Draw connected graphs, shuffle and cut into train/val/test.

    Disconnected draws are regenerated; ``max_retries`` bounds the total
    number of rejections.
    """
    rng = np.random.default_rng(spec.seed)
    total = spec.train + spec.val + spec.test
    graphs: list[Hypergraph] = []
    rejected = 0
    while len(graphs) < total:
        h = generate(spec.kind, rng, **spec.params)
        if hypergraph_is_connected(h) and h.num_edges > 0:
            graphs.append(h)
            continue
        rejected += 1
        if rejected > spec.max_retries:
            raise GenerationError(f"more than {spec.max_retries} disconnected draws")
    order = rng.permutation(total)
    graphs = [graphs[i] for i in order]
    splits = {
        "train": graphs[: spec.train],
        "val": graphs[spec.train : spec.train + spec.val],
        "test": graphs[spec.train + spec.val :],
    }
    return Dataset(splits, rejected)
