"""Distribution metrics, isomorphism hashing and validity checks for generated hypergraphs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, fields

import networkx as nx
import numpy as np
from scipy.stats import wasserstein_distance

from .hcore import Hypergraph, clique_expansion, connected_components, hypergraph_is_connected, zhou_laplacian


@dataclass(frozen=True)
class EvalConfig:
    bins: int = 100
    bandwidth: float = 1.0
    paired: bool = True
    hash_rounds: int = 3
    sbm_p_intra: float = 0.05
    sbm_p_inter: float = 0.001
    sbm_factor: float = 2.0
    sbm_balance: float = 0.25


# -- size and distribution distances -------------------------------------------


def node_num_diff(gen: list[Hypergraph], test: list[Hypergraph], paired: bool = True) -> float:
    """Mean |n_gen - n_test| over index pairs, or the gap between mean sizes when unpaired."""
    a = np.array([h.num_nodes for h in gen], dtype=float)
    b = np.array([h.num_nodes for h in test], dtype=float)
    if paired:
        if len(a) != len(b):
            raise ValueError(f"paired comparison needs equal sizes, got {len(a)} and {len(b)}")
        return float(np.mean(np.abs(a - b))) if len(a) else 0.0
    if not len(a) or not len(b):
        raise ValueError("empty set")
    return float(abs(a.mean() - b.mean()))


def wasserstein_1d(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    return float(wasserstein_distance(a, b))


def _pooled_w1(gen_values: list[np.ndarray], test_values: list[np.ndarray]) -> float:
    a = np.concatenate(gen_values) if gen_values else np.zeros(0)
    b = np.concatenate(test_values) if test_values else np.zeros(0)
    if a.size == 0 or b.size == 0:
        return math.nan
    return wasserstein_1d(a, b)


def zhou_spectrum(h: Hypergraph) -> np.ndarray:
    """Eigenvalues of the normalized hypergraph Laplacian; isolated nodes contribute 1."""
    deg = h.degrees()
    covered = np.flatnonzero(deg > 0)
    extra = np.ones(h.num_nodes - len(covered))
    if len(covered) == 0:
        return extra
    index = {int(v): i for i, v in enumerate(covered)}
    sub = Hypergraph(len(covered), tuple(tuple(index[v] for v in e) for e in h.hyperedges))
    return np.concatenate([np.linalg.eigvalsh(zhou_laplacian(sub)), extra])


def spectrum_histogram(h: Hypergraph, bins: int = 100) -> np.ndarray:
    vals = np.clip(zhou_spectrum(h), 0.0, 1.0)
    hist, _ = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    total = hist.sum()
    return hist / total if total else hist.astype(float)


def emd_1d_hist(p: np.ndarray, q: np.ndarray) -> float:
    """Earth mover's distance between histograms on equal-width bins spanning [0, 1]."""
    return float(np.abs(np.cumsum(p - q)).sum() / len(p))


def gaussian_emd_kernel(p: np.ndarray, q: np.ndarray, sigma: float = 1.0) -> float:
    d = emd_1d_hist(p, q)
    return math.exp(-d * d / (2 * sigma * sigma))


def mmd_squared(xs: list[np.ndarray], ys: list[np.ndarray], sigma: float = 1.0) -> float:
    """Biased squared MMD with the Gaussian-of-EMD kernel, clipped at zero."""
    if not xs or not ys:
        raise ValueError("MMD needs non-empty sets")

    def mean_kernel(a, b):
        return float(np.mean([[gaussian_emd_kernel(u, v, sigma) for v in b] for u in a]))

    return max(0.0, mean_kernel(xs, xs) + mean_kernel(ys, ys) - 2 * mean_kernel(xs, ys))


def spectral_mmd(gen: list[Hypergraph], test: list[Hypergraph], bins: int = 100, sigma: float = 1.0) -> float:
    return mmd_squared(
        [spectrum_histogram(h, bins) for h in gen], [spectrum_histogram(h, bins) for h in test], sigma
    )


# -- isomorphism hashing ---------------------------------------------------------


def _mix(*parts: int) -> int:
    data = struct.pack(f"<{len(parts)}Q", *(p & 0xFFFFFFFFFFFFFFFF for p in parts))
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def hypergraph_hash(h: Hypergraph, rounds: int = 3) -> str:
    """Isomorphism-invariant hash from color refinement on the star expansion.

    Node and hyperedge sides start with different colors; each round mixes a
    vertex's color with the sorted colors of its neighbours. The digest covers
    the sorted colors of every round plus both side sizes.
    """
    n, m = h.num_nodes, h.num_edges
    nbrs: list[list[int]] = [[] for _ in range(n + m)]
    for j, e in enumerate(h.hyperedges):
        for v in e:
            nbrs[v].append(n + j)
            nbrs[n + j].append(v)
    colors = [1] * n + [2] * m
    summary = [n, m, *sorted(colors)]
    for _ in range(rounds):
        colors = [_mix(colors[u], *sorted(colors[w] for w in nbrs[u])) for u in range(n + m)]
        summary.extend(sorted(colors))
    return f"{_mix(*summary):016x}"


def uniqueness(gen: list[Hypergraph], rounds: int = 3) -> float:
    if not gen:
        return 0.0
    return len({hypergraph_hash(h, rounds) for h in gen}) / len(gen)


def novelty(gen: list[Hypergraph], train: list[Hypergraph], rounds: int = 3) -> float:
    if not gen:
        return 0.0
    seen = {hypergraph_hash(h, rounds) for h in train}
    return sum(hypergraph_hash(h, rounds) not in seen for h in gen) / len(gen)


# -- centralities on the line graph ----------------------------------------------


def line_graph(h: Hypergraph) -> nx.Graph:
    """Graph on hyperedge indices, linked when two hyperedges share a node."""
    g = nx.Graph()
    g.add_nodes_from(range(h.num_edges))
    members: dict[int, list[int]] = {}
    for j, e in enumerate(h.hyperedges):
        for v in e:
            members.setdefault(v, []).append(j)
    for js in members.values():
        for i, a in enumerate(js):
            for b in js[i + 1 :]:
                g.add_edge(a, b)
    return g


@dataclass(frozen=True)
class Centralities:
    closeness: np.ndarray
    betweenness: np.ndarray
    harmonic: np.ndarray


def centralities(h: Hypergraph) -> Centralities:
    """Closeness, normalized betweenness and harmonic centrality of each hyperedge.

    Each connected component of the line graph is treated on its own.
    """
    g = line_graph(h)
    m = h.num_edges
    close, betw, harm = np.zeros(m), np.zeros(m), np.zeros(m)
    for comp in nx.connected_components(g):
        sub = g.subgraph(comp)
        for j, c in nx.closeness_centrality(sub, wf_improved=False).items():
            close[j] = c
        for j, c in nx.betweenness_centrality(sub, normalized=True).items():
            betw[j] = c
        for j, c in nx.harmonic_centrality(sub).items():
            harm[j] = c
    return Centralities(close, betw, harm)


# -- validity --------------------------------------------------------------------


def valid_ego(h: Hypergraph) -> bool:
    if h.num_edges == 0:
        return False
    common = set(h.hyperedges[0])
    for e in h.hyperedges[1:]:
        common &= set(e)
    return bool(common)


def gyo_reduces(h: Hypergraph) -> bool:
    """True iff repeated ear removal empties the hypergraph (alpha-acyclicity)."""
    edges = [set(e) for e in h.hyperedges]
    changed = True
    while edges and changed:
        changed = False
        counts: dict[int, int] = {}
        for e in edges:
            for v in e:
                counts[v] = counts.get(v, 0) + 1
        for e in edges:
            lonely = {v for v in e if counts[v] == 1}
            if lonely:
                e -= lonely
                changed = True
        kept = []
        for i, e in enumerate(edges):
            absorbed = not e or any(
                (e < f) or (e == f and j < i) for j, f in enumerate(edges) if j != i
            )
            if absorbed:
                changed = True
            else:
                kept.append(e)
        edges = kept
    return not edges


def valid_tree(h: Hypergraph) -> bool:
    if h.num_edges == 0 or not hypergraph_is_connected(h):
        return False
    sets = [set(e) for e in h.hyperedges]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            if len(sets[i] & sets[j]) > 1:
                return False
    return gyo_reduces(h)


def _bisection_order(h: Hypergraph) -> np.ndarray:
    n = h.num_nodes
    c = clique_expansion(h)
    comps = connected_components(n, c.edge_list())
    if len(comps) > 1:
        # null space spanned by component indicators: pack components greedily
        label = np.zeros(n)
        sizes = [0, 0]
        for comp in sorted(comps, key=lambda s: (-len(s), s[0])):
            side = int(sizes[1] < sizes[0])
            label[comp] = side
            sizes[side] += len(comp)
        return np.lexsort((np.arange(n), label))
    L = c.laplacian()
    alpha = max(1.0, float(np.trace(L)))
    _, vecs = np.linalg.eigh(L + alpha * np.ones((n, n)) / n)
    f = vecs[:, 0]
    f = f if f[int(np.argmax(np.abs(f)))] >= 0 else -f
    return np.lexsort((np.arange(n), f))


def sbm_rates(h: Hypergraph) -> tuple[float, float, int, int]:
    """Intra- and inter-group hyperedge rates under a median spectral bisection.

    Rates divide hyperedge counts by the number of node triples of each kind.
    Returns ``(intra_rate, inter_rate, size_a, size_b)``.
    """
    n = h.num_nodes
    order = _bisection_order(h)
    group = np.zeros(n, dtype=int)
    group[order[n // 2 :]] = 1
    na, nb = n // 2, n - n // 2
    intra = sum(len(set(group[list(e)])) == 1 for e in h.hyperedges)
    inter = h.num_edges - intra
    intra_slots = math.comb(na, 3) + math.comb(nb, 3)
    inter_slots = math.comb(n, 3) - intra_slots
    intra_rate = intra / intra_slots if intra_slots else math.nan
    inter_rate = inter / inter_slots if inter_slots else math.nan
    return intra_rate, inter_rate, na, nb


def valid_sbm(
    h: Hypergraph,
    ref_p_intra: float = 0.05,
    ref_p_inter: float = 0.001,
    factor: float = 2.0,
    balance: float = 0.25,
) -> bool:
    """Two balanced groups whose hyperedge rates resemble the reference block model.

    The intra rate must lie within ``factor`` of the reference either way;
    the inter rate may not exceed ``factor`` times the reference.
    """
    if h.num_edges == 0 or h.num_nodes < 6:
        return False
    intra, inter, na, nb = sbm_rates(h)
    if math.isnan(intra) or math.isnan(inter):
        return False
    half = h.num_nodes / 2
    if abs(na - half) > balance * half or abs(nb - half) > balance * half:
        return False
    return ref_p_intra / factor <= intra <= ref_p_intra * factor and inter <= ref_p_inter * factor


VALIDATORS = {"ego": valid_ego, "tree": valid_tree, "sbm": valid_sbm}


# -- report ----------------------------------------------------------------------


@dataclass
class MetricReport:
    node_num_diff: float
    node_deg_w1: float
    edge_size_w1: float
    spectral_mmd: float
    uniqueness: float
    novelty: float | None
    cent_close_w1: float
    cent_betw_w1: float
    cent_harm_w1: float
    valid_fraction: float | None = None
    validator: str | None = None

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.to_dict().items():
            w.writerow([k, "" if v is None else (repr(v) if isinstance(v, float) else v)])
        return buf.getvalue()

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def evaluate(
    gen: list[Hypergraph],
    test: list[Hypergraph],
    train: list[Hypergraph] | None = None,
    validator: str | None = None,
    cfg: EvalConfig = EvalConfig(),
) -> MetricReport:
    """Compare a generated set with a test set using pooled distributions."""
    if not gen or not test:
        raise ValueError("evaluation needs non-empty generated and test sets")
    cg = [centralities(h) for h in gen]
    ct = [centralities(h) for h in test]
    valid = None
    if validator is not None:
        if validator not in VALIDATORS:
            raise ValueError(f"unknown validator {validator!r}")
        if validator == "sbm":
            check = lambda h: valid_sbm(h, cfg.sbm_p_intra, cfg.sbm_p_inter, cfg.sbm_factor, cfg.sbm_balance)  # noqa: E731
        else:
            check = VALIDATORS[validator]
        valid = sum(bool(check(h)) for h in gen) / len(gen)
    return MetricReport(
        node_num_diff=node_num_diff(gen, test, cfg.paired),
        node_deg_w1=_pooled_w1([h.degrees() for h in gen], [h.degrees() for h in test]),
        edge_size_w1=_pooled_w1([h.edge_sizes() for h in gen], [h.edge_sizes() for h in test]),
        spectral_mmd=spectral_mmd(gen, test, cfg.bins, cfg.bandwidth),
        uniqueness=uniqueness(gen, cfg.hash_rounds),
        novelty=None if train is None else novelty(gen, train, cfg.hash_rounds),
        cent_close_w1=_pooled_w1([c.closeness for c in cg], [c.closeness for c in ct]),
        cent_betw_w1=_pooled_w1([c.betweenness for c in cg], [c.betweenness for c in ct]),
        cent_harm_w1=_pooled_w1([c.harmonic for c in cg], [c.harmonic for c in ct]),
        valid_fraction=valid,
        validator=validator,
    )
