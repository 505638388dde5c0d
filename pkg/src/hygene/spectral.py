"""Eigenpairs, the hypergraph-to-bipartite spectral map and spectral node embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hcore import BipartiteGraph, bipartite_normalized_laplacian

ZERO_EIG_TOL = 1e-8
DEFAULT_K = 8


@dataclass(frozen=True)
class EigenFeatures:
    eigenvalues: np.ndarray  # (p,) ascending
    eigenvectors: np.ndarray  # (dim, p), unit columns

    def __len__(self) -> int:
        return len(self.eigenvalues)


def canonicalize_signs(vectors: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Entries within ``tol`` of the maximum magnitude count as ties; the
    lowest index among them decides.
    """
    out = np.array(vectors, dtype=float, copy=True)
    for j in range(out.shape[1]):
        col = out[:, j]
        mag = np.abs(col)
        if mag.size == 0 or mag.max() == 0:
            continue
        i = int(np.flatnonzero(mag >= mag.max() - tol)[0])
        if col[i] < 0:
            out[:, j] = -col
    return out


def k_smallest_nonzero(L: np.ndarray, k: int) -> EigenFeatures:
    """The ``k`` smallest eigenpairs whose eigenvalue exceeds the zero threshold.

    Returns fewer pairs when the matrix has fewer nonzero eigenvalues.
    Eigenvector signs are canonicalized.
    """
    dim = L.shape[0]
    if k <= 0 or dim == 0:
        return EigenFeatures(np.zeros(0), np.zeros((dim, 0)))
    vals, vecs = np.linalg.eigh((L + L.T) / 2)
    keep = np.flatnonzero(vals > ZERO_EIG_TOL)[: min(k, dim - 1)]
    return EigenFeatures(vals[keep], canonicalize_signs(vecs[:, keep]))


def spectral_map(lambda_h: float, tol: float = 1e-9) -> tuple[float, float]:
    """Map a normalized hypergraph eigenvalue to its two bipartite eigenvalues."""
    if lambda_h < -tol or lambda_h > 1 + tol:
        raise ValueError(f"eigenvalue {lambda_h} outside [0, 1]")
    r = math.sqrt(max(0.0, 1.0 - lambda_h))
    return 1.0 - r, 1.0 + r


def mapped_bipartite_spectrum(zhou_eigenvalues, n_right: int) -> np.ndarray:
    """Star-expansion spectrum predicted from the normalized hypergraph spectrum.

    Each eigenvalue maps to a pair; the ``|n - n_right|`` surplus or missing
    entries all sit at 1, so they are added or removed there.
    """
    lam = np.clip(np.asarray(zhou_eigenvalues, dtype=float), 0.0, 1.0)
    out = sorted(x for v in lam for x in spectral_map(float(v)))
    n = len(lam)
    if n_right >= n:
        out += [1.0] * (n_right - n)
    else:
        for _ in range(n - n_right):
            out.pop(int(np.argmin(np.abs(np.array(out) - 1.0))))
    return np.sort(np.array(out))


@dataclass(frozen=True)
class NodeEmbeddings:
    left: np.ndarray  # (sum v_l, width)
    right: np.ndarray  # (sum v_r, width)

    @property
    def width(self) -> int:
        return self.left.shape[1]


def node_embeddings(
    b: BipartiteGraph,
    v_l,
    v_r,
    k: int = DEFAULT_K,
    rng: np.random.Generator | None = None,
    *,
    random_width: int = 1,
    strict: bool = True,
) -> NodeEmbeddings:
    """Spectral embeddings of ``b`` replicated onto the nodes of its expansion.

    Coordinates are eigenvector entries of the normalized Laplacian scaled by
    1/sqrt(lambda + 1), zero-padded to width ``k``. With ``k == 0`` the
    embeddings are standard-normal draws from ``rng`` of width ``random_width``.
    ``strict=False`` tolerates isolated nodes.
    """
    v_l = np.asarray(v_l, dtype=int)
    v_r = np.asarray(v_r, dtype=int)
    if len(v_l) != b.n_left or len(v_r) != b.n_right:
        raise ValueError("expansion vector lengths do not match the graph")
    if np.any(v_l < 1) or np.any(v_r < 1):
        raise ValueError("expansion counts must be >= 1")
    if k == 0:
        if rng is None:
            raise ValueError("k == 0 requires an rng")
        emb = rng.standard_normal((b.num_nodes, random_width))
    else:
        L = bipartite_normalized_laplacian(b, allow_isolated=not strict)
        feats = k_smallest_nonzero(L, k)
        emb = np.zeros((b.num_nodes, k))
        emb[:, : len(feats)] = feats.eigenvectors / np.sqrt(feats.eigenvalues + 1.0)
    left = np.repeat(emb[: b.n_left], v_l, axis=0)
    right = np.repeat(emb[b.n_left :], v_r, axis=0)
    return NodeEmbeddings(left, right)
