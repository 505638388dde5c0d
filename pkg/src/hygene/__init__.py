"""Hypergraph generation by coarsening, spectral conditioning and diffusion-driven expansion."""

from .hcore import BipartiteGraph, Hypergraph, clique_expansion, star_expansion

__version__ = "0.1.0"

__all__ = ["BipartiteGraph", "Hypergraph", "clique_expansion", "star_expansion"]
