"""Training examples, the training loop and the coarse-to-fine samplers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..coarsen import SMALL_GRAPH_NODES, CoarseningSequence, align_sequence, sample_coarsening_sequence
from ..expand import ExpansionVectors, expand, inversion_labels, perturbed_expand, refine
from ..hcore import BipartiteGraph, Hypergraph, from_bipartite, minimal_bipartite
from ..spectral import node_embeddings
from .denoiser import ModelConfig, ReferenceDenoiser, flatten_params, unflatten_params
from .edm import Conditioning, Denoiser, FeatureTriple, NoiseConfig, reverse_sde_sample

RIGHT_THRESHOLDS = (1.66, 2.33)
LEFT_THRESHOLD = 1.5
EDGE_THRESHOLD = 0.5


class SamplingError(RuntimeError):
    """The sampler hit its iteration cap before reaching the target size."""


@dataclass(frozen=True)
class CoarsenConfig:
    rho_min: float = 0.1
    rho_max: float = 0.3
    lam: float = 0.3
    k: int = 8


@dataclass(frozen=True)
class PerturbConfig:
    radius: int = 1
    p: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 1
    lr: float = 1e-3
    clip_norm: float = 1.0
    optimizer: str = "sgd"
    spectral_k: int = 8
    coarsen: CoarsenConfig = field(default_factory=CoarsenConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("invalid training hyperparameters")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.spectral_k not in (0, self.model.embed_dim):
            raise ValueError("spectral_k must be 0 or equal to the model embedding width")


@dataclass(frozen=True)
class SampleConfig:
    rho_min: float = 0.1
    rho_max: float = 0.3
    spectral_k: int = 8
    embed_dim: int = 8
    cap_factor: int = 10
    small_graph_nodes: int = SMALL_GRAPH_NODES
    noise: NoiseConfig = field(default_factory=NoiseConfig)


# -- training examples -------------------------------------------------------


@dataclass(frozen=True)
class TrainingExample:
    host: BipartiteGraph
    target: FeatureTriple
    cond: Conditioning
    level: int


def _part_sizes(parts) -> np.ndarray:
    return np.array([len(p) for p in parts], dtype=np.int64)


def embed(
    base: BipartiteGraph, ev: ExpansionVectors, k: int, width: int, rng: np.random.Generator
):
    """Embeddings of ``base`` replicated onto ``expand(base, ev)``; random when ``k == 0``."""
    return node_embeddings(base, ev.v_l, ev.v_r, k=k, rng=rng, random_width=width, strict=False)


def copy_parents(ev: ExpansionVectors) -> tuple[np.ndarray, np.ndarray]:
    """Base node behind every left and right node of ``expand(base, ev)``."""
    return np.repeat(np.arange(len(ev.v_l)), ev.v_l), np.repeat(np.arange(len(ev.v_r)), ev.v_r)


def make_conditioning(
    base: BipartiteGraph,
    ev: ExpansionVectors,
    target_size: int,
    rho_hat: float,
    k: int,
    width: int,
    rng: np.random.Generator,
) -> Conditioning:
    return Conditioning(embed(base, ev, k, width, rng), target_size, rho_hat, copy_parents(ev))


def level_example(
    seq: CoarseningSequence,
    level: int,
    perturb: PerturbConfig,
    spectral_k: int,
    embed_dim: int,
    rng: np.random.Generator,
) -> TrainingExample:
    """Host graph, clean targets and conditioning for one level of an aligned sequence.

    The host is the (perturbed) expansion of level ``level + 1``; the edge
    target marks which host edges belong to level ``level`` and the node
    targets are the cluster sizes that expand level ``level`` into
    ``level - 1`` (all ones at level 0). The top level uses the minimal pair
    itself as host with every edge kept.
    """
    L = seq.length
    if not 0 <= level <= L:
        raise ValueError(f"level {level} outside 0..{L}")
    fine = seq.graphs[level]
    if level == 0:
        v_l, v_r = np.ones(fine.n_left), np.ones(fine.n_right)
        rho_hat = 0.0
    else:
        st = seq.steps[level - 1]
        v_l, v_r = _part_sizes(st.left_partition), _part_sizes(st.right_partition)
        rho_hat = 1.0 - fine.n_left / seq.graphs[level - 1].n_left
    if level == L:
        base = fine
        ev = ExpansionVectors.ones(base)
        host = base
        e = np.ones(host.num_edges)
    else:
        base = seq.graphs[level + 1]
        ev, _ = inversion_labels(fine, seq.steps[level])
        host = perturbed_expand(base, ev, perturb.radius, perturb.p, rng)
        kept = set(fine.edges)
        if len(kept & set(host.edges)) != len(kept):
            raise ValueError("sequence is not aligned: fine edges missing from the expansion")
        e = np.array([edge in kept for edge in host.edges], dtype=float)
    cond = make_conditioning(base, ev, seq.graphs[0].n_left, rho_hat, spectral_k, embed_dim, rng)
    target = FeatureTriple(np.asarray(v_l, dtype=float), np.asarray(v_r, dtype=float), e)
    return TrainingExample(host, target, cond, level)


class LevelCache:
    """Per-graph aligned coarsening sequences whose levels are drawn without replacement.

    When every level of a graph's sequence has been used, a fresh sequence
    is sampled from a child seed drawn from the caller's generator, so the
    cache state is just (child seed, pending levels) per graph.
    """

    def __init__(self, dataset: list[Hypergraph], cfg: CoarsenConfig):
        if not dataset:
            raise ValueError("empty dataset")
        self.dataset = dataset
        self.cfg = cfg
        self._seqs: list[CoarseningSequence | None] = [None] * len(dataset)
        self._seeds: list[int | None] = [None] * len(dataset)
        self._pending: list[list[int]] = [[] for _ in dataset]
        self.regenerations = 0

    def _build(self, index: int, seed: int) -> tuple[CoarseningSequence, np.random.Generator]:
        c = self.cfg
        child = np.random.default_rng(seed)
        seq = sample_coarsening_sequence(self.dataset[index], c.rho_min, c.rho_max, c.lam, c.k, child)
        return align_sequence(seq)[0], child

    def draw(self, index: int, rng: np.random.Generator) -> tuple[CoarseningSequence, int]:
        if not self._pending[index]:
            seed = int(rng.integers(2**63))
            seq, child = self._build(index, seed)
            self._seqs[index], self._seeds[index] = seq, seed
            self._pending[index] = [int(x) for x in child.permutation(seq.length + 1)]
            self.regenerations += 1
        level = int(self._pending[index].pop())
        return self._seqs[index], level

    def state(self) -> dict:
        return {"seeds": list(self._seeds), "pending": [list(p) for p in self._pending]}

    def restore(self, state: dict) -> None:
        if len(state["seeds"]) != len(self.dataset):
            raise ValueError("cache state does not match the dataset size")
        for i, (seed, pending) in enumerate(zip(state["seeds"], state["pending"])):
            self._seeds[i] = seed
            self._seqs[i] = None if seed is None else self._build(i, seed)[0]
            self._pending[i] = [int(x) for x in pending]


# -- optimization -------------------------------------------------------------


def clip_by_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    return g * (max_norm / norm) if norm > max_norm else g


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        return theta - self.lr * g

    def state(self) -> dict:
        return {}

    def restore(self, state: dict) -> None:
        pass


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(theta), np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        if self.m is None:
            return {"t": 0}
        return {"t": self.t, "m": [float(x) for x in self.m], "v": [float(x) for x in self.v]}

    def restore(self, state: dict) -> None:
        self.t = int(state["t"])
        if self.t:
            self.m, self.v = np.array(state["m"], dtype=float), np.array(state["v"], dtype=float)


def make_optimizer(cfg: TrainConfig):
    return SGD(cfg.lr) if cfg.optimizer == "sgd" else Adam(cfg.lr)


@dataclass
class TrainResult:
    model: ReferenceDenoiser
    log: list[tuple[int, float, float]]  # (step, sigma, loss)
    state: dict = field(default_factory=dict)  # everything needed to resume bitwise

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "sigma", "loss"])
            for step, sigma, loss in self.log:
                w.writerow([step, repr(sigma), repr(loss)])


def batch_loss_and_grad(model: ReferenceDenoiser, batch) -> tuple[float, np.ndarray]:
    """Mean loss and flat gradient over ``(example, sigma, noise)`` items."""
    total, grad = 0.0, None
    for ex, sigma, noise in batch:
        loss, g = model.loss_and_grad(ex.target, ex.host, ex.cond, sigma, noise)
        flat = flatten_params(g, model.cfg)
        total += loss
        grad = flat if grad is None else grad + flat
    return total / len(batch), grad / len(batch)


def train(
    dataset: list[Hypergraph],
    cfg: TrainConfig,
    rng: np.random.Generator,
    model: ReferenceDenoiser | None = None,
    callback=None,
    resume: dict | None = None,
) -> TrainResult:
    """Fit the reference denoiser with one random level per batch item per step.

    ``callback(step, model)`` runs after every update when given. ``resume``
    takes the ``state`` of an earlier result (together with its ``model``);
    the generator state is then restored from it and ``rng`` is ignored, so
    the continued run matches an uninterrupted one bitwise.
    """
    if model is None:
        if resume is not None:
            raise ValueError("resuming needs the model of the earlier run")
        model = ReferenceDenoiser.initialize(cfg.model, rng, cfg.noise.sigma_data)
    cache = LevelCache(dataset, cfg.coarsen)
    opt = make_optimizer(cfg)
    first = 0
    if resume is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = resume["rng"]
        cache.restore(resume["cache"])
        opt.restore(resume["optimizer"])
        first = int(resume["step"])
    theta = flatten_params(model.params, model.cfg)
    log = []
    for step in range(first, first + cfg.steps):
        batch = []
        for _ in range(cfg.batch_size):
            idx = int(rng.integers(len(dataset)))
            seq, level = cache.draw(idx, rng)
            ex = level_example(seq, level, cfg.perturb, cfg.spectral_k, cfg.model.embed_dim, rng)
            sigma = cfg.noise.sample_training_sigma(rng)
            batch.append((ex, sigma, FeatureTriple.standard_normal(ex.host, rng)))
        loss, grad = batch_loss_and_grad(model, batch)
        theta = opt.step(theta, clip_by_norm(grad, cfg.clip_norm))
        model.params = unflatten_params(theta, model.cfg)
        log.append((step, float(np.mean([b[1] for b in batch])), loss))
        if callback is not None:
            callback(step, model)
    state = {
        "step": first + cfg.steps,
        "rng": rng.bit_generator.state,
        "cache": cache.state(),
        "optimizer": opt.state(),
    }
    return TrainResult(model, log, state)


# -- sampling -----------------------------------------------------------------


def n_plus(n: int, rho: float) -> int:
    """Smallest ``m >= 0`` with ``m == ceil(rho * (n + m))``."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    for m in range(0, n * 2 + int(n / (1 - rho)) + 2):
        if m == math.ceil(rho * (n + m) - 1e-9):
            return m
    raise AssertionError("no fixed point found")


def threshold_right(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores)
    return 1 + (s >= RIGHT_THRESHOLDS[0]).astype(np.int64) + (s >= RIGHT_THRESHOLDS[1]).astype(np.int64)


def threshold_left_free(scores: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(scores) >= LEFT_THRESHOLD, 2, 1).astype(np.int64)


def threshold_left_topk(scores: np.ndarray, count: int) -> np.ndarray:
    """Cluster size 2 for the ``count`` highest scores (lower index wins ties), else 1."""
    s = np.asarray(scores)
    out = np.ones(len(s), dtype=np.int64)
    out[np.argsort(-s, kind="stable")[:count]] = 2
    return out


def threshold_edges(scores: np.ndarray) -> np.ndarray:
    return (np.asarray(scores) > EDGE_THRESHOLD).astype(np.int8)


@dataclass
class SampleTrace:
    bipartite: BipartiteGraph
    iterations: int
    sizes: list[int]

    @property
    def hypergraph(self) -> Hypergraph:
        return from_bipartite(self.bipartite)


def planned_growth(n: int, cfg: SampleConfig, rng: np.random.Generator) -> int:
    """Left nodes to add to an ``n``-node graph for a random reduction fraction.

    Mirrors the coarsening schedule: when the grown graph would stay below
    ``cfg.small_graph_nodes`` the largest fraction is used instead.
    """
    m = n_plus(n, float(rng.uniform(cfg.rho_min, cfg.rho_max)))
    if n + m < cfg.small_graph_nodes:
        m = n_plus(n, cfg.rho_max)
    return m


def iteration_cap(n_target: int, rho_min: float, factor: int) -> int:
    eps = rho_min / (1.0 - rho_min)
    return factor * max(1, math.ceil(math.log(max(n_target, 2)) / math.log1p(eps)))


def sample_bipartite(
    d: Denoiser,
    n_target: int,
    cfg: SampleConfig,
    rng: np.random.Generator,
    variant: str = "deterministic",
) -> SampleTrace:
    """Grow a bipartite graph from the minimal pair until it has ``n_target`` left nodes.

    Each iteration expands the current graph with the previous cluster
    sizes, denoises (cluster sizes, edge selection) on that host and keeps
    the selected edges. The deterministic variant duplicates exactly the
    planned number of highest-scoring left nodes, so it lands on
    ``n_target`` exactly; the free variant thresholds scores at 1.5 and
    raises :class:`SamplingError` after the iteration cap.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    if variant not in ("deterministic", "free"):
        raise ValueError(f"unknown variant {variant!r}")
    b = minimal_bipartite()
    ev = ExpansionVectors.ones(b)
    cap = iteration_cap(n_target, cfg.rho_min, cfg.cap_factor)
    sizes = [b.n_left]
    it = 0
    while True:
        if it >= cap:
            raise SamplingError(f"no growth to {n_target} left nodes within {cap} iterations")
        host = expand(b, ev)
        n = host.n_left
        m = min(planned_growth(n, cfg, rng), max(n_target - n, 0), n)
        rho_hat = 1.0 - n / (n + m)
        cond = make_conditioning(b, ev, n_target, rho_hat, cfg.spectral_k, cfg.embed_dim, rng)
        x = reverse_sde_sample(d, host, cond, cfg.noise, rng)
        b = refine(host, threshold_edges(x.e))
        it += 1
        sizes.append(b.n_left)
        if b.n_left >= n_target:
            return SampleTrace(b, it, sizes)
        v_l = threshold_left_topk(x.vl, m) if variant == "deterministic" else threshold_left_free(x.vl)
        ev = ExpansionVectors(v_l, threshold_right(x.vr))


def sample_deterministic(d: Denoiser, n_target: int, cfg: SampleConfig, rng: np.random.Generator) -> Hypergraph:
    return sample_bipartite(d, n_target, cfg, rng, "deterministic").hypergraph


def sample_free(d: Denoiser, n_target: int, cfg: SampleConfig, rng: np.random.Generator) -> Hypergraph:
    return sample_bipartite(d, n_target, cfg, rng, "free").hypergraph


# -- replay oracle ------------------------------------------------------------


class ReplayDenoiser:
    """Denoiser stub that answers each host of an aligned sequence with its exact labels."""

    def __init__(self, seq: CoarseningSequence):
        self._table = {}
        no_perturb = PerturbConfig(radius=0, p=0.0)
        rng = np.random.default_rng(0)
        for level in range(seq.length + 1):
            ex = level_example(seq, level, no_perturb, 1, 1, rng)
            self._table[self._key(ex.host)] = ex.target

    @staticmethod
    def _key(host: BipartiteGraph):
        return host.n_left, host.n_right, host.edges

    def __call__(self, x, sigma, host, cond) -> FeatureTriple:
        try:
            return self._table[self._key(host)]
        except KeyError:
            raise KeyError("host graph is not part of the recorded sequence") from None


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(
    path, model: ReferenceDenoiser, seed: int, config: dict | None = None, train_state: dict | None = None
) -> None:
    blob = {
        "format": "hygene-checkpoint",
        "version": 1,
        "seed": seed,
        "model": asdict(model.cfg),
        "sigma_data": model.sigma_data,
        "config": config or {},
        "params": [float(v) for v in flatten_params(model.params, model.cfg)],
    }
    if train_state is not None:
        blob["train_state"] = train_state
    Path(path).write_text(json.dumps(blob, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ReferenceDenoiser, dict]:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != "hygene-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    cfg = ModelConfig(**blob["model"])
    params = unflatten_params(np.array(blob["params"], dtype=float), cfg)
    return ReferenceDenoiser(params, cfg, blob["sigma_data"]), blob
