"""Reference denoiser: edge-conditioned bipartite message passing, differentiated by hand."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hcore import BipartiteGraph
from .edm import Conditioning, FeatureTriple, preconditioning


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    rounds: int = 4
    embed_dim: int = 8
    sigma_freqs: int = 3  # sin/cos pairs in the noise-level embedding
    copy_aware: bool = True  # multiplicity inputs plus block and sibling means

    @property
    def sigma_width(self) -> int:
        return 1 + 2 * self.sigma_freqs

    @property
    def node_inputs(self) -> int:
        return 1 + self.embed_dim + int(self.copy_aware) + self.sigma_width + 2

    @property
    def edge_inputs(self) -> int:
        return 1 + 2 * (self.embed_dim + int(self.copy_aware)) + self.sigma_width + 2


EDGE_MIX = ("W_ee", "W_el", "W_er")
NODE_MIX = ("W_ll", "W_lm", "W_rr", "W_rm")
COPY_MIX = ("W_eb", "W_lg", "W_rg")


def sigma_embedding(c_noise: float, freqs: int) -> np.ndarray:
    """``c_noise`` followed by sin/cos of ``pi * 2**j * c_noise`` for ``j < freqs``."""
    w = np.pi * 2.0 ** np.arange(freqs) * c_noise
    return np.concatenate([[c_noise], np.sin(w), np.cos(w)])


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.hidden
    shapes: dict[str, tuple[int, ...]] = {
        "enc_l.W": (cfg.node_inputs, d), "enc_l.b": (d,),
        "enc_r.W": (cfg.node_inputs, d), "enc_r.b": (d,),
        "enc_e.W": (cfg.edge_inputs, d), "enc_e.b": (d,),
    }
    mixes = EDGE_MIX + NODE_MIX + (COPY_MIX if cfg.copy_aware else ())
    for t in range(cfg.rounds):
        for name in mixes:
            shapes[f"mp{t}.{name}"] = (d, d)
        for name in ("b_e", "b_l", "b_r"):
            shapes[f"mp{t}.{name}"] = (d,)
    for side in ("l", "r", "e"):
        shapes[f"head_{side}.w"] = (d,)
        shapes[f"head_{side}.b"] = ()
    return shapes


def _fan_in(name: str, cfg: ModelConfig) -> int:
    if name.startswith("enc_e"):
        return cfg.edge_inputs
    if name.startswith("enc"):
        return cfg.node_inputs
    if name.startswith("mp"):
        extra = int(cfg.copy_aware)
        edge_side = ".b_e" in name or any(name.endswith(w) for w in EDGE_MIX + ("W_eb",))
        return cfg.hidden * ((3 if edge_side else 2) + extra)
    return cfg.hidden


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for every tensor."""
    params = {}
    for name, shape in _param_shapes(cfg).items():
        s = 1.0 / np.sqrt(_fan_in(name, cfg))
        params[name] = rng.uniform(-s, s, size=shape)
    return params


def flatten_params(params: dict[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    return np.concatenate([np.ravel(params[n]) for n in _param_shapes(cfg)])


def unflatten_params(flat: np.ndarray, cfg: ModelConfig) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, shape in _param_shapes(cfg).items():
        size = int(np.prod(shape)) if shape else 1
        out[name] = np.array(flat[pos : pos + size], dtype=float).reshape(shape)
        pos += size
    if pos != len(flat):
        raise ValueError(f"expected {pos} parameters, got {len(flat)}")
    return out


def _scatter(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, index, values)
    return out


class GroupMean:
    """Replace each row by the mean of its group; the operator is symmetric."""

    def __init__(self, groups: np.ndarray):
        self.index = np.unique(groups, return_inverse=True)[1].ravel()
        self.n = int(self.index.max()) + 1 if len(self.index) else 0
        self.counts = np.bincount(self.index, minlength=self.n).astype(float)[:, None]

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if not len(values):
            return values
        return (_scatter(values, self.index, self.n) / self.counts)[self.index]


class ReferenceDenoiser:
    """Preconditioned denoiser ``D(x) = c_skip x + c_out F(c_in x, sigma)``.

    ``F`` encodes each left node, right node and edge with its noised value,
    the noise-level embedding, its spectral embedding, the target size and
    the reduction fraction, then runs ``rounds`` residual message-passing
    rounds: edges update from their endpoints, nodes update from the
    degree-scaled sum of incident edge states. With ``copy_aware`` every node
    also sees its source cluster size, edges mix in the mean state of their
    expansion block (all copies of one coarse edge) and nodes the mean state
    of their sibling copies. Three linear heads read out the result.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: ModelConfig, sigma_data: float = 0.5):
        self.params = params
        self.cfg = cfg
        self.sigma_data = sigma_data

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator, sigma_data: float = 0.5):
        return cls(init_params(cfg, rng), cfg, sigma_data)

    # -- raw network -------------------------------------------------------

    def _inputs(self, x: FeatureTriple, sigma: float, host: BipartiteGraph, cond: Conditioning):
        pc = preconditioning(sigma, self.sigma_data)
        emb = cond.embeddings
        if emb.width != self.cfg.embed_dim:
            raise ValueError(f"embedding width {emb.width} != model embed_dim {self.cfg.embed_dim}")
        if not x.shape_of(host):
            raise ValueError("feature lengths do not match the host graph")
        nl, nr, m = host.n_left, host.n_right, host.num_edges
        ea = host.edge_array
        if cond.parents is None:
            par_l, par_r = np.arange(nl), np.arange(nr)
        else:
            par_l, par_r = (np.asarray(p, dtype=np.int64) for p in cond.parents)
        shared = np.concatenate(
            [
                sigma_embedding(pc.c_noise, self.cfg.sigma_freqs),
                [np.log(max(cond.target_size, 1)), cond.reduction_fraction],
            ]
        )
        left, right = emb.left, emb.right
        if self.cfg.copy_aware:
            left = np.column_stack([left, np.bincount(par_l, minlength=nl)[par_l] if nl else np.zeros(0)])
            right = np.column_stack([right, np.bincount(par_r, minlength=nr)[par_r] if nr else np.zeros(0)])

        def rows(value, *cols):
            n = len(value)
            return np.column_stack([value, *cols, np.broadcast_to(shared, (n, len(shared)))])

        a_l = rows(pc.c_in * x.vl, left).reshape(nl, self.cfg.node_inputs)
        a_r = rows(pc.c_in * x.vr, right).reshape(nr, self.cfg.node_inputs)
        a_e = rows(pc.c_in * x.e, left[ea[:, 0]], right[ea[:, 1]]).reshape(m, self.cfg.edge_inputs)
        groups = None
        if self.cfg.copy_aware:
            block = par_l[ea[:, 0]] * (int(par_r.max()) + 1 if nr else 1) + par_r[ea[:, 1]]
            groups = (GroupMean(block), GroupMean(par_l), GroupMean(par_r))
        return pc, a_l, a_r, a_e, groups

    def raw_forward(self, x, sigma, host, cond):
        """Return the raw network output ``F`` and a cache for :meth:`raw_backward`."""
        P = self.params
        pc, a_l, a_r, a_e, groups = self._inputs(x, sigma, host, cond)
        ea = host.edge_array
        li, ri = ea[:, 0], ea[:, 1]
        nl, nr = host.n_left, host.n_right
        norm_l = 1.0 / np.sqrt(np.maximum(host.left_degrees(), 1))[:, None]
        norm_r = 1.0 / np.sqrt(np.maximum(host.right_degrees(), 1))[:, None]

        h_l = np.tanh(a_l @ P["enc_l.W"] + P["enc_l.b"])
        h_r = np.tanh(a_r @ P["enc_r.W"] + P["enc_r.b"])
        h_e = np.tanh(a_e @ P["enc_e.W"] + P["enc_e.b"])
        enc = (h_l, h_r, h_e)
        rounds = []
        for t in range(self.cfg.rounds):
            q = f"mp{t}."
            z_e = h_e @ P[q + "W_ee"] + h_l[li] @ P[q + "W_el"] + h_r[ri] @ P[q + "W_er"] + P[q + "b_e"]
            s_e = s_l = s_r = None
            if groups:
                s_e = groups[0](h_e)
                z_e += s_e @ P[q + "W_eb"]
            t_e = np.tanh(z_e)
            h_e_new = h_e + t_e
            agg_l = _scatter(h_e_new, li, nl) * norm_l
            agg_r = _scatter(h_e_new, ri, nr) * norm_r
            z_l = h_l @ P[q + "W_ll"] + agg_l @ P[q + "W_lm"] + P[q + "b_l"]
            z_r = h_r @ P[q + "W_rr"] + agg_r @ P[q + "W_rm"] + P[q + "b_r"]
            if groups:
                s_l, s_r = groups[1](h_l), groups[2](h_r)
                z_l += s_l @ P[q + "W_lg"]
                z_r += s_r @ P[q + "W_rg"]
            t_l, t_r = np.tanh(z_l), np.tanh(z_r)
            rounds.append((h_l, h_r, h_e, t_e, agg_l, agg_r, t_l, t_r, s_e, s_l, s_r))
            h_l, h_r, h_e = h_l + t_l, h_r + t_r, h_e_new
        out = FeatureTriple(
            h_l @ P["head_l.w"] + P["head_l.b"],
            h_r @ P["head_r.w"] + P["head_r.b"],
            h_e @ P["head_e.w"] + P["head_e.b"],
        )
        cache = dict(pc=pc, a=(a_l, a_r, a_e), li=li, ri=ri, n=(nl, nr), norm=(norm_l, norm_r),
                     groups=groups, enc=enc, rounds=rounds, final=(h_l, h_r, h_e))
        return out, cache

    def raw_backward(self, cache, d_out: FeatureTriple) -> dict[str, np.ndarray]:
        P = self.params
        g = {name: np.zeros_like(v) for name, v in P.items()}
        li, ri = cache["li"], cache["ri"]
        nl, nr = cache["n"]
        norm_l, norm_r = cache["norm"]
        groups = cache["groups"]
        h_l, h_r, h_e = cache["final"]

        dh = []
        for side, h, dy in (("l", h_l, d_out.vl), ("r", h_r, d_out.vr), ("e", h_e, d_out.e)):
            g[f"head_{side}.w"] = h.T @ dy
            g[f"head_{side}.b"] = np.array(dy.sum())
            dh.append(np.outer(dy, P[f"head_{side}.w"]))
        dh_l, dh_r, dh_e = dh

        for t in range(self.cfg.rounds - 1, -1, -1):
            q = f"mp{t}."
            h_l0, h_r0, h_e0, t_e, agg_l, agg_r, t_l, t_r, s_e, s_l, s_r = cache["rounds"][t]
            dz_l = dh_l * (1 - t_l**2)
            dz_r = dh_r * (1 - t_r**2)
            g[q + "W_ll"] += h_l0.T @ dz_l
            g[q + "W_lm"] += agg_l.T @ dz_l
            g[q + "b_l"] += dz_l.sum(axis=0)
            g[q + "W_rr"] += h_r0.T @ dz_r
            g[q + "W_rm"] += agg_r.T @ dz_r
            g[q + "b_r"] += dz_r.sum(axis=0)
            d_agg_l = (dz_l @ P[q + "W_lm"].T) * norm_l
            d_agg_r = (dz_r @ P[q + "W_rm"].T) * norm_r
            dh_e_new = dh_e + d_agg_l[li] + d_agg_r[ri]
            dz_e = dh_e_new * (1 - t_e**2)
            g[q + "W_ee"] += h_e0.T @ dz_e
            g[q + "W_el"] += h_l0[li].T @ dz_e
            g[q + "W_er"] += h_r0[ri].T @ dz_e
            g[q + "b_e"] += dz_e.sum(axis=0)
            dh_e = dh_e_new + dz_e @ P[q + "W_ee"].T
            dh_l = dh_l + dz_l @ P[q + "W_ll"].T + _scatter(dz_e @ P[q + "W_el"].T, li, nl)
            dh_r = dh_r + dz_r @ P[q + "W_rr"].T + _scatter(dz_e @ P[q + "W_er"].T, ri, nr)
            if groups:
                g[q + "W_eb"] += s_e.T @ dz_e
                g[q + "W_lg"] += s_l.T @ dz_l
                g[q + "W_rg"] += s_r.T @ dz_r
                dh_e += groups[0](dz_e @ P[q + "W_eb"].T)
                dh_l += groups[1](dz_l @ P[q + "W_lg"].T)
                dh_r += groups[2](dz_r @ P[q + "W_rg"].T)

        for name, a, h, dy in zip(("enc_l", "enc_r", "enc_e"), cache["a"], cache["enc"], (dh_l, dh_r, dh_e)):
            dz = dy * (1 - h**2)
            g[name + ".W"] = a.T @ dz
            g[name + ".b"] = dz.sum(axis=0)
        return g

    # -- preconditioned denoiser ------------------------------------------

    def __call__(self, x: FeatureTriple, sigma: float, host: BipartiteGraph, cond: Conditioning) -> FeatureTriple:
        F, cache = self.raw_forward(x, sigma, host, cond)
        pc = cache["pc"]
        return x.zip(F, lambda a, f: pc.c_skip * a + pc.c_out * f)

    def loss_and_grad(
        self,
        x0: FeatureTriple,
        host: BipartiteGraph,
        cond: Conditioning,
        sigma: float,
        noise: FeatureTriple,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Weighted denoising loss at ``sigma`` for a fixed noise draw, with its gradient."""
        x = x0.zip(noise, lambda a, n: a + sigma * n)
        F, cache = self.raw_forward(x, sigma, host, cond)
        pc = cache["pc"]
        loss = 0.0
        grads = []
        for xb, fb, tb in zip(x.blocks(), F.blocks(), x0.blocks()):
            if xb.size == 0:
                grads.append(np.zeros(0))
                continue
            resid = pc.c_skip * xb + pc.c_out * fb - tb
            loss += pc.weight * float(np.mean(resid**2))
            grads.append(pc.weight * 2.0 * pc.c_out * resid / xb.size)
        return loss, self.raw_backward(cache, FeatureTriple(*grads))
