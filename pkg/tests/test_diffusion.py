import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import block_errors, four_node_example
from hygene.coarsen import align_sequence, sample_coarsening_sequence
from hygene.datagen import gen_tree
from hygene.diffusion.denoiser import GroupMean, ModelConfig, ReferenceDenoiser, flatten_params, sigma_embedding
from hygene.diffusion.edm import (
    FeatureTriple,
    NoiseConfig,
    edm_loss,
    noise_features,
    reverse_sde_sample,
    sigma_schedule,
)
from hygene.diffusion.pipeline import (
    LevelCache,
    PerturbConfig,
    ReplayDenoiser,
    SampleConfig,
    SamplingError,
    TrainConfig,
    batch_loss_and_grad,
    level_example,
    load_checkpoint,
    make_conditioning,
    n_plus,
    sample_bipartite,
    sample_free,
    save_checkpoint,
    threshold_edges,
    threshold_left_free,
    threshold_left_topk,
    threshold_right,
    train,
)
from hygene.expand import ExpansionVectors
from hygene.hcore import BipartiteGraph, Hypergraph, minimal_bipartite

SMALL = ModelConfig(hidden=5, rounds=2, embed_dim=3, sigma_freqs=2)


class ConstantDenoiser:
    def __init__(self, value):
        self.value = value

    def __call__(self, x, sigma, host, cond):
        return self.value


def example(rng, level=0):
    return four_node_example(rng, level, embed_dim=8)


# -- noise and loss --------------------------------------------------------------


def test_noise_zero_sigma_is_identity(rng):
    x0 = FeatureTriple(np.ones(3), np.ones(2), np.zeros(4))
    x = noise_features(x0, 0.0, rng)
    assert all(np.array_equal(a, b) for a, b in zip(x.blocks(), x0.blocks()))


def test_noise_variance():
    x0 = FeatureTriple(np.zeros(100_000), np.zeros(0), np.zeros(0))
    x = noise_features(x0, 0.3, np.random.default_rng(0))
    assert np.var(x.vl) == pytest.approx(0.09, rel=0.05)
    y = noise_features(x0, 0.3, np.random.default_rng(0))
    assert np.array_equal(x.vl, y.vl)


def test_loss_of_perfect_and_zero_stubs(rng):
    ex = example(rng)
    assert edm_loss(ConstantDenoiser(ex.target), ex.target, ex.host, ex.cond, 1.3, rng) == 0
    zeros = FeatureTriple.zeros_like(ex.host)
    assert edm_loss(ConstantDenoiser(zeros), zeros, ex.host, ex.cond, 0.2, rng) == 0


def test_loss_and_grad_agrees_with_edm_loss(rng):
    ex = example(rng, 1)
    m = ReferenceDenoiser.initialize(SMALL.__class__(embed_dim=8), rng)
    noise = FeatureTriple.standard_normal(ex.host, rng)
    loss, _ = m.loss_and_grad(ex.target, ex.host, ex.cond, 0.9, noise)
    assert loss == pytest.approx(edm_loss(m, ex.target, ex.host, ex.cond, 0.9, noise=noise))


@pytest.mark.parametrize("copy_aware", [True, False])
@pytest.mark.parametrize("level", [0, 1, 2])
def test_gradient_matches_finite_differences(level, copy_aware):
    rng = np.random.default_rng(level)
    cfg = ModelConfig(hidden=5, rounds=2, embed_dim=8, sigma_freqs=2, copy_aware=copy_aware)
    errors = block_errors(cfg, example(rng, level), rng)
    assert max(errors.values()) < 1e-4, errors


def test_group_mean_is_symmetric(rng):
    gm = GroupMean(np.array([3, 1, 3, 2, 1, 3]))
    a, b = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    assert np.sum(gm(a) * b) == pytest.approx(np.sum(a * gm(b)))
    assert np.allclose(gm(a)[[0, 2, 5]], a[[0, 2, 5]].mean(axis=0))


def test_sigma_embedding_layout():
    e = sigma_embedding(0.25, 2)
    assert e.shape == (5,) and e[0] == 0.25
    assert e[1] == pytest.approx(np.sin(np.pi * 0.25)) and e[4] == pytest.approx(np.cos(2 * np.pi * 0.25))


def test_denoiser_shapes_and_embedding_width(rng):
    ex = example(rng)
    m = ReferenceDenoiser.initialize(ModelConfig(embed_dim=4), rng)
    with pytest.raises(ValueError):
        m(ex.target, 1.0, ex.host, ex.cond)
    m = ReferenceDenoiser.initialize(ModelConfig(embed_dim=8), rng)
    out = m(ex.target, 1.0, ex.host, ex.cond)
    assert out.shape_of(ex.host)


# -- sampler ----------------------------------------------------------------------


def test_schedule_endpoints():
    ts = sigma_schedule(NoiseConfig())
    assert ts[0] == pytest.approx(80.0) and ts[-2] == pytest.approx(0.002) and ts[-1] == 0
    assert np.all(np.diff(ts) < 0)


@pytest.mark.parametrize("steps", [1, 2, 32, 64])
def test_sampler_fixed_point(steps, rng):
    ex = example(rng)
    out = reverse_sde_sample(ConstantDenoiser(ex.target), ex.host, ex.cond, NoiseConfig(sampler_steps=steps), rng)
    for a, b in zip(out.blocks(), ex.target.blocks()):
        assert np.allclose(a, b, atol=1e-6)


def test_trained_linear_denoiser_concentrates(rng):
    """A least-squares linear denoiser fitted on a delta dataset sends samples to the delta."""
    target = FeatureTriple(np.array([2.0, 1.0]), np.array([3.0]), np.array([1.0, 0.0]))
    host = BipartiteGraph(2, 1, ((0, 0), (1, 0)))
    x0 = np.concatenate(target.blocks())
    sigmas = np.exp(rng.normal(-1.2, 1.2, 4000))
    noisy = x0 + sigmas[:, None] * rng.standard_normal((4000, len(x0)))
    # per coordinate fit x0 ~ a * x + b over all noise levels
    coef = [np.linalg.lstsq(np.column_stack([noisy[:, i], np.ones(4000)]), np.full(4000, x0[i]), rcond=None)[0]
            for i in range(len(x0))]
    a, b = np.array(coef).T

    class Linear:
        def __call__(self, x, sigma, host, cond):
            flat = a * np.concatenate(x.blocks()) + b
            return FeatureTriple(flat[:2], flat[2:3], flat[3:])

    out = reverse_sde_sample(Linear(), host, None, NoiseConfig(), rng)
    for u, v in zip(out.blocks(), target.blocks()):
        assert np.allclose(u, v, atol=0.1)


def test_n_plus_fixed_point():
    assert n_plus(10, 0.2) == 3
    for n in range(1, 40):
        for rho in (0.1, 0.2, 0.3):
            m = n_plus(n, rho)
            assert m == int(np.ceil(rho * (n + m) - 1e-9))


def test_thresholds():
    assert list(threshold_right([2.0, 2.4, 1.0, 1.66, 2.33])) == [2, 3, 1, 2, 3]
    assert list(threshold_left_free([1.4, 1.6])) == [1, 2]
    assert list(threshold_left_topk([0.3, 0.9, 0.9, 0.1], 2)) == [1, 2, 2, 1]
    assert list(threshold_edges([0.4, 0.6])) == [0, 1]


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 3))
def test_right_threshold_monotone(s, bump):
    assert threshold_right([s + bump])[0] >= threshold_right([s])[0]


def _replay(h, seed):
    rng = np.random.default_rng(seed)
    seq, perm_l, _ = align_sequence(sample_coarsening_sequence(h, rng=rng))
    return ReplayDenoiser(seq), h.relabel(perm_l)


@pytest.mark.parametrize("seed", range(5))
def test_replay_reconstructs_tree(seed):
    h = gen_tree(16, rng=np.random.default_rng(seed))
    stub, expected = _replay(h, seed)
    out = sample_free(stub, h.num_nodes, SampleConfig(), np.random.default_rng(seed))
    assert out.canonical() == expected.canonical()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_replay_reconstructs_every_level(seed):
    h = gen_tree(10, rng=np.random.default_rng(seed))
    rng = np.random.default_rng(seed)
    seq, _, _ = align_sequence(sample_coarsening_sequence(h, rng=rng))
    trace = sample_bipartite(ReplayDenoiser(seq), h.num_nodes, SampleConfig(), rng, "free")
    # the first iteration re-selects the edge of the minimal pair
    assert trace.sizes == [1] + [g.n_left for g in reversed(seq.graphs)]
    assert trace.bipartite == seq.graphs[0]


def test_zero_denoiser_hits_cap(rng):
    class Zero:
        def __call__(self, x, sigma, host, cond):
            return FeatureTriple(np.ones(host.n_left), np.ones(host.n_right), np.ones(host.num_edges))

    with pytest.raises(SamplingError):
        sample_free(Zero(), 8, SampleConfig(cap_factor=1), rng)


@pytest.mark.parametrize("n_target", [2, 5, 8, 13])
def test_deterministic_size_contract(n_target, rng):
    m = ReferenceDenoiser.initialize(ModelConfig(), rng)
    trace = sample_bipartite(m, n_target, SampleConfig(noise=NoiseConfig(sampler_steps=4)), rng)
    assert trace.bipartite.n_left == n_target
    assert trace.hypergraph.num_nodes <= n_target


def test_make_conditioning_parents():
    b = minimal_bipartite()
    cond = make_conditioning(b, ExpansionVectors(np.array([2]), np.array([3])), 8, 0.3, 1, 1, np.random.default_rng(0))
    assert list(cond.parents[0]) == [0, 0] and list(cond.parents[1]) == [0, 0, 0]


# -- training ---------------------------------------------------------------------


def test_level_examples_match_labels(rng):
    h = gen_tree(12, rng=rng)
    seq = align_sequence(sample_coarsening_sequence(h, rng=rng))[0]
    for level in range(seq.length + 1):
        ex = level_example(seq, level, PerturbConfig(radius=0, p=0.0), 8, 8, rng)
        kept = BipartiteGraph(ex.host.n_left, ex.host.n_right,
                              tuple(e for e, s in zip(ex.host.edges, ex.target.e) if s))
        assert kept == seq.graphs[level]
        assert ex.target.vl.sum() == (seq.graphs[level - 1].n_left if level else seq.graphs[0].n_left)


def test_level_cache_draws_without_replacement(rng):
    cache = LevelCache([gen_tree(10, rng=rng)], TrainConfig().coarsen)
    seq, first = cache.draw(0, rng)
    levels = {first} | {cache.draw(0, rng)[1] for _ in range(seq.length)}
    assert levels == set(range(seq.length + 1)) and cache.regenerations == 1


def test_training_reduces_loss_and_is_deterministic():
    h = Hypergraph(6, ((0, 1, 2), (2, 3), (3, 4, 5)))
    cfg = TrainConfig(steps=150, lr=1e-2, batch_size=2, model=ModelConfig(hidden=16, rounds=2))
    erng = np.random.default_rng(9)
    cache = LevelCache([h], cfg.coarsen)
    batch = []
    for _ in range(24):
        seq, lvl = cache.draw(0, erng)
        ex = level_example(seq, lvl, cfg.perturb, 8, 8, erng)
        batch.append((ex, cfg.noise.sample_training_sigma(erng), FeatureTriple.standard_normal(ex.host, erng)))
    m0 = ReferenceDenoiser.initialize(cfg.model, np.random.default_rng(1))
    before = batch_loss_and_grad(m0, batch)[0]
    res = train([h], cfg, np.random.default_rng(1))
    after = batch_loss_and_grad(res.model, batch)[0]
    assert after < before
    again = train([h], cfg, np.random.default_rng(1))
    assert again.log == res.log


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_resume_through_checkpoint_is_bitwise(tmp_path, optimizer):
    dataset = [gen_tree(8, rng=np.random.default_rng(s)) for s in range(2)]
    cfg = TrainConfig(steps=7, lr=1e-2, optimizer=optimizer, batch_size=2, model=SMALL, spectral_k=SMALL.embed_dim)
    full = train(dataset, cfg, np.random.default_rng(4))
    head = train(dataset, TrainConfig(**{**cfg.__dict__, "steps": 4}), np.random.default_rng(4))
    save_checkpoint(tmp_path / "ck.json", head.model, 4, train_state=head.state)
    model, blob = load_checkpoint(tmp_path / "ck.json")
    tail = train(dataset, TrainConfig(**{**cfg.__dict__, "steps": 3}), None, model=model, resume=blob["train_state"])
    assert tail.log == full.log[4:]
    assert np.array_equal(flatten_params(tail.model.params, SMALL), flatten_params(full.model.params, SMALL))


def test_checkpoint_round_trip(tmp_path, rng):
    m = ReferenceDenoiser.initialize(SMALL, rng)
    path = tmp_path / "ck.json"
    save_checkpoint(path, m, seed=5, config={"a": 1})
    m2, blob = load_checkpoint(path)
    assert blob["seed"] == 5 and m2.cfg == SMALL
    assert np.array_equal(flatten_params(m.params, SMALL), flatten_params(m2.params, SMALL))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(spectral_k=4)
