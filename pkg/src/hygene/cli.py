"""Command-line entry point: generate-data, coarsen, train, sample, eval."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .coarsen import CoarseningError, align_sequence, length_bound, sample_coarsening_sequence
from .config import ConfigError, RunConfig, config_from_dict, read_config
from .datagen import KINDS, GenerationError, make_dataset
from .diffusion.pipeline import SamplingError, load_checkpoint, sample_bipartite, save_checkpoint, train
from .evaluate import VALIDATORS, evaluate
from .hcore import InvalidGraphError, from_bipartite, is_connected, read_jsonl, write_jsonl

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ALGORITHM = 3
EXIT_IO = 4


class UsageError(ValueError):
    """Bad command-line input, reported with exit code 2."""


def _run_config(args) -> RunConfig:
    raw = read_config(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if raw.get("seed") is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config file)")
    if getattr(args, "kind", None):
        raw["dataset"] = dict(raw.get("dataset", {}), kind=args.kind)
    return config_from_dict(raw)


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")


def _pmap(fn, items, threads: int) -> list:
    """Map in input order; ``threads`` caps the worker count."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- commands --------------------------------------------------------------------


def cmd_generate_data(args) -> int:
    cfg = _run_config(args)
    data = make_dataset(cfg.dataset)
    paths = data.write(args.out, cfg.dataset.kind)
    for split, graphs in data.splits.items():
        n = np.array([h.num_nodes for h in graphs], dtype=float)
        print(f"{split}: {len(graphs)} graphs, n_avg = {n.mean():.2f}, std = {n.std():.2f} -> {paths[split]}")
    print(f"rejected draws: {data.rejected}")
    return EXIT_OK


def cmd_coarsen(args) -> int:
    cfg = _run_config(args)
    _require_files(args.input)
    graphs = read_jsonl(args.input)
    if not 0 <= args.index < len(graphs):
        raise UsageError(f"--index {args.index} outside 0..{len(graphs) - 1}")
    h = graphs[args.index]
    c = cfg.train.coarsen
    rng = np.random.default_rng(cfg.seed)
    try:
        seq = sample_coarsening_sequence(h, c.rho_min, c.rho_max, c.lam, c.k, rng)
    except CoarseningError as exc:
        if exc.graph is not None:
            stuck = Path(args.out).with_suffix(".stuck.json")
            stuck.parent.mkdir(parents=True, exist_ok=True)
            stuck.write_text(from_bipartite(exc.graph).to_json() + "\n")
            print(f"stuck level written to {stuck}", file=sys.stderr)
        raise
    seq, _, _ = align_sequence(seq)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for level, b in enumerate(seq.graphs):
        row = {
            "level": level,
            "n_left": b.n_left,
            "n_right": b.n_right,
            "connected": is_connected(b),
            "hypergraph": from_bipartite(b).to_dict(),
        }
        if level < seq.length:
            row["step"] = seq.steps[level].to_dict()
            row["reduction_fraction"] = seq.reduction_fractions[level]
        rows.append(row)
    out.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    bound = length_bound(h.num_nodes, c.rho_min)
    print(f"levels: {seq.length} (bound {bound})")
    print(f"max right cluster: {seq.max_right_cluster}")
    print(f"all levels connected: {all(r['connected'] for r in rows)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    _require_files(args.train, args.resume)
    dataset = read_jsonl(args.train)
    if not dataset:
        raise UsageError(f"{args.train} holds no graphs")
    tcfg = cfg.train if args.steps is None else dataclasses.replace(cfg.train, steps=args.steps)
    model, state = None, None
    if args.resume:
        model, blob = load_checkpoint(args.resume)
        state = blob.get("train_state")
        if state is None:
            raise UsageError(f"{args.resume} carries no training state to resume from")
        tcfg = dataclasses.replace(tcfg, model=model.cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(dataset, tcfg, np.random.default_rng(cfg.seed), model=model, resume=state)
    save_checkpoint(out / "checkpoint.json", result.model, cfg.seed, cfg.to_dict(), result.state)
    result.write_log(out / "loss.csv")
    if result.log:
        print(f"steps: {len(result.log)}, first loss {result.log[0][2]:.4f}, last loss {result.log[-1][2]:.4f}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _run_config(args)
    _require_files(args.checkpoint, args.reference)
    model, _ = load_checkpoint(args.checkpoint)
    plan = cfg.sample
    count = plan.count if args.count is None else args.count
    variant = args.variant or plan.variant
    n_target = args.n_target if args.n_target is not None else plan.n_target
    if count < 0:
        raise UsageError("count must be non-negative")
    if n_target is None:
        if args.reference is None:
            raise UsageError("give --n-target or --reference to choose sample sizes")
        ref = read_jsonl(args.reference)
        if not ref:
            raise UsageError(f"{args.reference} holds no graphs")
        targets = [ref[i % len(ref)].num_nodes for i in range(count)]
    else:
        targets = [n_target] * count
    if any(t < 1 for t in targets):
        raise UsageError("n_target must be positive")
    scfg = cfg.sample_config
    seeds = np.random.SeedSequence(cfg.seed).spawn(count)

    def one(i):
        return sample_bipartite(model, targets[i], scfg, np.random.default_rng(seeds[i]), variant)

    traces = _pmap(one, range(count), args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, [t.hypergraph for t in traces])
    print(f"wrote {count} hypergraphs to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    _require_files(args.gen, args.test, args.train)
    if args.validator is not None and args.validator not in VALIDATORS:
        raise UsageError(f"unknown validator {args.validator!r}")
    gen, test = read_jsonl(args.gen), read_jsonl(args.test)
    train_set = read_jsonl(args.train) if args.train else None
    report = evaluate(gen, test, train_set, args.validator, cfg.eval)
    text = report.to_json() if args.report == "json" else report.to_csv()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (required here or in the config)")
    common.add_argument("--threads", type=int, default=1, help="worker cap for per-graph work")

    p = argparse.ArgumentParser(prog="hygene", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="write train/val/test JSONL files")
    g.add_argument("--kind", choices=KINDS)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate_data)

    c = sub.add_parser("coarsen", parents=[common], help="dump a coarsening sequence")
    c.add_argument("--input", required=True, help="JSONL file of hypergraphs")
    c.add_argument("--index", type=int, default=0)
    c.add_argument("--out", required=True, help="output JSONL, one line per level")
    c.set_defaults(func=cmd_coarsen)

    t = sub.add_parser("train", parents=[common], help="fit the reference denoiser")
    t.add_argument("--train", required=True, help="training JSONL file")
    t.add_argument("--steps", type=int, help="override train.steps")
    t.add_argument("--resume", help="checkpoint to continue from (same data and config)")
    t.add_argument("--out", required=True, help="output directory for checkpoint.json and loss.csv")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="generate hypergraphs from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int)
    s.add_argument("--n-target", type=int)
    s.add_argument("--reference", help="JSONL whose node counts are cycled as targets")
    s.add_argument("--variant", choices=("deterministic", "free"))
    s.add_argument("--out", required=True, help="output JSONL")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", parents=[common], help="compare generated and test sets")
    e.add_argument("--gen", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--train")
    e.add_argument("--validator", choices=sorted(VALIDATORS))
    e.add_argument("--report", choices=("csv", "json"), default="json")
    e.add_argument("--out", help="report file (default: stdout)")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except (UsageError, ConfigError, InvalidGraphError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CoarseningError, SamplingError, GenerationError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
