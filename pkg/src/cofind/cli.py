"""Command line entry point: ``cofind {generate,train,infer,bench,gridsearch,oneshot}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, synth
from .core import Episode
from .potentials import Potentials, RelationModel, UnaryMode, cosine_baseline_provider
from .training import TrainConfig, train, write_loss_trace

log = logging.getLogger("cofind")


def _add_generator_flags(p):
    g = p.add_argument_group("generator")
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--N", type=int, default=8, help="positive bags per episode")
    g.add_argument("--B", type=int, default=5, help="items per positive bag")
    g.add_argument("--B-bar", type=int, default=10, help="negative bag size (0 for none)")
    g.add_argument("--M-min", type=int, default=5)
    g.add_argument("--M-max", type=int, default=15)
    g.add_argument("--noise-sigma", type=float, default=0.1)
    g.add_argument("--prototype-scale", type=float, default=None)
    g.add_argument("--separation", type=float, default=3.0,
                   help="prototype_scale / noise_sigma, used when --prototype-scale is not given")
    g.add_argument("--train-classes", type=int, default=64)
    g.add_argument("--val-classes", type=int, default=16)
    g.add_argument("--test-classes", type=int, default=20)


def _generator_config(args) -> synth.GeneratorConfig:
    scale = args.prototype_scale
    if scale is None:
        scale = args.separation * args.noise_sigma
    return synth.GeneratorConfig(
        dim=args.dim, num_train_classes=args.train_classes, num_val_classes=args.val_classes,
        num_test_classes=args.test_classes, prototype_scale=scale, noise_sigma=args.noise_sigma,
        N=args.N, B=args.B, B_bar=args.B_bar, M_range=(args.M_min, args.M_max), seed=args.seed,
    )


def _add_model_flags(p):
    p.add_argument("--pairwise-model", type=Path, help="pairwise relation model JSON")
    p.add_argument("--unary-model", type=Path, help="unary relation model JSON")
    p.add_argument("--unary-mode", choices=[m.value for m in UnaryMode], default="softmax")


def _potentials(args):
    if args.pairwise_model is None:
        return None
    unary = RelationModel.load(args.unary_model) if args.unary_model else None
    return Potentials(RelationModel.load(args.pairwise_model), unary, args.unary_mode)


def _write_json(obj, output):
    text = json.dumps(obj, indent=2)
    if output is None:
        print(text)
    else:
        Path(output).write_text(text + "\n")


def cmd_generate(args):
    cfg = _generator_config(args)
    episodes = synth.generate_episodes(cfg, args.split, args.count)
    synth.save_dataset(episodes, args.output, cfg)
    log.info("wrote %d %s episodes to %s", len(episodes), args.split, args.output)


def cmd_train(args):
    episodes = synth.load_dataset(args.dataset)
    if not episodes:
        raise ValueError(f"{args.dataset} holds no episodes")
    cfg = TrainConfig(
        learning_rate=args.lr, decay_factor=args.decay, decay_every=args.decay_every,
        num_steps=args.steps, batch_episodes=args.batch, seed=args.seed, init_scale=args.init_scale,
    )
    order = np.random.default_rng(args.seed)

    def stream():
        while True:
            for i in order.permutation(len(episodes)):
                yield episodes[i]

    result = train(args.role, stream(), cfg, unary_mode=args.unary_mode)
    result.model.save(args.output)
    if args.trace:
        write_loss_trace(result.trace, args.trace)
    final = result.trace[-1][1] if result.trace else float("nan")
    log.info("trained %s model for %d steps, final loss %.4f", args.role, len(result.trace), final)


def _bench_config(args) -> bench.BenchConfig:
    return bench.BenchConfig(k=args.k, eta=args.eta, seed=args.seed)


def _resolve(method, pots, dim, mode):
    family, algo = bench.split_method(method)
    if family == "cosine":
        return algo, cosine_baseline_provider(dim, mode)
    if pots is None:
        raise ValueError(f"method {method!r} needs --pairwise-model")
    return algo, pots


def cmd_infer(args):
    episode = Episode.from_dict(json.loads(Path(args.episode).read_text()))
    algo, pots = _resolve(args.method, _potentials(args), episode.dim, args.unary_mode)
    res = bench.run_method(algo, pots(episode), _bench_config(args), args.eta)
    record = res.to_record()
    record["method"] = args.method
    _write_json(record, args.output)


def cmd_bench(args):
    episodes = synth.load_dataset(args.dataset)
    pots = _potentials(args)
    cfg = _bench_config(args)
    etas = {}
    if args.eta_grid:
        if args.validation is None:
            raise ValueError("--eta-grid needs --validation")
        val = synth.load_dataset(args.validation)
        for method in args.methods:
            algo, p = _resolve(method, pots, episodes[0].dim, args.unary_mode)
            if algo in ("greedy", "loopy-bp", "icm", "exhaustive"):
                etas[method] = bench.grid_search_eta(val, p, algo, args.eta_grid, cfg)
    report = bench.run_benchmark(episodes, pots, args.methods, cfg, etas=etas)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_records(out / "episodes.jsonl")
    report.write_runtime_vs_accuracy(out / "runtime_vs_accuracy.csv")
    (out / "metadata.json").write_text(json.dumps(report.metadata, indent=2) + "\n")
    for r in report.rows:
        log.info("%-22s success %.4f +/- %.4f  energy %.4f  time %.5fs  pairwise %.3f",
                 r.method, r.success_mean, r.success_ci, r.energy_mean, r.seconds_mean,
                 r.pairwise_fraction_mean)


def cmd_gridsearch(args):
    episodes = synth.load_dataset(args.dataset)
    algo, pots = _resolve(args.method, _potentials(args), episodes[0].dim, args.unary_mode)
    cfg = _bench_config(args)
    scores = bench.score_etas(episodes, pots, algo, args.grid, cfg)
    best = bench.grid_search_eta(episodes, pots, algo, args.grid, cfg)
    _write_json({"eta": best, "scores": {str(k): v for k, v in scores.items()}}, args.output)


def cmd_oneshot(args):
    cfg = _generator_config(args)
    rng = np.random.default_rng([args.seed, 5])
    episodes = [synth.generate_one_shot_episode(cfg, args.split, rng, args.ways)
                for _ in range(args.count)]
    scorer = RelationModel.load(args.pairwise_model)
    mean, half = bench.one_shot_eval(scorer, episodes)
    _write_json({"accuracy": mean, "ci95": half, "episodes": args.count}, args.output)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cofind", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset (JSON lines)")
    _add_generator_flags(p)
    p.add_argument("--split", choices=synth.SPLITS, default="train")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a pairwise or unary relation model")
    p.add_argument("--role", choices=["pairwise", "unary"], required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--unary-mode", choices=[m.value for m in UnaryMode], default="softmax")
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--decay", type=float, default=TrainConfig.decay_factor)
    p.add_argument("--decay-every", type=int, default=TrainConfig.decay_every)
    p.add_argument("--steps", type=int, default=TrainConfig.num_steps)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_episodes)
    p.add_argument("--init-scale", type=float, default=TrainConfig.init_scale)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="loss trace CSV (step,loss,learning_rate)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    def inference_flags(p, many=False):
        _add_model_flags(p)
        if many:
            p.add_argument("--method", dest="methods", action="append", required=True,
                           help="repeatable; e.g. greedy, loopy-bp, cosine-greedy")
        else:
            p.add_argument("--method", default="greedy")
        p.add_argument("--k", type=int, default=300)
        p.add_argument("--eta", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("infer", help="run one method on one episode JSON file")
    p.add_argument("--episode", required=True)
    inference_flags(p)
    p.add_argument("--output")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="benchmark methods over a dataset")
    p.add_argument("--dataset", required=True)
    inference_flags(p, many=True)
    p.add_argument("--eta-grid", type=float, nargs="+")
    p.add_argument("--validation", help="validation dataset for --eta-grid")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gridsearch", help="pick eta on a validation dataset")
    p.add_argument("--dataset", required=True)
    inference_flags(p)
    p.add_argument("--grid", type=float, nargs="+", default=list(bench.DEFAULT_ETA_GRID))
    p.add_argument("--output")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("oneshot", help="5-way 1-shot nearest-relation accuracy")
    _add_generator_flags(p)
    p.add_argument("--pairwise-model", type=Path, required=True)
    p.add_argument("--split", choices=synth.SPLITS, default="test")
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_oneshot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError, KeyError) as exc:
        print(f"cofind {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
