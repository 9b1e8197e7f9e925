"""``bitdiff`` command line: train, sample, eval, bench, analyze, gen-data.

Every command prints JSON to stdout.  Failures exit with status 1 (2 for
usage errors) after printing one JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig
from .diffusion.checkpoint import load_samples, save_samples
from .diffusion.data import DATASETS, generate, write_pgm
from .efficiency import PUBLISHED_ARCH


def _config(args) -> RunConfig:
    return RunConfig.load(args.config, args.set)


def cmd_train(args) -> dict:
    from .train import run_training

    cfg = _config(args)
    log = (lambda line: print(line, file=sys.stderr)) if args.verbose else None
    return run_training(cfg, resume=args.resume, log=log)


def cmd_sample(args) -> dict:
    from .experiments import sample_checkpoint

    cfg = _config(args)
    samples = sample_checkpoint(cfg, args.checkpoint, n=args.n, steps=args.steps)
    out = args.out or os.path.join(cfg["out_dir"], "samples.bin")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_samples(out, samples)
    if args.pgm and samples.shape[-1] > 1:
        write_pgm(args.pgm, samples[:64])
    bs = cfg["sample.batch_size"]
    batches = [
        {"mean": float(samples[i : i + bs].mean()), "std": float(samples[i : i + bs].std())}
        for i in range(0, len(samples), bs)
    ]
    return {"samples": out, "shape": list(samples.shape), "finite": bool(np.isfinite(samples).all()),
            "batches": batches}


def cmd_eval(args) -> dict:
    from .evaluate import evaluate_samples

    samples = load_samples(args.samples)
    return evaluate_samples(samples, args.dataset, args.seed)


def cmd_bench(args) -> dict:
    from .bitkernel import DEFAULT_BENCH_SHAPE, bench_conv

    shape = DEFAULT_BENCH_SHAPE
    if args.shape:
        c, h, w, m, k = (int(v) for v in args.shape.split(","))
        shape = ((c, h, w), (m, c, k, k))
    return bench_conv(shape, repetitions=args.reps, padding=args.padding, seed=args.seed)


def cmd_analyze(args) -> dict:
    from .efficiency import ArchSpec, report, unet_arch

    if args.preset:
        cfg = RunConfig({"preset": args.preset})
        spec = cfg.unet_spec()
        size = args.size or (16 if cfg["dataset"] == "sprites16" else 1)
        fp = unet_arch(spec.replace(mode="fp"), size, name=f"{args.preset}-fp")
        bi = unet_arch(spec.replace(mode="binary"), size, name=f"{args.preset}-binary")
        return report(bi, fp)
    path = args.arch or PUBLISHED_ARCH
    arch = ArchSpec.load(path)
    baseline = ArchSpec.load(args.baseline) if args.baseline else None
    return report(arch, baseline)


def cmd_gen_data(args) -> dict:
    rng = np.random.default_rng([args.seed, 0])
    data = generate(args.dataset, args.n, rng)
    save_samples(args.out, data)
    return {"out": args.out, "shape": list(data.shape)}


def _reps(text: str) -> int:
    n = int(text)
    if n < 3:
        raise argparse.ArgumentTypeError(f"need at least 3 repetitions, got {n}")
    return n


class _Parser(argparse.ArgumentParser):
    """Usage errors as one JSON line on stderr, exit status 2."""

    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}), file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bitdiff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", "-c", help="key = value config file")
        sp.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        return sp

    sp = with_config(sub.add_parser("train", help="train a model"))
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--verbose", "-v", action="store_true", help="echo metrics to stderr")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("sample", help="DDIM samples from a checkpoint"))
    sp.add_argument("checkpoint")
    sp.add_argument("--n", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", help="sample archive path (default out_dir/samples.bin)")
    sp.add_argument("--pgm", help="also write a tiled PGM preview")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="MMD of a sample archive against fresh reference data")
    sp.add_argument("samples")
    sp.add_argument("--dataset", default="sprites16", choices=DATASETS)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="packed binary conv vs dense float conv timing")
    sp.add_argument("--shape", help="c,h,w,m,k (default 448,32,32,448,3)")
    sp.add_argument("--reps", type=_reps, default=10, help="timed repetitions (>= 3)")
    sp.add_argument("--padding", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("analyze", help="BOPs / FLOPs / storage report")
    sp.add_argument("arch", nargs="?", help="architecture JSON (default: bundled published_totals.arch)")
    sp.add_argument("--baseline", help="baseline architecture JSON")
    sp.add_argument("--preset", help="analyze the U-Net of a config preset instead")
    sp.add_argument("--size", type=int, help="input side length for --preset (default: dataset size)")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("gen-data", help="write a dataset draw as a sample archive")
    sp.add_argument("--dataset", default="sprites16", choices=DATASETS)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if os.environ.get("BITDIFF_SEED") and hasattr(args, "seed") and args.command != "train":
        args.seed = int(os.environ["BITDIFF_SEED"])
    try:
        result = args.func(args)
    except Exception as e:  # noqa: BLE001 - every failure becomes one JSON line
        err = {"error": type(e).__name__, "message": str(e)}
        if getattr(e, "key", None):
            err["key"] = e.key
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
