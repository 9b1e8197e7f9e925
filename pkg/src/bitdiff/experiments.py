"""Sampling from checkpoints and the four-way technique ablation."""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .config import RunConfig
from .diffusion.sampler import ddim_sample
from .evaluate import evaluate_samples
from .train import load_model, load_tbs, run_training

SAMPLE_STREAM = 2**31 - 3

ABLATION_VARIANTS = {
    "vanilla": {},
    "tbs": {"model.act_mode": "bidm_learnable_k", "tbs.enabled": True},
    "spd": {"spd.enabled": True},
    "both": {"model.act_mode": "bidm_learnable_k", "tbs.enabled": True, "spd.enabled": True},
}


def sample_checkpoint(cfg: RunConfig, checkpoint, n: int | None = None, steps: int | None = None,
                      seed: int | None = None) -> np.ndarray:
    """DDIM samples from ``checkpoint`` using the config's schedule and TBS settings."""
    model, tensors = load_model(checkpoint, cfg.unet_spec())
    tbs = load_tbs(tensors, cfg.tbs_blocks(), cfg["tbs.alpha_init"]) if cfg["tbs.enabled"] else None
    n = cfg["sample.n"] if n is None else n
    steps = cfg["sample.steps"] if steps is None else steps
    seed = cfg["seed"] if seed is None else seed
    spec = model.spec
    size = 16 if cfg["dataset"] == "sprites16" else 1
    rng = np.random.default_rng([seed, SAMPLE_STREAM])
    return ddim_sample(model, cfg.schedule(), (n, spec.in_channels, size, size), steps, rng,
                       eta=cfg["sample.eta"], tbs=tbs, batch_size=cfg["sample.batch_size"],
                       clip=cfg["sample.clip"] or None)


def run_ablation(base: RunConfig, out_dir: str, teacher_iters: int | None = None,
                 eval_variants=("vanilla", "tbs", "spd", "both"), log=print) -> dict:
    """Train a full-precision teacher, then the four binary variants from it.

    All variants share seed, data stream, budget and initial weights.  Returns
    per-variant validation loss, MMD and wall time; also written to
    ``out_dir/ablation.json``.
    """
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    t0 = time.perf_counter()
    teacher_cfg = base.replace(
        model__mode="fp", out_dir=os.path.join(out_dir, "teacher"),
        train__iters=teacher_iters or base["train.iters"],
        tbs__enabled=False, spd__enabled=False, model__init="",
    )
    teacher = run_training(teacher_cfg)
    results["teacher"] = {"val_dm_loss": teacher["val_dm_loss"], "wall_s": time.perf_counter() - t0}
    log(json.dumps({"variant": "teacher", **results["teacher"]}))
    for name, changes in ABLATION_VARIANTS.items():
        t1 = time.perf_counter()
        cfg = base.replace(
            model__mode="binary", model__init=teacher["checkpoint"], spd__teacher=teacher["checkpoint"],
            out_dir=os.path.join(out_dir, name), **{k.replace(".", "__"): v for k, v in changes.items()},
        )
        res = run_training(cfg)
        entry = {"val_dm_loss": res["val_dm_loss"]}
        if name in eval_variants:
            samples = sample_checkpoint(cfg, res["checkpoint"], n=cfg["eval.n"])
            entry.update(evaluate_samples(samples, cfg["dataset"], cfg["seed"]))
        entry["wall_s"] = time.perf_counter() - t1
        results[name] = entry
        log(json.dumps({"variant": name, **entry}))
    results["total_wall_s"] = time.perf_counter() - t0
    with open(os.path.join(out_dir, "ablation.json"), "w") as f:
        json.dump(results, f, indent=2)
    return results


def ablation_ordering(results: dict) -> dict:
    """The four ordering checks on validation loss plus the MMD comparison."""
    v = {k: results[k]["val_dm_loss"] for k in ABLATION_VARIANTS}
    return {
        "vanilla>=tbs": v["vanilla"] >= v["tbs"],
        "vanilla>=spd": v["vanilla"] >= v["spd"],
        "tbs>=both": v["tbs"] >= v["both"],
        "spd>=both": v["spd"] >= v["both"],
        "mmd_both<mmd_vanilla": results["both"]["mmd"] < results["vanilla"]["mmd"],
    }
