"""Quantization-aware training loop with checkpoint/resume and JSON-lines metrics.

Every iteration draws its batch from ``default_rng([seed, iteration])``, so
a run is a pure function of its config and resuming needs no RNG state.
"""

from __future__ import annotations

import json
import os
import time
from collections import OrderedDict

import numpy as np

from .config import RunConfig
from .diffusion.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .diffusion.data import generate
from .diffusion.schedule import dm_loss, q_sample
from .diffusion.unet import UNet, UNetSpec
from .nn import Adam
from .spd import combine, spd_terms
from .tbs import TBSParams, training_double_pass
from .tensor import no_grad

VALIDATION_STREAM = 2**31 - 1
CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.jsonl"


def _arch_key(spec: UNetSpec) -> tuple:
    return (spec.depth, spec.widths, spec.in_channels, spec.temb_dim, spec.groups, spec.shortcut)


def check_compatible(spec: UNetSpec, expected: UNetSpec, what: str = "checkpoint") -> None:
    if _arch_key(spec) != _arch_key(expected):
        raise CheckpointError(
            f"{what} architecture (depth={spec.depth}, widths={spec.widths}, in={spec.in_channels}) "
            f"does not match config (depth={expected.depth}, widths={expected.widths}, in={expected.in_channels})"
        )


def load_model(path, expected: UNetSpec | None = None, mode: str | None = None) -> tuple[UNet, OrderedDict]:
    """Rebuild a model from a checkpoint; returns it with the raw tensor dict."""
    spec, tensors = load_checkpoint(path)
    if expected is not None:
        check_compatible(spec, expected)
    if mode is not None and spec.mode != mode:
        raise CheckpointError(f"{path}: expected a {mode} model, found {spec.mode}")
    model = UNet(spec.replace(extra={}))
    model.load_state_dict(tensors)
    return model, tensors


def load_tbs(tensors: dict, blocks, alpha_init: float = 0.3) -> TBSParams:
    params = TBSParams(blocks, alpha_init)
    for b in params.connected_blocks:
        key = f"tbs.alpha.{b}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint has no {key}; was it trained with TBS on these blocks?")
        params.alpha[str(b)].data = np.asarray(tensors[key], np.float32).reshape(()).copy()
    return params


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.sched = cfg.schedule()
        spec = cfg.unet_spec()
        self.model = UNet(spec, seed=cfg["seed"])
        if cfg["model.init"]:
            init_spec, tensors = load_checkpoint(cfg["model.init"])
            check_compatible(init_spec, spec, "model.init")
            self.model.load_state_dict(tensors, strict=False)
            self.model.reset_sigmas()
        self.tbs = TBSParams(cfg.tbs_blocks(), cfg["tbs.alpha_init"]) if cfg["tbs.enabled"] else None
        self.teacher = None
        if cfg.spd_lambda > 0:
            if not cfg["spd.teacher"]:
                raise ValueError("spd.teacher: a teacher checkpoint is required when spd.lambda > 0")
            self.teacher, _ = load_model(cfg["spd.teacher"], spec, mode="fp")
        self.distill = cfg.distill()
        self.optimizer = Adam(self._named_params(), lr=cfg["train.lr"])
        self.iteration = 0

    def _named_params(self) -> OrderedDict:
        params = OrderedDict(self.model.named_parameters())
        if self.tbs is not None:
            params.update((f"tbs.{k}", v) for k, v in self.tbs.named_parameters().items())
        return params

    # state

    def state(self) -> OrderedDict:
        out = OrderedDict(self.model.state_dict())
        if self.tbs is not None:
            out.update((f"tbs.{k}", v) for k, v in self.tbs.state_dict().items())
        out.update(self.optimizer.state_dict())
        out["train.iter"] = np.array([self.iteration], dtype=np.int64)
        return out

    def save(self, path) -> None:
        spec = self.model.spec.replace(extra={"config": self.cfg.to_dict()})
        save_checkpoint(path, spec, self.state())

    def restore(self, path) -> None:
        spec, tensors = load_checkpoint(path)
        check_compatible(spec, self.model.spec, "resume checkpoint")
        self.model.load_state_dict(tensors)
        if self.tbs is not None:
            self.tbs.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("tbs.")})
        self.optimizer.load_state_dict(tensors)
        self.iteration = int(tensors["train.iter"][0])

    # one iteration

    def batch(self, iteration: int):
        rng = np.random.default_rng([self.cfg["seed"], iteration])
        b = self.cfg["train.batch_size"]
        x0 = generate(self.cfg["dataset"], b, rng)
        t = rng.integers(0, self.sched.T, size=b)
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        return x0, t, eps

    def forward(self, x0, t, eps):
        """Return ``(dm, spd_list, total)`` for one batch."""
        if self.tbs is not None:
            dm, eps_pred, feats = training_double_pass(
                x0, t, self.model, self.sched, self.tbs, eps, self.cfg.tbs_stride()
            )
        else:
            eps_pred, feats = self.model(q_sample(x0, t, eps, self.sched), t)
            dm = dm_loss(eps, eps_pred)
        terms = []
        if self.teacher is not None:
            with no_grad():
                _, feats_fp = self.teacher(q_sample(x0, t, eps, self.sched), t)
            terms = spd_terms(feats_fp, feats, self.distill.p)
        return dm, terms, combine(dm, terms, self.distill.lam)

    def step(self) -> dict:
        self.iteration += 1
        x0, t, eps = self.batch(self.iteration)
        dm, terms, total = self.forward(x0, t, eps)
        total.backward()
        self.optimizer.step()
        self.optimizer.zero_grad()
        spd = float(np.mean([float(s.data) for s in terms])) if terms else 0.0
        return {"dm_loss": float(dm.data), "spd_loss": spd, "total_loss": float(total.data)}

    def validation_loss(self) -> float:
        """Noise MSE on a fixed held-out set derived from the seed alone."""
        cfg = self.cfg
        rng = np.random.default_rng([cfg["seed"], VALIDATION_STREAM])
        n, bs = cfg["train.val_size"], cfg["train.batch_size"]
        x0 = generate(cfg["dataset"], n, rng)
        t = rng.integers(0, self.sched.T, size=n)
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        total = 0.0
        with no_grad():
            for s in range(0, n, bs):
                sl = slice(s, s + bs)
                if self.tbs is not None:
                    dm, _, _ = training_double_pass(
                        x0[sl], t[sl], self.model, self.sched, self.tbs, eps[sl], cfg.tbs_stride()
                    )
                else:
                    pred, _ = self.model(q_sample(x0[sl], t[sl], eps[sl], self.sched), t[sl])
                    dm = dm_loss(eps[sl], pred)
                total += float(dm.data) * len(x0[sl])
        return total / n


def _truncate_metrics(path, last_iter: int) -> None:
    if not os.path.exists(path):
        return
    with open(path) as f:
        keep = [line for line in f if line.strip() and json.loads(line).get("iter", 0) <= last_iter
                and "val_dm_loss" not in json.loads(line)]
    with open(path, "w") as f:
        f.writelines(keep)


def run_training(cfg: RunConfig, resume=None, log=None) -> dict:
    """Train to ``train.iters``; writes checkpoints and ``metrics.jsonl`` under ``out_dir``.

    Metrics records are means over each logging interval.  Returns a summary
    with the final validation loss and the checkpoint path.
    """
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, METRICS_NAME)
    trainer = Trainer(cfg)
    if resume:
        trainer.restore(resume)
        _truncate_metrics(metrics_path, trainer.iteration)
    elif os.path.exists(metrics_path):
        os.remove(metrics_path)
    iters, log_every, ckpt_every = cfg["train.iters"], cfg["train.log_every"], cfg["train.ckpt_every"]
    t0 = time.perf_counter()
    acc = {"dm_loss": 0.0, "spd_loss": 0.0, "total_loss": 0.0}
    count = 0

    def emit(record):
        if cfg["train.log_wall"]:
            record["wall_s"] = round(time.perf_counter() - t0, 3)
        line = json.dumps(record)
        with open(metrics_path, "a") as f:
            f.write(line + "\n")
        if log is not None:
            log(line)

    while trainer.iteration < iters:
        stats = trainer.step()
        for k in acc:
            acc[k] += stats[k]
        count += 1
        it = trainer.iteration
        if it % log_every == 0 or it == iters:
            emit({"iter": it, **{k: v / count for k, v in acc.items()}})
            acc = dict.fromkeys(acc, 0.0)
            count = 0
        if it % ckpt_every == 0 and it != iters:
            trainer.save(os.path.join(out_dir, f"ckpt_{it:07d}.bin"))
    ckpt = os.path.join(out_dir, CHECKPOINT_NAME)
    trainer.save(ckpt)
    val = trainer.validation_loss()
    emit({"iter": trainer.iteration, "val_dm_loss": val})
    return {"checkpoint": ckpt, "metrics": metrics_path, "iterations": trainer.iteration, "val_dm_loss": val}
