"""Deterministic mini-batch training with moment-based updates.

Every step draws its batch indices, per-sample flow times, and noise from a
counter-based stream keyed on (seed, step), so interrupted and resumed runs
replay the identical sequence. Checkpoints capture parameters, both moment
buffers, the step counter, and the seed; loading one resumes to bit-identical
losses.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import model as M
from . import tensor as T
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

METRICS_FIELDS = ("step", "loss_total", "loss_flow", "loss_entropy", "loss_commit", "lr")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; message names the step."""


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 3e-4
    warmup_steps: int = 500
    clip_norm: float = 1.0
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


class TrainState:
    """Parameters plus optimizer moments, step counter, and seed."""

    def __init__(self, cfg, train_cfg, params=None):
        self.cfg = cfg
        self.train_cfg = train_cfg
        self.params = params if params is not None else M.init_params(cfg)
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.step = 0


def lr_at(train_cfg, step):
    """Linear warmup to the base rate, constant afterwards."""
    warm = max(1, train_cfg.warmup_steps)
    return train_cfg.lr * min(1.0, (step + 1) / warm)


def clip_global_norm(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0.0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= factor
    return total


def adam_step(state, grads, lr):
    """In-place moment update; a zero gradient on zero moments is a no-op."""
    t = state.step + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, tensor in state.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        tensor.data -= np.float32(lr) * update


def sample_batch(seed, step, chunks, batch_size, cfg):
    """Batch indices, per-sample uniform times, and Gaussian noise for a step."""
    rng = np.random.default_rng([int(seed), int(step)])
    idx = rng.integers(0, len(chunks), size=batch_size)
    times = rng.uniform(0.0, 1.0, size=batch_size)
    noise = rng.standard_normal((batch_size, cfg.horizon, cfg.dims)).astype(np.float32)
    return idx, times, noise


def train(state, chunks, steps=None, metrics_path=None, progress=None):
    """Run `steps` optimization steps (default: up to train_cfg.steps total).

    `chunks` is an (N, H, S) float array of standardized action chunks.
    Returns the per-step metrics as a list of dicts and appends them to
    `metrics_path` as CSV when given. Raises TrainingDiverged on a
    non-finite loss, naming the offending step.
    """
    chunks = np.asarray(chunks, dtype=np.float32)
    cfg, tcfg = state.cfg, state.train_cfg
    if steps is None:
        steps = max(0, tcfg.steps - state.step)
    metrics = []
    writer = None
    csv_file = None
    if metrics_path is not None:
        new_file = not _file_has_content(metrics_path)
        csv_file = open(metrics_path, "a", newline="")
        writer = csv.DictWriter(csv_file, fieldnames=METRICS_FIELDS)
        if new_file:
            writer.writeheader()
    try:
        for _ in range(steps):
            row = train_step(state, chunks)
            metrics.append(row)
            if writer is not None:
                writer.writerow(row)
            if progress is not None:
                progress(row)
    finally:
        if csv_file is not None:
            csv_file.close()
    return metrics


def train_step(state, chunks):
    """One optimization step; advances state.step."""
    cfg, tcfg = state.cfg, state.train_cfg
    idx, times, noise = sample_batch(tcfg.seed, state.step, chunks, tcfg.batch_size, cfg)
    batch = chunks[idx]
    M.zero_grads(state.params)
    with T.Tape():
        losses = M.compute_losses(state.params, cfg, batch, noise, times)
        total = losses["total"].item()
        if not math.isfinite(total):
            raise TrainingDiverged(f"non-finite loss at step {state.step}")
        T.backward(losses["total"])
    grads = {k: t.grad for k, t in state.params.items() if t.grad is not None}
    clip_global_norm(grads, tcfg.clip_norm)
    lr = lr_at(tcfg, state.step)
    adam_step(state, grads, lr)
    row = {
        "step": state.step,
        "loss_total": total,
        "loss_flow": losses["flow"].item(),
        "loss_entropy": losses["entropy"].item(),
        "loss_commit": losses["commit"].item(),
        "lr": lr,
    }
    state.step += 1
    return row


def _file_has_content(path):
    try:
        return os.path.getsize(path) > 0
    except OSError:
        return False


# ---------------------------------------------------------------------------
# checkpointing


def save_state(state, path):
    """Full training snapshot: params, moments, step, seed, configs."""
    tensors = {}
    for name, tensor in state.params.items():
        tensors[name] = tensor.data
    for name in state.params:
        tensors[f"adam.m.{name}"] = state.m[name]
    for name in state.params:
        tensors[f"adam.v.{name}"] = state.v[name]
    extra = {
        "step": state.step,
        "train_config": state.train_cfg.to_dict(),
    }
    write_checkpoint(path, state.cfg.to_dict(), tensors, extra=extra)


def load_state(path):
    config, tensors, extra = read_checkpoint(path)
    cfg = M.TokenizerConfig.from_dict(config)
    if "train_config" not in extra:
        raise CheckpointError(f"{path}: missing training metadata; not a training checkpoint")
    tcfg = TrainConfig.from_dict(extra["train_config"])
    params = {}
    for name, arr in tensors.items():
        if name.startswith("adam."):
            continue
        params[name] = T.Tensor(arr, requires_grad=True)
    state = TrainState(cfg, tcfg, params=params)
    for name in params:
        m_name, v_name = f"adam.m.{name}", f"adam.v.{name}"
        if m_name not in tensors or v_name not in tensors:
            raise CheckpointError(f"{path}: missing moment buffers for {name!r}")
        state.m[name] = tensors[m_name].copy()
        state.v[name] = tensors[v_name].copy()
    state.step = int(extra["step"])
    return state


def save_model(cfg, params, path, extra=None):
    """Inference-only checkpoint: config and parameter tensors."""
    write_checkpoint(path, cfg.to_dict(), {k: t.data for k, t in params.items()}, extra=extra)


def load_model(path):
    config, tensors, extra = read_checkpoint(path)
    cfg = M.TokenizerConfig.from_dict(config)
    params = {name: T.Tensor(arr, requires_grad=True)
              for name, arr in tensors.items() if not name.startswith("adam.")}
    return cfg, params, extra
