"""Fine-tuning loop: AdamW, linear warmup/decay, global-norm clipping.

The recipe is intentionally rigid (one schedule, no early stopping, no model
selection) so that differences between evaluation configurations cannot be
confounded by differing training budgets. Single-worker execution is
bit-for-bit deterministic given the config seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import TokenizedSplit
from .model import Checkpoint, DropoutConfig, forward, logits, preset
from .rng import RngStream


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    warmup_fraction: float = 0.10
    epochs: int = 5
    train_batch: int = 16
    eval_batch: int = 32
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    train_dropout: DropoutConfig = field(default_factory=lambda: preset("baseline"))
    seed: int = 42

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.epochs <= 0 or self.train_batch <= 0 or self.eval_batch <= 0:
            raise ValueError("epochs and batch sizes must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def schedule_lr(step: int, total_steps: int, warmup_fraction: float, peak_lr: float) -> float:
    """Piecewise-linear rate: 0 -> peak over the warmup steps, then down to 0.

    step counts optimizer updates from 0; the final update uses one
    increment above zero.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = int(total_steps * warmup_fraction)
    if warmup > 0 and step < warmup:
        return peak_lr * step / warmup
    if total_steps == warmup:
        return peak_lr
    return peak_lr * (total_steps - step) / (total_steps - warmup)


def clip_gradients(grads: Dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most
    clip_norm; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > clip_norm and norm > 0.0:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _decays(name: str) -> bool:
    """Weight decay applies to projection/embedding matrices only."""
    last = name.rsplit(".", 1)[-1]
    return not (last in ("gain", "bias") or last.startswith("b"))


class AdamW:
    """Decoupled weight decay Adam (bias-corrected moments)."""

    def __init__(
        self,
        params: Dict[str, Tensor],
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue  # off-path parameter: zero gradient, no update
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay > 0.0 and _decays(name):
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update


def collect_grads(params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    """Gradients after backward(); parameters off the loss path get zeros."""
    return {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad)
        for name, t in params.items()
    }


def _predict_probs(ckpt: Checkpoint, ids: np.ndarray, batch_size: int) -> np.ndarray:
    rows = []
    for start in range(0, len(ids), batch_size):
        rows.append(forward(ckpt, ids[start:start + batch_size], preset("deterministic")))
    return np.concatenate(rows, axis=0)


def evaluate_plain(
    ckpt: Checkpoint, ids: np.ndarray, labels: np.ndarray, batch_size: int = 32
) -> float:
    """Single deterministic pass; prediction is the class with probability
    above 0.5, a tie at exactly 0.5 counting as the negative class."""
    if len(ids) == 0:
        raise ValueError("cannot evaluate an empty sample set")
    probs = _predict_probs(ckpt, ids, batch_size)
    preds = probs[:, 1] > 0.5
    return float(np.mean(preds == labels.astype(bool)))


def train(
    ckpt: Checkpoint, data: TokenizedSplit, config: Optional[TrainConfig] = None
) -> List[dict]:
    """Fine-tune in place; returns per-epoch history records
    ({"epoch", "loss", "accuracy"})."""
    config = config or TrainConfig()
    n = len(data.train_ids)
    if n == 0:
        raise ValueError("train set is empty")
    if data.vocab.size > ckpt.model_config.vocab_size:
        raise ValueError("tokenized vocabulary exceeds the model's vocab_size")

    steps_per_epoch = math.ceil(n / config.train_batch)
    total_steps = steps_per_epoch * config.epochs
    optimizer = AdamW(ckpt.parameters, weight_decay=config.weight_decay)
    shuffle_gen = RngStream(config.seed, stream_id=11).generator()
    dropout_root = RngStream(config.seed, stream_id=13)

    history: List[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_gen.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.train_batch):
            idx = order[start:start + config.train_batch]
            xb, yb = data.train_ids[idx], data.train_labels[idx]
            for p in ckpt.parameters.values():
                p.zero_grad()
            batch_logits = logits(
                ckpt, xb, config.train_dropout,
                active=not config.train_dropout.is_deterministic,
                rng=dropout_root.substream(step),
            )
            out = ag.cross_entropy(batch_logits, yb)
            out.backward()
            grads = collect_grads(ckpt.parameters)
            clip_gradients(grads, config.clip_norm)
            lr = schedule_lr(step, total_steps, config.warmup_fraction, config.learning_rate)
            optimizer.step(grads, lr)
            loss_sum += out.item() * len(idx)
            step += 1
        accuracy = evaluate_plain(ckpt, data.train_ids, data.train_labels, config.eval_batch)
        history.append(
            {"epoch": epoch + 1, "loss": loss_sum / n, "accuracy": accuracy}
        )
    return history


def write_history(history: List[dict], path) -> None:
    """Line-delimited epoch/loss/accuracy records next to the checkpoint."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": 1, "kind": "training_history"}) + "\n")
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
