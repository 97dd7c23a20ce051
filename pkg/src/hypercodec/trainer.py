"""Training loop: AdamW with decoupled weight decay and global-norm clipping.

Batches are reshuffled every epoch with a permutation fixed by ``(seed, epoch)``;
after the last epoch the decision threshold is chosen on dev scores by macro-F1.
Everything runs single-threaded so a (seed, config, data) triple reproduces the
same parameters bit-for-bit.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .config import TrainConfig
from .data import batch_iter, require_both_classes
from .diffcore import Param, Tape
from .errors import NumericDomainError, StructuralError
from .model import Detector, Item

log = logging.getLogger(__name__)


def adamw_update(value, grad, m, v, step: int, lr: float, betas, eps: float, weight_decay: float) -> None:
    """One in-place AdamW update of ``value``; ``m``/``v`` are updated too. ``step`` starts at 1."""
    b1, b2 = betas
    if weight_decay:
        value *= 1.0 - lr * weight_decay
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    def __init__(self, params: list[Param], lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, no_decay=()):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.step_count += 1
        for p in self.params:
            wd = 0.0 if p.name in self.no_decay else self.weight_decay
            adamw_update(p.value, p.grad, self.m[p.name], self.v[p.name], self.step_count,
                         self.lr, self.betas, self.eps, wd)


def global_grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= factor
    return norm


@dataclass
class TrainResult:
    model: Detector
    optimizer: AdamW
    threshold: float
    history: list = field(default_factory=list)
    epochs_done: int = 0


def train_step(model: Detector, optimizer: AdamW, batch: list[Item], grad_clip: float) -> dict:
    model.zero_grad()
    tape = Tape()
    out = model.batch_loss(tape, batch)
    if not math.isfinite(out.parts["total"]):
        raise NumericDomainError(f"non-finite loss {out.parts}")
    tape.backward(out.total)
    params = model.params()
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericDomainError(f"non-finite gradient in {p.name}")
    clip_grad_norm(params, grad_clip)
    optimizer.step()
    return out.parts


def make_optimizer(model: Detector, config: TrainConfig) -> AdamW:
    return AdamW(model.params(), lr=config.lr, betas=config.betas, eps=config.eps,
                 weight_decay=config.weight_decay, no_decay=model.no_decay_names())


def train(config: TrainConfig, train_items: list[Item], dev_items: list[Item], log_file=None) -> TrainResult:
    """Run the full epoch loop and pick the dev threshold.

    ``log_file``, if given, is a writable text stream receiving one JSON record per epoch.
    """
    if not train_items or not dev_items:
        raise StructuralError("train and dev splits must be non-empty")
    require_both_classes(train_items, "train")
    require_both_classes(dev_items, "dev")
    dims = {it.features.shape[1] for it in train_items + dev_items}
    if dims != {config.input_dim}:
        raise StructuralError(f"feature dimension {sorted(dims)} does not match input_dim={config.input_dim}")
    model = Detector(config)
    optimizer = make_optimizer(model, config)
    history = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        sums = {"cls": 0.0, "cluster": 0.0, "sep": 0.0, "total": 0.0}
        n_batches = 0
        for batch_idx, batch in enumerate(batch_iter(train_items, config.batch_size, config.seed, epoch)):
            try:
                parts = train_step(model, optimizer, batch, config.grad_clip)
            except NumericDomainError as exc:
                raise NumericDomainError(f"epoch {epoch}, batch {batch_idx}: {exc}") from exc
            for k in sums:
                sums[k] += parts[k]
            n_batches += 1
        record = {"epoch": epoch, **{f"loss_{k}": v / n_batches for k, v in sums.items()},
                  "wall_time": time.perf_counter() - start}
        history.append(record)
        log.info("epoch %d total %.4f cls %.4f cluster %.4f sep %.4f (%.1fs)", epoch,
                 record["loss_total"], record["loss_cls"], record["loss_cluster"],
                 record["loss_sep"], record["wall_time"])
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
    dev_scores = model.score_all(dev_items)
    threshold, _ = metrics.select_threshold([s.is_fake for s in dev_scores], [s.p_fake for s in dev_scores])
    return TrainResult(model, optimizer, threshold, history, config.epochs)


def evaluate(model: Detector, items: list[Item], threshold: float, detail: bool = False):
    """Score ``items`` and return ``(scores, summary)``; summary has overall and per-group rows."""
    scores = model.score_all(items, detail)
    labels = [s.is_fake for s in scores]
    probs = [s.p_fake for s in scores]
    summary = {"overall": metrics.summarize(labels, probs, threshold)}
    for group in sorted({s.group for s in scores}):
        sel = [s for s in scores if s.group == group]
        summary[group] = metrics.summarize([s.is_fake for s in sel], [s.p_fake for s in sel], threshold)
    return scores, summary
