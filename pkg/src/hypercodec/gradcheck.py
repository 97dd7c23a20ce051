"""Central finite-difference verification of the model's reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .diffcore import Tape
from .errors import NumericDomainError
from .model import Detector, Item

TINY = dict(input_dim=8, model_dim=8, ball_dim=4, n_evidence=2, n_prototypes=2, n_layers=2)
TINY_FRAMES = 6
FD_STEP = 1e-5
REL_TOL = 1e-4
# Gradients below this magnitude are compared in absolute terms.
REL_FLOOR = 1e-6


def tiny_config(variant: str = "full", seed: int = 7, **overrides) -> TrainConfig:
    return TrainConfig(**{**TINY, "variant": variant, "seed": seed, **overrides})


def tiny_batch(config: TrainConfig, seed: int, frames: int = TINY_FRAMES) -> list[Item]:
    rng = np.random.default_rng([seed, 17])
    return [Item(f"u{i}", rng.normal(size=(frames, config.input_dim)), bool(i % 2), "")
            for i in range(2)]


@dataclass
class GroupReport:
    name: str
    size: int
    max_rel: float
    mean_rel: float


@dataclass
class GradCheckReport:
    variant: str
    loss: float
    groups: list = field(default_factory=list)
    tolerance: float = REL_TOL

    @property
    def max_rel(self) -> float:
        return max((g.max_rel for g in self.groups), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel < self.tolerance

    def format(self) -> str:
        lines = [f"variant\t{self.variant}", f"loss\t{self.loss:.17g}",
                 "group\tsize\tmax_rel\tmean_rel"]
        lines += [f"{g.name}\t{g.size}\t{g.max_rel:.3e}\t{g.mean_rel:.3e}" for g in self.groups]
        lines.append(f"max_rel\t{self.max_rel:.3e}\t{'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:g})")
        return "\n".join(lines)


def _loss(model: Detector, batch) -> float:
    value = model.batch_loss(None, batch).parts["total"]
    if not np.isfinite(value):
        raise NumericDomainError(f"non-finite loss {value}")
    return value


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_difference_check(config: TrainConfig | None = None, seed: int = 7,
                            batch: list[Item] | None = None, step: float = FD_STEP) -> GradCheckReport:
    """Compare tape gradients with central differences on every scalar parameter."""
    config = config or tiny_config(seed=seed)
    model = Detector(config)
    batch = batch if batch is not None else tiny_batch(config, seed)
    model.zero_grad()
    tape = Tape()
    out = model.batch_loss(tape, batch)
    tape.backward(out.total)
    report = GradCheckReport(config.variant, out.parts["total"])
    for p in model.params():
        analytic = p.grad.copy()
        numeric = np.empty_like(analytic)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _loss(model, batch)
            flat[i] = orig - step
            down = _loss(model, batch)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * step)
        rel = relative_error(analytic, numeric)
        report.groups.append(GroupReport(p.name, p.value.size, float(rel.max()), float(rel.mean())))
    return report
