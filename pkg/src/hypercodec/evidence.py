"""Attention pooling of a context sequence into M evidence vectors."""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .backbone import uniform_init
from .diffcore import Node, Param


class EvidencePooling:
    """M learnable queries, each a scaled dot-product softmax over time.

    ``a[m, t] = softmax_t(q_m . z_t / sqrt(d))`` and ``e_m = sum_t a[m, t] z_t``.
    """

    def __init__(self, n_evidence: int, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.queries = Param("evidence.queries", uniform_init(rng, (n_evidence, dim), dim))

    def params(self) -> list[Param]:
        return [self.queries]

    def __call__(self, tape, z: Node) -> tuple[Node, Node]:
        scores = dc.scale(tape, dc.linear(tape, self.queries, z), 1.0 / math.sqrt(self.dim))
        weights = dc.softmax_rows(tape, scores)
        return dc.matmul(tape, weights, z), weights


def pool(z, queries) -> tuple[np.ndarray, np.ndarray]:
    """Untracked convenience form: returns ``(E, A)`` for plain arrays."""
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64)
    scores = q @ z.T / math.sqrt(z.shape[1])
    a = dc._softmax(scores)
    return a @ z, a
