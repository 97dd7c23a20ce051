"""Prototype head: ball projection, responsibilities, evidence scores, instance logits.

One negative prototype stands for real speech and K positive prototypes for
the fake modes.  Prototypes are stored as tangent vectors at the origin and
realized through the exponential map on every forward pass, so plain AdamW
can update them.  The Euclidean variant skips both exponential maps and
measures straight-line distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from . import diffcore as dc
from . import manifold
from .backbone import uniform_init
from .diffcore import Node, Param

PROTOTYPE_INIT_STD = 0.01


@dataclass
class HeadTrace:
    """Graph nodes produced by one forward pass of the head."""

    points: Node      # (M, h) evidence embeddings
    dist_pos: Node    # (M, K)
    dist_neg: Node    # (M, 1)
    logits: Node      # (M, K) = -dist_pos / tau
    s_pos: Node       # (M,)
    S_neg: Node       # scalar
    S_pos: Node       # scalar

    @property
    def p_fake(self) -> float:
        return float(expit(float(self.S_pos.value) - float(self.S_neg.value)))


class PrototypeHead:
    def __init__(self, model_dim: int, ball_dim: int, n_prototypes: int, rng: np.random.Generator,
                 curvature: float = 1.0, temperature: float = 0.1, hyperbolic: bool = True,
                 projection_scale: float = 1.0):
        self.curvature = curvature
        self.temperature = temperature
        self.hyperbolic = hyperbolic
        self.projection = Param("head.projection",
                                projection_scale * uniform_init(rng, (ball_dim, model_dim), model_dim))
        self.neg_tangent = Param("head.proto_neg", rng.normal(0.0, PROTOTYPE_INIT_STD, size=(1, ball_dim)))
        self.pos_tangent = Param("head.proto_pos",
                                 rng.normal(0.0, PROTOTYPE_INIT_STD, size=(n_prototypes, ball_dim)))

    def params(self) -> list[Param]:
        return [self.projection, self.neg_tangent, self.pos_tangent]

    def prototype_params(self) -> list[Param]:
        return [self.neg_tangent, self.pos_tangent]

    @property
    def _metric(self):
        return self.curvature if self.hyperbolic else None

    def embed(self, tape, e: Node) -> Node:
        y = dc.linear(tape, e, self.projection)
        return dc.exp_map_origin(tape, y, self.curvature) if self.hyperbolic else y

    def prototypes(self, tape) -> tuple[Node, Node]:
        """Realized ``(p_neg (1, h), p_pos (K, h))``."""
        if not self.hyperbolic:
            return self.neg_tangent, self.pos_tangent
        return (dc.exp_map_origin(tape, self.neg_tangent, self.curvature),
                dc.exp_map_origin(tape, self.pos_tangent, self.curvature))

    def realized_prototypes(self) -> tuple[np.ndarray, np.ndarray]:
        neg, pos = self.prototypes(None)
        return neg.value[0], pos.value

    def distance(self, tape, x: Node, y: Node) -> Node:
        return dc.pairwise_distance(tape, x, y, self._metric)

    def __call__(self, tape, e: Node, protos=None) -> HeadTrace:
        p_neg, p_pos = protos if protos is not None else self.prototypes(tape)
        points = self.embed(tape, e)
        m = points.shape[0]
        dist_pos = self.distance(tape, points, p_pos)
        dist_neg = self.distance(tape, points, p_neg)
        logits = dc.scale(tape, dist_pos, -1.0 / self.temperature)
        s_pos = dc.logsumexp_rows(tape, logits)
        S_neg = dc.weighted_sum(tape, dist_neg, -1.0 / m)
        S_pos = dc.weighted_sum(tape, s_pos, 1.0 / m)
        return HeadTrace(points, dist_pos, dist_neg, logits, s_pos, S_neg, S_pos)


# -- plain-array scoring (inspection and tests) ----------------------------------


def _distances(points, protos, c):
    if c is None:
        return manifold.euclidean_pairwise_distance(points, protos)
    return manifold.pairwise_distance(points, protos, c)


def responsibilities(points, pos_protos, tau: float = 0.1, c: float | None = 1.0) -> np.ndarray:
    """Soft assignment of each evidence point to the positive prototypes (rows sum to 1)."""
    z = -_distances(np.atleast_2d(points), np.atleast_2d(pos_protos), c) / tau
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def evidence_scores(points, neg_proto, pos_protos, tau: float = 0.1, c: float | None = 1.0):
    """Per-evidence ``(s_neg, s_pos)``: negated distance to p_neg, soft-min over the p_pos."""
    points = np.atleast_2d(points)
    s_neg = -_distances(points, np.atleast_2d(neg_proto), c)[:, 0]
    s_pos = logsumexp(-_distances(points, np.atleast_2d(pos_protos), c) / tau, axis=1)
    return s_neg, s_pos


def aggregate(s_neg, s_pos) -> tuple[float, float, float]:
    """Mean the evidence scores into instance logits and the fake probability."""
    S_neg = float(np.mean(s_neg))
    S_pos = float(np.mean(s_pos))
    return S_neg, S_pos, float(expit(S_pos - S_neg))


def euclidean_variant_scores(E, projection, neg_proto, pos_protos, tau: float = 0.1) -> dict:
    """Full head pipeline with straight-line distances and prototypes living in R^h."""
    points = np.asarray(E, dtype=np.float64) @ np.asarray(projection, dtype=np.float64).T
    q = responsibilities(points, pos_protos, tau, None)
    s_neg, s_pos = evidence_scores(points, neg_proto, pos_protos, tau, None)
    S_neg, S_pos, p = aggregate(s_neg, s_pos)
    return {"q": q, "s_neg": s_neg, "s_pos": s_pos, "S_neg": S_neg, "S_pos": S_pos, "p_fake": p}


def prototype_distance_table(neg_proto, pos_protos, c: float | None = 1.0) -> dict:
    """Pairwise distances among positive prototypes and from each to the negative one."""
    pos = np.atleast_2d(pos_protos)
    return {
        "pos_pos": _distances(pos, pos, c),
        "pos_neg": _distances(pos, np.atleast_2d(neg_proto), c)[:, 0],
    }


def softmin_bounds(distances, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Log-sum-exp sandwich: ``-min d / tau <= s_pos <= -min d / tau + ln K``."""
    d = np.atleast_2d(distances)
    low = -d.min(axis=1) / tau
    return low, low + math.log(d.shape[1])
