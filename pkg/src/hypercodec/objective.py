"""Training objective: cross-entropy + lambda * cluster + beta * separation.

The cluster term is applied to fake-labelled utterances only (it pulls
evidence toward the *positive* prototypes).  The entropy part is added with
the printed sign, ``+gamma * sum q log q``; ``entropy_sign=-1`` flips it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Node
from .head import HeadTrace


@dataclass(frozen=True)
class LossWeights:
    cluster: float = 1.0
    sep: float = 0.1
    entropy: float = 0.05
    entropy_sign: float = 1.0


# -- closed forms on plain numbers ------------------------------------------------


def loss_cls(p_fake: float, is_fake: bool) -> float:
    return -math.log(p_fake) if is_fake else -math.log1p(-p_fake)


def loss_cluster(distances, q, gamma: float = 0.05, entropy_sign: float = 1.0) -> float:
    """``mean_m sum_k q d + gamma * mean_m sum_k q log q`` with ``0 log 0 = 0``."""
    d = np.atleast_2d(distances)
    q = np.atleast_2d(q)
    m = d.shape[0]
    qlogq = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)
    return float(np.sum(q * d) / m + entropy_sign * gamma * np.sum(qlogq) / m)


def loss_sep(pos_pos, pos_neg) -> float:
    """Repulsion from the K x K positive distance matrix and the K positive-negative distances."""
    pp = np.atleast_2d(pos_pos)
    iu = np.triu_indices(pp.shape[0], k=1)
    return float(np.exp(-pp[iu]).sum() + np.exp(-np.asarray(pos_neg)).sum())


# -- tracked versions -----------------------------------------------------------------


def cluster_term(tape, trace: HeadTrace, weights: LossWeights) -> Node:
    m = trace.logits.shape[0]
    log_q = dc.log_softmax_rows(tape, trace.logits)
    q = dc.exp(tape, log_q)
    pull = dc.weighted_sum(tape, dc.mul(tape, q, trace.dist_pos), 1.0 / m)
    neg_entropy = dc.weighted_sum(tape, dc.mul(tape, q, log_q), 1.0 / m)
    return dc.add_scalars(tape, [pull, dc.scale(tape, neg_entropy, weights.entropy_sign * weights.entropy)])


def sep_term(tape, head, p_neg: Node, p_pos: Node) -> Node:
    k = p_pos.shape[0]
    pp = head.distance(tape, p_pos, p_pos)
    pn = head.distance(tape, p_pos, p_neg)
    among = dc.weighted_sum(tape, dc.exp(tape, dc.scale(tape, pp, -1.0)), np.triu(np.ones((k, k)), 1))
    to_neg = dc.total(tape, dc.exp(tape, dc.scale(tape, pn, -1.0)))
    return dc.add_scalars(tape, [among, to_neg])
