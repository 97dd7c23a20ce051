"""The detector: adapter -> selective SSM -> evidence pooling -> prototype head.

Variants:

``full``       hyperbolic head over M evidence vectors
``euclidean``  same pipeline, straight-line distances, prototypes in R^h
``m1``         full with a single evidence vector
``meanpool``   mean over time, then a tanh MLP producing ``[S_neg, S_pos]``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import diffcore as dc
from . import objective
from .backbone import Adapter, Backbone, uniform_init
from .config import TrainConfig
from .diffcore import Node, Param
from .errors import StructuralError
from .evidence import EvidencePooling
from .head import PrototypeHead

# Keeps initial evidence embeddings well inside the ball, where exp_map is not saturated.
PROJECTION_INIT_SCALE = 0.1


@dataclass
class Item:
    """One utterance as seen by the model."""

    uid: str
    features: np.ndarray
    is_fake: bool
    group: str = ""


@dataclass
class Score:
    uid: str
    is_fake: bool
    p_fake: float
    S_neg: float
    S_pos: float
    group: str = ""
    responsibilities: np.ndarray | None = None
    attention: np.ndarray | None = None
    dist_pos: np.ndarray | None = None
    dist_neg: np.ndarray | None = None


@dataclass
class BatchLoss:
    total: Node
    parts: dict = field(default_factory=dict)


class MeanPoolClassifier:
    def __init__(self, dim: int, rng: np.random.Generator):
        self.hidden_w = Param("meanpool.hidden_w", uniform_init(rng, (dim, dim), dim))
        self.hidden_b = Param("meanpool.hidden_b", np.zeros(dim))
        self.out_w = Param("meanpool.out_w", uniform_init(rng, (2, dim), dim))
        self.out_b = Param("meanpool.out_b", np.zeros(2))

    def params(self) -> list[Param]:
        return [self.hidden_w, self.hidden_b, self.out_w, self.out_b]

    def __call__(self, tape, z: Node) -> tuple[Node, Node]:
        pooled = dc.mean_rows(tape, z)
        hidden = dc.tanh(tape, dc.linear(tape, pooled, self.hidden_w, self.hidden_b))
        logits = dc.linear(tape, hidden, self.out_w, self.out_b)
        return (dc.weighted_sum(tape, logits, np.array([[1.0, 0.0]])),
                dc.weighted_sum(tape, logits, np.array([[0.0, 1.0]])))


class Detector:
    def __init__(self, config: TrainConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.model_dim
        self.adapter = Adapter(config.input_dim, d, rng)
        self.backbone = Backbone(config.n_layers, d, rng)
        self.weights = objective.LossWeights(config.cluster_weight, config.sep_weight,
                                             config.entropy_weight, config.entropy_sign)
        self.evidence = self.head = self.classifier = None
        if config.variant == "meanpool":
            self.classifier = MeanPoolClassifier(d, rng)
        else:
            self.evidence = EvidencePooling(config.effective_evidence, d, rng)
            self.head = PrototypeHead(d, config.ball_dim, config.n_prototypes, rng,
                                      curvature=config.curvature, temperature=config.temperature,
                                      hyperbolic=config.variant != "euclidean",
                                      projection_scale=PROJECTION_INIT_SCALE)

    # -- parameters ----------------------------------------------------------------

    def params(self) -> list[Param]:
        parts = [self.adapter, self.backbone, self.evidence, self.head, self.classifier]
        return [p for part in parts if part is not None for p in part.params()]

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def no_decay_names(self) -> set[str]:
        return {p.name for p in self.head.prototype_params()} if self.head is not None else set()

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    # -- forward -------------------------------------------------------------------

    def _context(self, tape, features) -> Node:
        x = dc.const(features)
        return self.backbone(tape, self.adapter(tape, x))

    def forward(self, tape, features, protos=None):
        """Returns ``(S_neg, S_pos, trace, attention)``; trace/attention are None for meanpool."""
        z = self._context(tape, features)
        if self.classifier is not None:
            S_neg, S_pos = self.classifier(tape, z)
            return S_neg, S_pos, None, None
        e, attention = self.evidence(tape, z)
        trace = self.head(tape, e, protos)
        return trace.S_neg, trace.S_pos, trace, attention

    def batch_loss(self, tape, items: list[Item]) -> BatchLoss:
        """Mean cross-entropy + lambda * mean cluster term over fakes + beta * separation."""
        if not items:
            raise StructuralError("empty batch")
        protos = self.head.prototypes(tape) if self.head is not None else None
        ce_terms, cluster_terms = [], []
        for item in items:
            S_neg, S_pos, trace, _ = self.forward(tape, item.features, protos)
            ce_terms.append(dc.binary_cross_entropy(tape, S_neg, S_pos, item.is_fake))
            if trace is not None and item.is_fake:
                cluster_terms.append(objective.cluster_term(tape, trace, self.weights))
        cls = dc.scale(tape, dc.add_scalars(tape, ce_terms), 1.0 / len(ce_terms))
        terms = [cls]
        parts = {"cls": float(cls.value), "cluster": 0.0, "sep": 0.0}
        if cluster_terms:
            cluster = dc.scale(tape, dc.add_scalars(tape, cluster_terms), 1.0 / len(cluster_terms))
            parts["cluster"] = float(cluster.value)
            if self.weights.cluster != 0.0:
                terms.append(dc.scale(tape, cluster, self.weights.cluster))
        if protos is not None:
            sep = objective.sep_term(tape, self.head, *protos)
            parts["sep"] = float(sep.value)
            if self.weights.sep != 0.0:
                terms.append(dc.scale(tape, sep, self.weights.sep))
        loss = terms[0] if len(terms) == 1 else dc.add_scalars(tape, terms)
        parts["total"] = float(loss.value)
        return BatchLoss(loss, parts)

    # -- inference -----------------------------------------------------------------

    def score(self, item: Item, detail: bool = False) -> Score:
        S_neg, S_pos, trace, attention = self.forward(None, item.features)
        s_neg, s_pos = float(S_neg.value), float(S_pos.value)
        rec = Score(item.uid, item.is_fake, float(expit(s_pos - s_neg)), s_neg, s_pos, item.group)
        if detail and trace is not None:
            logits = trace.logits.value
            q = np.exp(logits - logits.max(axis=1, keepdims=True))
            rec.responsibilities = q / q.sum(axis=1, keepdims=True)
            rec.attention = attention.value
            rec.dist_pos = trace.dist_pos.value
            rec.dist_neg = trace.dist_neg.value[:, 0]
        return rec

    def score_all(self, items, detail: bool = False) -> list[Score]:
        return [self.score(item, detail) for item in items]
