import math

import numpy as np
import pytest

from hypercodec import head as hd
from hypercodec import manifold as mf
from hypercodec import objective as obj
from hypercodec.diffcore import Tape
from hypercodec.gradcheck import tiny_batch, tiny_config
from hypercodec.model import Detector, Item


def test_cls_examples():
    assert obj.loss_cls(0.5, True) == pytest.approx(math.log(2), abs=1e-15)
    assert obj.loss_cls(0.5, False) == pytest.approx(0.6931472, abs=1e-7)
    assert obj.loss_cls(0.9, False) == pytest.approx(2.3025851, abs=1e-7)
    assert obj.loss_cls(1 - 1e-12, True) < 1e-11


def test_cluster_examples():
    assert obj.loss_cluster([[0.0, 0.7]], [[1.0, 0.0]]) == 0.0
    assert obj.loss_cluster([[0.42]], [[1.0]]) == 0.42
    assert obj.loss_cluster([[1.0, 1.0]], [[0.5, 0.5]], 0.05) == pytest.approx(1 - 0.05 * math.log(2), abs=1e-15)
    assert obj.loss_cluster([[1.0, 1.0]], [[0.5, 0.5]], 0.05) == pytest.approx(0.9653426, abs=1e-7)


def test_entropy_term_bounds():
    rng = np.random.default_rng(0)
    for _ in range(100):
        K = int(rng.integers(1, 6))
        q = rng.dirichlet(np.ones(K), size=3)
        ent = obj.loss_cluster(np.zeros((3, K)), q, 0.05)
        assert -0.05 * math.log(K) - 1e-15 <= ent <= 0.0


def test_sep_examples():
    assert obj.loss_sep(np.zeros((1, 1)), [1.0]) == pytest.approx(math.exp(-1), abs=1e-15)
    assert obj.loss_sep(np.zeros((4, 4)), np.zeros(4)) == 10.0
    rng = np.random.default_rng(1)
    pos = mf.project_to_ball(rng.normal(size=(4, 3)) * 0.2)
    neg = mf.project_to_ball(rng.normal(size=3) * 0.2)
    table = hd.prototype_distance_table(neg, pos)
    base = obj.loss_sep(table["pos_pos"], table["pos_neg"])
    assert obj.loss_sep(2 * table["pos_pos"], 2 * table["pos_neg"]) < base
    perm = rng.permutation(4)
    t2 = hd.prototype_distance_table(neg, pos[perm])
    assert obj.loss_sep(t2["pos_pos"], t2["pos_neg"]) == pytest.approx(base, abs=1e-15)


def recomposed_loss(model, items):
    """Total loss rebuilt from closed forms and plain-array scoring."""
    cfg = model.config
    neg, pos = model.head.realized_prototypes()
    ce, cl = [], []
    for it in items:
        s = model.score(it, detail=True)
        ce.append(obj.loss_cls(s.p_fake, it.is_fake))
        if it.is_fake:
            cl.append(obj.loss_cluster(s.dist_pos, s.responsibilities, cfg.entropy_weight, cfg.entropy_sign))
    table = hd.prototype_distance_table(neg, pos, cfg.curvature)
    total = np.mean(ce) + cfg.cluster_weight * (np.mean(cl) if cl else 0.0)
    return total + cfg.sep_weight * obj.loss_sep(table["pos_pos"], table["pos_neg"])


def test_total_matches_recomposition():
    cfg = tiny_config("full", 7)
    model = Detector(cfg)
    batch = tiny_batch(cfg, 7, frames=9) + tiny_batch(cfg, 8, frames=4)
    got = model.batch_loss(None, batch).parts["total"]
    assert got == pytest.approx(recomposed_loss(model, batch), abs=1e-10)


def test_all_real_batch_has_no_cluster_term():
    cfg = tiny_config("full", 7)
    model = Detector(cfg)
    batch = [it for it in tiny_batch(cfg, 7) if not it.is_fake]
    parts = model.batch_loss(None, batch).parts
    assert parts["cluster"] == 0.0
    assert parts["total"] == pytest.approx(parts["cls"] + cfg.sep_weight * parts["sep"], abs=1e-14)


@pytest.mark.parametrize("variant", ["full", "euclidean", "m1"])
def test_zero_weights_reduce_to_cross_entropy(variant):
    cfg = tiny_config(variant, 7, cluster_weight=0.0, sep_weight=0.0)
    model = Detector(cfg)
    batch = tiny_batch(cfg, 7)
    out = model.batch_loss(Tape(), batch)
    ce = [obj.loss_cls(model.score(it).p_fake, it.is_fake) for it in batch]
    assert out.parts["total"] == out.parts["cls"]
    assert out.parts["total"] == pytest.approx(np.mean(ce), abs=1e-14)


def test_loss_permutation_invariant_in_prototypes():
    cfg = tiny_config("full", 7, n_prototypes=3)
    model = Detector(cfg)
    batch = tiny_batch(cfg, 7)
    before = model.batch_loss(None, batch).parts
    model.head.pos_tangent.value[:] = model.head.pos_tangent.value[[2, 0, 1]]
    after = model.batch_loss(None, batch).parts
    for key in ("cls", "cluster", "sep", "total"):
        assert after[key] == pytest.approx(before[key], abs=1e-12)


def test_entropy_sign_override():
    cfg = tiny_config("full", 7)
    batch = [Item("f", np.random.default_rng(0).normal(size=(5, 8)), True)]
    plus = Detector(cfg).batch_loss(None, batch).parts["cluster"]
    minus = Detector(cfg.replace(entropy_sign=-1.0)).batch_loss(None, batch).parts["cluster"]
    assert minus > plus
