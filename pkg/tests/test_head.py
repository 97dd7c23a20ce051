import math

import numpy as np
import pytest

from hypercodec import head as hd
from hypercodec import manifold as mf
from hypercodec.diffcore import const
from hypercodec.head import PrototypeHead


def test_responsibilities_single_prototype():
    q = hd.responsibilities(np.array([[0.1, 0.2], [0.3, -0.1]]), np.array([[0.0, 0.5]]))
    np.testing.assert_array_equal(q, np.ones((2, 1)))


def test_responsibilities_equal_distances_uniform():
    pos = np.array([[0.3, 0.0], [-0.3, 0.0], [0.0, 0.3]])
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    # origin is equidistant from points of equal norm
    q = hd.responsibilities(np.zeros((1, 2)), pos @ rot)
    np.testing.assert_allclose(q, np.full((1, 3), 1 / 3), rtol=1e-15)


def test_responsibility_underflow_example():
    # softmax of (-1, -101) evaluated independently
    logits = np.array([-1.0, -101.0])
    expected = math.exp(-100.0) / (1 + math.exp(-100.0))
    assert expected == pytest.approx(3.7e-44, rel=0.01)
    z = logits - logits.max()
    q = np.exp(z) / np.exp(z).sum()
    assert q[0] == 1.0
    assert q[1] == pytest.approx(expected, rel=1e-12)


def test_evidence_scores_examples():
    neg = np.array([0.2, -0.1])
    s_neg, _ = hd.evidence_scores(neg[None], neg, np.array([[0.0, 0.3]]))
    assert s_neg[0] == 0.0
    # K=1 at distance 0.5 and K=2 both at distance 0.5, via radial points
    r = math.tanh(0.25)
    _, s_pos = hd.evidence_scores(np.zeros((1, 2)), neg, np.array([[r, 0.0]]))
    assert s_pos[0] == pytest.approx(-5.0, abs=1e-12)
    _, s_pos = hd.evidence_scores(np.zeros((1, 2)), neg, np.array([[r, 0.0], [0.0, -r]]))
    assert s_pos[0] == pytest.approx(-5 + math.log(2), abs=1e-12)
    assert s_pos[0] == pytest.approx(-4.3068528, abs=1e-7)


def test_aggregate_examples():
    assert hd.aggregate([-1.5], [-1.5])[2] == 0.5
    assert hd.aggregate([-0.7], [-2.0])[:2] == (-0.7, -2.0)
    S_neg, S_pos, p = hd.aggregate([-1.0, -3.0], [-2.0, -2.0])
    assert (S_neg, S_pos, p) == (-2.0, -2.0, 0.5)


def test_p_fake_monotone():
    grid = np.linspace(-5, 5, 11)
    ps = [hd.aggregate([0.0], [s])[2] for s in grid]
    assert all(a < b for a, b in zip(ps, ps[1:]))
    ps = [hd.aggregate([s], [0.0])[2] for s in grid]
    assert all(a > b for a, b in zip(ps, ps[1:]))


def test_softmin_sandwich_and_monotonicity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pts = mf.project_to_ball(rng.normal(size=(3, 4)) * 0.3)
        pos = mf.project_to_ball(rng.normal(size=(4, 4)) * 0.3)
        _, s_pos = hd.evidence_scores(pts, pos[0], pos, 0.1)
        low, high = hd.softmin_bounds(mf.pairwise_distance(pts, pos), 0.1)
        assert np.all(low <= s_pos) and np.all(s_pos <= high)
    d = np.array([[0.4, 0.7, 0.9]])
    closer = d.copy()
    closer[0, 1] = 0.5
    lse = lambda v: np.log(np.exp(-v / 0.1).sum())
    assert lse(closer) > lse(d)
    q = lambda v: np.exp(-v / 0.1) / np.exp(-v / 0.1).sum()
    assert q(closer)[0, 1] > q(d)[0, 1]


def test_euclidean_variant_examples():
    out = hd.euclidean_variant_scores(np.array([[3.0]]), np.eye(1), np.array([0.0]), np.array([[3.0]]))
    assert out["s_neg"][0] == -3.0
    assert out["s_pos"][0] == 0.0
    out = hd.euclidean_variant_scores(np.array([[1.0]]), np.eye(1), np.array([1.0]), np.array([[0.0]]))
    assert out["s_neg"][0] == 0.0


def _head(hyperbolic, seed=3):
    return PrototypeHead(6, 4, 3, np.random.default_rng(seed), hyperbolic=hyperbolic)


def test_tracked_head_matches_plain_functions():
    h = _head(True)
    e = np.random.default_rng(1).normal(size=(2, 6))
    trace = h(None, const(e))
    neg, pos = h.realized_prototypes()
    pts = mf.exp_map_origin(e @ h.projection.value.T)
    s_neg, s_pos = hd.evidence_scores(pts, neg, pos)
    S_neg, S_pos, p = hd.aggregate(s_neg, s_pos)
    assert float(trace.S_neg.value) == pytest.approx(S_neg, abs=1e-12)
    assert float(trace.S_pos.value) == pytest.approx(S_pos, abs=1e-12)
    assert trace.p_fake == pytest.approx(p, abs=1e-12)


def test_euclidean_and_hyperbolic_differ():
    e = np.random.default_rng(2).normal(size=(2, 6))
    a, b = _head(True), _head(False)
    assert float(a(None, const(e)).S_pos.value) != float(b(None, const(e)).S_pos.value)
    np.testing.assert_array_equal(a.projection.value, b.projection.value)


def test_realized_prototypes_inside_ball():
    h = _head(True)
    h.pos_tangent.value[:] = 100.0
    _, pos = h.realized_prototypes()
    assert np.all(mf.in_ball(pos))
