"""Objective terms: hand-computed values, zero-at-truth, differentiability."""

import numpy as np
import pytest

import meshspace.tensor as T
from meshspace.losses import (
    LossWeights,
    loss_chamfer_bins,
    loss_edge,
    loss_mesh_and_pose3d,
    loss_normal,
    loss_p2d,
    loss_si_depth,
    root_depth_loss,
    total_loss,
)
from meshspace.meshgraph import toy_hand


def _scalar(x):
    return float(x.data)


# -- 2D pose -----------------------------------------------------------------

def test_p2d_zero_at_truth():
    gt = np.random.default_rng(0).normal(size=(21, 2))
    assert _scalar(loss_p2d(T.DTensor.constant(gt), gt)) == 0.0


def test_p2d_unit_offset_is_one():
    gt = np.random.default_rng(1).normal(size=(21, 2))
    pred = gt + np.array([1.0, 0.0])   # per-joint L1 norm = 1
    assert _scalar(loss_p2d(T.DTensor.constant(pred), gt)) == pytest.approx(1.0, abs=1e-12)


def test_p2d_nonnegative_and_batched():
    rng = np.random.default_rng(2)
    gt = rng.normal(size=(4, 21, 2))
    pred = rng.normal(size=(4, 21, 2))
    assert _scalar(loss_p2d(T.DTensor.constant(pred), gt)) >= 0.0


def test_p2d_rejects_nan():
    gt = np.zeros((21, 2))
    bad = gt.copy()
    bad[3, 1] = np.nan
    with pytest.raises(ValueError):
        loss_p2d(T.DTensor.constant(bad), gt)
    with pytest.raises(ValueError):
        loss_p2d(T.DTensor.constant(gt), bad)


def test_p2d_shape_mismatch():
    with pytest.raises(T.ShapeError):
        loss_p2d(T.DTensor.constant(np.zeros((21, 2))), np.zeros((20, 2)))


# -- scale-invariant depth ---------------------------------------------------

def test_si_depth_zero_at_truth():
    d = np.array([0.4, 0.7, 1.3])
    assert _scalar(loss_si_depth(T.DTensor.constant(d), d)) == pytest.approx(0.0, abs=1e-12)


def test_si_depth_singleton_closed_form():
    # N=1: L = sqrt(g^2 - 0.85 g^2) = |g| sqrt(0.15)
    pred, gt = 0.9, 0.5
    g = np.log(pred) - np.log(gt)
    got = _scalar(loss_si_depth(T.DTensor.constant([pred]), [gt]))
    assert got == pytest.approx(abs(g) * np.sqrt(0.15), abs=1e-12)


def test_si_depth_matches_numpy_oracle():
    rng = np.random.default_rng(3)
    pred = rng.uniform(0.2, 2.0, size=17)
    gt = rng.uniform(0.2, 2.0, size=17)
    g = np.log(pred) - np.log(gt)
    want = np.sqrt((g ** 2).mean() - 0.85 / 17 ** 2 * g.sum() ** 2)
    got = _scalar(loss_si_depth(T.DTensor.constant(pred), gt))
    assert got == pytest.approx(want, abs=1e-12)


def test_si_depth_joint_scaling_invariance():
    rng = np.random.default_rng(4)
    pred = rng.uniform(0.2, 2.0, size=9)
    gt = rng.uniform(0.2, 2.0, size=9)
    a = _scalar(loss_si_depth(T.DTensor.constant(pred), gt))
    b = _scalar(loss_si_depth(T.DTensor.constant(pred * 7.3), gt * 7.3))
    assert a == pytest.approx(b, abs=1e-12)


def test_si_depth_rejects_nonpositive():
    with pytest.raises(ValueError):
        loss_si_depth(T.DTensor.constant([0.5, -0.1]), [0.5, 0.5])
    with pytest.raises(ValueError):
        loss_si_depth(T.DTensor.constant([0.5]), [0.0])


def test_root_depth_loss_is_mean_of_singleton_si():
    rng = np.random.default_rng(5)
    pred = rng.uniform(0.2, 2.0, size=6)
    gt = rng.uniform(0.2, 2.0, size=6)
    singles = [_scalar(loss_si_depth(T.DTensor.constant([p]), [g]))
               for p, g in zip(pred, gt)]
    got = _scalar(root_depth_loss(T.DTensor.constant(pred), gt))
    assert got == pytest.approx(np.mean(singles), abs=1e-12)


# -- chamfer -----------------------------------------------------------------

def test_chamfer_identical_singletons():
    assert _scalar(loss_chamfer_bins(T.DTensor.constant([1.0]), [1.0])) == 0.0


def test_chamfer_hand_enumeration():
    # X = {0,2}, c = {1}: forward 1+1, backward 1 -> total 3
    got = _scalar(loss_chamfer_bins(T.DTensor.constant([1.0]), [0.0, 2.0]))
    assert got == pytest.approx(3.0, abs=1e-12)


def test_chamfer_permutation_invariant():
    rng = np.random.default_rng(6)
    c = rng.uniform(0, 1, size=8)
    x = rng.uniform(0, 1, size=5)
    a = _scalar(loss_chamfer_bins(T.DTensor.constant(c), x))
    b = _scalar(loss_chamfer_bins(T.DTensor.constant(c[::-1].copy()),
                                  x[np.random.default_rng(7).permutation(5)]))
    assert a == pytest.approx(b, abs=1e-12)


def test_chamfer_empty_set_raises():
    with pytest.raises(ValueError):
        loss_chamfer_bins(T.DTensor.constant(np.zeros(0)), [1.0])
    with pytest.raises(ValueError):
        loss_chamfer_bins(T.DTensor.constant([1.0]), [])


def test_chamfer_accepts_batched_centers():
    # (B, N) centers are treated as one flat point set against X
    c = np.array([[0.2, 0.8], [0.4, 0.6]])
    x = np.array([0.2, 0.6])
    flat = _scalar(loss_chamfer_bins(T.DTensor.constant(c.reshape(-1)), x))
    batched = _scalar(loss_chamfer_bins(T.DTensor.constant(c), x))
    assert batched == pytest.approx(flat, abs=1e-12)


# -- mesh / 3D pose ----------------------------------------------------------

def test_mesh_pose3d_zero_at_truth():
    hand = toy_hand()
    v = hand.verts
    l_v, l_p3d = loss_mesh_and_pose3d(T.DTensor.constant(v), v, hand.joint_regressor)
    assert _scalar(l_v) == 0.0
    assert _scalar(l_p3d) == pytest.approx(0.0, abs=1e-15)


def test_mesh_loss_uniform_millimeter_offset():
    hand = toy_hand()
    v = hand.verts
    pred = v + np.array([0.001, 0.0, 0.0])
    l_v, _ = loss_mesh_and_pose3d(T.DTensor.constant(pred), v, hand.joint_regressor)
    assert _scalar(l_v) == pytest.approx(0.001 / 3.0, abs=1e-15)


def test_pose3d_with_one_hot_regressor_is_joint_l1():
    rng = np.random.default_rng(8)
    v = rng.normal(size=(10, 3))
    pred = rng.normal(size=(10, 3))
    j = np.zeros((4, 10))
    sel = [0, 3, 5, 9]
    j[np.arange(4), sel] = 1.0
    _, l_p3d = loss_mesh_and_pose3d(T.DTensor.constant(pred), v, j)
    want = np.abs(pred[sel] - v[sel]).mean()
    assert _scalar(l_p3d) == pytest.approx(want, abs=1e-12)


def test_mesh_pose3d_shape_errors():
    with pytest.raises(T.ShapeError):
        loss_mesh_and_pose3d(T.DTensor.constant(np.zeros((5, 3))),
                             np.zeros((6, 3)), np.zeros((4, 5)))
    with pytest.raises(T.ShapeError):
        loss_mesh_and_pose3d(T.DTensor.constant(np.zeros((5, 3))),
                             np.zeros((5, 3)), np.zeros((4, 6)))


# -- normals -----------------------------------------------------------------

def test_normal_zero_at_truth():
    hand = toy_hand()
    got = _scalar(loss_normal(T.DTensor.constant(hand.verts), hand.faces, hand.verts))
    assert got < 1e-9


def test_normal_lifted_edge_contribution():
    # gt triangle in z=0 (normal = z); prediction with an edge along z
    faces = np.array([[0, 1, 2]])
    gt = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    pred = gt.copy()
    pred[1] = [0.0, 0.0, 1.0]   # edge 0->1 becomes (0,0,-1), |dot n| = 1
    got = _scalar(loss_normal(T.DTensor.constant(pred), faces, gt))
    # edges: (0,1) gives 1; (1,2)=(−,1,−1)/√2·ẑ → 1/√2; (2,0) in-plane → 0
    want = (1.0 + 1.0 / np.sqrt(2.0) + 0.0) / 3.0
    assert got == pytest.approx(want, abs=1e-12)


def test_normal_bounded_per_edge():
    rng = np.random.default_rng(9)
    hand = toy_hand()
    pred = hand.verts + rng.normal(scale=0.01, size=hand.verts.shape)
    got = _scalar(loss_normal(T.DTensor.constant(pred), hand.faces, hand.verts))
    assert 0.0 <= got <= 1.0


def test_normal_degenerate_edge_skipped_and_counted():
    faces = np.array([[0, 1, 2]])
    gt = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    pred = gt.copy()
    pred[1] = pred[0]          # predicted edge (0,1) collapses
    diag = {}
    got = loss_normal(T.DTensor.constant(pred), faces, gt, diagnostics=diag)
    assert diag["skipped_edges"] == 1
    assert np.isfinite(got.data)
    got.backward()             # padded denominator keeps gradients finite


# -- edges -------------------------------------------------------------------

def test_edge_zero_at_truth():
    hand = toy_hand()
    assert _scalar(loss_edge(T.DTensor.constant(hand.verts), hand.faces, hand.verts)) == 0.0


def test_edge_doubled_length():
    faces = np.array([[0, 1, 2]])
    gt = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    pred = np.array([[0.0, 0, 0], [2, 0, 0], [0, 1, 0]])
    # edge (0,1): |4-1| = 3; (1,2): |(4+1)-(1+1)| = 3; (2,0): 0
    got = _scalar(loss_edge(T.DTensor.constant(pred), faces, gt))
    assert got == pytest.approx((3.0 + 3.0 + 0.0) / 3.0, abs=1e-12)


def test_edge_rigid_motion_invariant():
    rng = np.random.default_rng(10)
    hand = toy_hand()
    pred = hand.verts + rng.normal(scale=0.002, size=hand.verts.shape)
    base = _scalar(loss_edge(T.DTensor.constant(pred), hand.faces, hand.verts))
    # shared rotation + translation preserves every length
    a, b, c = 0.3, -0.2, 0.9
    rz = np.array([[np.cos(c), -np.sin(c), 0], [np.sin(c), np.cos(c), 0], [0, 0, 1]])
    moved_pred = pred @ rz.T + np.array([a, b, 0.1])
    moved_gt = hand.verts @ rz.T + np.array([a, b, 0.1])
    got = _scalar(loss_edge(T.DTensor.constant(moved_pred), hand.faces, moved_gt))
    assert got == pytest.approx(base, abs=1e-12)


# -- total -------------------------------------------------------------------

def _zero_terms():
    return {k: T.DTensor.constant(0.0) for k in ("p2d", "d", "b", "v", "p3d", "n", "e")}


def test_total_all_zero():
    assert _scalar(total_loss(_zero_terms())) == 0.0


def test_total_depth_weight():
    terms = _zero_terms()
    terms["d"] = T.DTensor.constant(0.1)
    assert _scalar(total_loss(terms)) == pytest.approx(1.0, abs=1e-12)


def test_total_linear_in_weights():
    rng = np.random.default_rng(11)
    terms = {k: T.DTensor.constant(rng.uniform(0, 1)) for k in
             ("p2d", "d", "b", "v", "p3d", "n", "e")}
    w1 = LossWeights()
    w2 = LossWeights(**{k: 2 * v for k, v in w1.to_dict().items()})
    assert _scalar(total_loss(terms, w2)) == pytest.approx(
        2 * _scalar(total_loss(terms, w1)), abs=1e-12)


def test_total_names_nan_term():
    terms = _zero_terms()
    terms["p3d"] = T.DTensor.constant(np.nan)
    with pytest.raises(ValueError, match="p3d"):
        total_loss(terms)


def test_total_missing_term():
    terms = _zero_terms()
    del terms["n"]
    with pytest.raises(ValueError, match="n"):
        total_loss(terms)


def test_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(d=-1.0)


def test_default_weights():
    w = LossWeights()
    assert (w.p2d, w.d, w.b, w.m, w.p3d, w.n, w.e) == (1, 10, 10, 1, 1, 0.1, 1)


# -- differentiability -------------------------------------------------------

def test_all_losses_gradient_check():
    rng = np.random.default_rng(13)
    hand = toy_hand()
    n = hand.verts.shape[0]
    v = T.DTensor.param(hand.verts + rng.normal(scale=0.005, size=(n, 3)))
    p2 = T.DTensor.param(rng.normal(size=(21, 2)) * 0.1)
    dd = T.DTensor.param(rng.uniform(0.5, 1.5, size=4))
    cc = T.DTensor.param(rng.uniform(0.2, 2.0, size=6))
    gt2 = rng.normal(size=(21, 2)) * 0.1
    gtd = rng.uniform(0.5, 1.5, size=4)
    gtx = rng.uniform(0.2, 2.0, size=3)

    def f():
        l_v, l_p3d = loss_mesh_and_pose3d(v, hand.verts, hand.joint_regressor)
        terms = {
            "p2d": loss_p2d(p2, gt2),
            "d": root_depth_loss(dd, gtd),
            "b": loss_chamfer_bins(cc, gtx),
            "v": l_v,
            "p3d": l_p3d,
            "n": loss_normal(v, hand.faces, hand.verts),
            "e": loss_edge(v, hand.faces, hand.verts),
        }
        return total_loss(terms)

    err = T.grad_check(f, {"v": v, "p2": p2, "d": dd, "c": cc},
                       max_coords_per_param=6, rng=np.random.default_rng(1))
    assert err < 1e-4, f"loss gradient mismatch {err:.3e}"
