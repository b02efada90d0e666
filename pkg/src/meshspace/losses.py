"""Training objective for camera-space hand recovery.

Seven weighted terms: 2D pose, scale-invariant root depth, bin-center
chamfer, mesh vertices, 3D pose, surface normals, and edge lengths. All
terms are non-negative, vanish at ground truth, and are differentiable at
generic points, so the total is a well-behaved scalar objective.
"""

import numpy as np

from . import tensor as T
from .meshgraph import face_normals


class LossWeights:
    """Per-term weights; the defaults balance pixel-, meter- and
    unit-scale terms against each other."""

    def __init__(self, p2d=1.0, d=10.0, b=10.0, m=1.0, p3d=1.0, n=0.1, e=1.0):
        for name, val in (("p2d", p2d), ("d", d), ("b", b), ("m", m),
                          ("p3d", p3d), ("n", n), ("e", e)):
            if val < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {val}")
        self.p2d = float(p2d)
        self.d = float(d)
        self.b = float(b)
        self.m = float(m)
        self.p3d = float(p3d)
        self.n = float(n)
        self.e = float(e)

    def to_dict(self):
        return {"p2d": self.p2d, "d": self.d, "b": self.b, "m": self.m,
                "p3d": self.p3d, "n": self.n, "e": self.e}

    @staticmethod
    def from_dict(d):
        return LossWeights(**d)


SI_LAMBDA = 0.85


def _wrap(x):
    return x if isinstance(x, T.DTensor) else T.DTensor.constant(x)


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")


def loss_p2d(pred, gt):
    """Mean over joints of the L1 norm of the 2D error (normalized units)."""
    pred = _wrap(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 2:
        raise T.ShapeError(f"2D pose shapes disagree: {pred.shape} vs {gt.shape}")
    _check_finite("loss_p2d ground truth", gt)
    _check_finite("loss_p2d prediction", pred.data)
    per_joint = T.sum_(T.abs_(pred - gt), axis=-1)   # L1 norm per joint
    return T.mean(per_joint)


def loss_si_depth(d_pred, d_gt, si_lambda=SI_LAMBDA):
    """Scale-invariant log-depth loss over one set of N valid points:
    g = ln d_pred - ln d_gt, L = sqrt(mean(g^2) - (si_lambda/N^2) (sum g)^2).
    """
    d_pred = _wrap(d_pred)
    gt = np.asarray(d_gt, dtype=np.float64)
    if d_pred.data.size == 0:
        raise ValueError("need at least one depth point")
    if (d_pred.data <= 0).any() or (gt <= 0).any():
        raise ValueError("depths must be positive")
    n = d_pred.data.size
    g = T.log(T.reshape(d_pred, (n,))) - np.log(gt.reshape(n))
    arg = T.mean(T.square(g)) - (si_lambda / n ** 2) * T.square(T.sum_(g))
    return T.sqrt(arg)


def root_depth_loss(d_pred, d_gt, si_lambda=SI_LAMBDA):
    """Batched desk-scale form: each sample contributes a singleton point
    set, for which the SI loss closes to sqrt(1 - si_lambda) * |g|."""
    d_pred = _wrap(d_pred)
    gt = np.asarray(d_gt, dtype=np.float64)
    if (d_pred.data <= 0).any() or (gt <= 0).any():
        raise ValueError("depths must be positive")
    g = T.log(d_pred) - np.log(gt)
    return np.sqrt(1.0 - si_lambda) * T.mean(T.abs_(g))


def loss_chamfer_bins(centers, gt_depths):
    """Bidirectional chamfer between predicted bin centers and the ground
    truth depth set, with squared point distances and sum reduction."""
    centers = _wrap(centers)
    x = np.asarray(gt_depths, dtype=np.float64).reshape(-1)
    k = centers.data.size
    if k == 0 or x.size == 0:
        raise ValueError("chamfer needs two non-empty sets")
    c = T.reshape(centers, (1, k))
    d2 = T.square(c - x[:, None])                    # (|X|, K)
    return T.sum_(T.min_(d2, axis=1)) + T.sum_(T.min_(d2, axis=0))


def loss_mesh_and_pose3d(v_pred, v_gt, regressor, j3d_gt=None):
    """Mean-L1 vertex loss and mean-L1 regressed-joint loss (root-relative).

    ``regressor`` is the (J, N) joint regressor; when ``j3d_gt`` is omitted
    the target joints are regressed from the ground-truth vertices.
    """
    v_pred = _wrap(v_pred)
    gt = np.asarray(v_gt, dtype=np.float64)
    j = np.asarray(regressor, dtype=np.float64)
    if v_pred.shape != gt.shape or v_pred.shape[-1] != 3:
        raise T.ShapeError(f"vertex shapes disagree: {v_pred.shape} vs {gt.shape}")
    if j.ndim != 2 or j.shape[1] != v_pred.shape[-2]:
        raise T.ShapeError(
            f"regressor {j.shape} does not match {v_pred.shape[-2]} vertices")
    l_v = T.mean(T.abs_(v_pred - gt))
    joints_pred = T.matmul(T.DTensor.constant(j), v_pred)
    joints_gt = np.matmul(j, gt) if j3d_gt is None else np.asarray(j3d_gt)
    l_p3d = T.mean(T.abs_(joints_pred - joints_gt))
    return l_v, l_p3d


def _face_edge_indices(faces):
    f = np.asarray(faces, dtype=np.int64)
    i = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    return i, j


def _edge_vectors(v, i, j):
    axis = v.data.ndim - 2
    return T.take(v, i, axis=axis) - T.take(v, j, axis=axis)


def loss_normal(v_pred, faces, v_gt, diagnostics=None):
    """Mean over face edges of |unit(predicted edge) . gt face normal|.

    Predicted edges shorter than 1e-9 carry no usable direction; they are
    excluded from the numerator (denominator stays the full edge count) and
    reported through ``diagnostics['skipped_edges']``.
    """
    v_pred = _wrap(v_pred)
    gt = np.asarray(v_gt, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    i, j = _face_edge_indices(faces)
    if gt.ndim == 3:
        normals = np.stack([face_normals(faces, g) for g in gt])
    else:
        normals = face_normals(faces, gt)            # (F, 3)
    n_rep = np.concatenate([normals] * 3, axis=-2)   # one per edge, (.., 3F, 3)

    e = _edge_vectors(v_pred, i, j)                  # (..., 3F, 3)
    norm2 = T.sum_(T.square(e), axis=-1, keepdims=True)
    skip = np.sqrt(norm2.data) < 1e-9                # (..., 3F, 1)
    if diagnostics is not None:
        diagnostics["skipped_edges"] = int(skip.sum())
    # Padding the squared length keeps the division finite for degenerate
    # edges; the keep mask then removes them from the numerator exactly.
    unit = e / T.sqrt(norm2 + skip.astype(np.float64))
    keep = 1.0 - skip[..., 0].astype(np.float64)
    dots = T.abs_(T.sum_(unit * n_rep, axis=-1)) * keep
    edge_count = i.size
    batch = int(np.prod(v_pred.shape[:-2], dtype=np.int64)) if v_pred.data.ndim > 2 else 1
    return T.sum_(dots) * (1.0 / (edge_count * batch))


def loss_edge(v_pred, faces, v_gt):
    """Mean over face edges of |squared pred length - squared gt length|."""
    v_pred = _wrap(v_pred)
    gt = np.asarray(v_gt, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    i, j = _face_edge_indices(faces)
    e_pred = _edge_vectors(v_pred, i, j)
    e_gt = np.take(gt, i, axis=gt.ndim - 2) - np.take(gt, j, axis=gt.ndim - 2)
    len2_pred = T.sum_(T.square(e_pred), axis=-1)
    len2_gt = (e_gt ** 2).sum(axis=-1)
    return T.mean(T.abs_(len2_pred - len2_gt))


TERM_ORDER = ("p2d", "d", "b", "v", "p3d", "n", "e")
_TERM_WEIGHT = {"p2d": "p2d", "d": "d", "b": "b", "v": "m", "p3d": "p3d",
                "n": "n", "e": "e"}


def total_loss(terms, weights=None):
    """Weighted sum of the seven terms, given as {"p2d", "d", "b", "v",
    "p3d", "n", "e"}. The mesh-vertex term "v" takes the weight m. A
    non-finite component raises, naming the offending term."""
    weights = weights or LossWeights()
    missing = [k for k in TERM_ORDER if k not in terms]
    if missing:
        raise ValueError(f"missing loss terms: {missing}")
    total = None
    wd = weights.to_dict()
    for key in TERM_ORDER:
        term = _wrap(terms[key])
        if not np.isfinite(term.data).all():
            raise ValueError(f"loss term '{key}' is non-finite")
        piece = wd[_TERM_WEIGHT[key]] * term
        total = piece if total is None else total + piece
    return total
