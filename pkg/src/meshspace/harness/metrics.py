"""Evaluation: Procrustes-aligned and camera-space errors, PCK-AUC, exports.

PJ/PV are mean joint/vertex errors after a per-sample similarity
alignment (shape quality, blind to pose/scale); CJ/CV are the same errors
in raw camera space (absolute placement quality); PCK-AUC integrates the
fraction of joints under a threshold across 0-50 mm. All errors in mm.
"""

import json

import numpy as np

from .. import tensor as T

PCK_THRESHOLDS_MM = np.linspace(0.0, 50.0, 51)
METRIC_KEYS = ("PJ", "PV", "CJ", "CV", "PCK_AUC")

_trapz = getattr(np, "trapezoid", None) or np.trapz


def procrustes_align(pred, gt, diagnostics=None):
    """Best similarity transform (proper rotation, scale, translation) of
    ``pred`` onto ``gt`` in the least-squares sense; returns aligned pred.

    A rank-deficient cross-covariance (degenerate point sets) falls back
    to scale+translation only, flagged via ``diagnostics['fallback']``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"need matching k x 3 sets, got {pred.shape} / {gt.shape}")
    k = pred.shape[0]
    if k < 3:
        raise ValueError(f"need at least 3 points, got {k}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    pc = pred - mu_p
    gc = gt - mu_g
    denom = (pc ** 2).sum()
    if denom < 1e-30 or (gc ** 2).sum() < 1e-30:
        raise ValueError("degenerate point set (zero spread)")
    a = pc.T @ gc                       # 3x3 cross-covariance
    u, s, vt = np.linalg.svd(a)
    if s[-1] < 1e-9 * max(s[0], 1e-30):
        if diagnostics is not None:
            diagnostics["fallback"] = True
        scale = (pc * gc).sum() / denom
        return scale * pc + mu_g
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.array([1.0, 1.0, d])
    rot = vt.T @ np.diag(corr) @ u.T    # proper rotation, det +1
    scale = (s * corr).sum() / denom
    if diagnostics is not None:
        diagnostics["fallback"] = False
        diagnostics["rotation"] = rot
        diagnostics["scale"] = scale
    return scale * pc @ rot.T + mu_g


def _mean_err_mm(a, b):
    return float(np.linalg.norm(a - b, axis=-1).mean() * 1000.0)


def pck_auc(errors_mm, thresholds=PCK_THRESHOLDS_MM):
    """Area under PCK(threshold), trapezoidal, normalized to [0, 1].
    A joint is correct when its error is <= the threshold."""
    errors_mm = np.asarray(errors_mm, dtype=np.float64).reshape(-1)
    pck = (errors_mm[:, None] <= thresholds[None, :]).mean(axis=0)
    return float(_trapz(pck, thresholds) / (thresholds[-1] - thresholds[0]))


def evaluate_predictions(verts_rel_pred, joints_cam_pred, verts_cam_pred,
                         data, regressor, pck_errors=None):
    """Metrics from already-computed predictions (arrays, meters)."""
    s = len(data)
    pj = pv = cj = cv = 0.0
    per_joint_cam = np.empty((s, regressor.shape[0]))
    j_rel_pred = np.einsum("jv,svc->sjc", regressor, verts_rel_pred)
    for i in range(s):
        gt_j = data.j3d_rel[i]
        gt_v = data.v3d_rel[i]
        pj += _mean_err_mm(procrustes_align(j_rel_pred[i], gt_j), gt_j)
        pv += _mean_err_mm(procrustes_align(verts_rel_pred[i], gt_v), gt_v)
        gt_j_cam = gt_j + data.root_pos[i]
        gt_v_cam = gt_v + data.root_pos[i]
        cj += _mean_err_mm(joints_cam_pred[i], gt_j_cam)
        cv += _mean_err_mm(verts_cam_pred[i], gt_v_cam)
        per_joint_cam[i] = np.linalg.norm(
            joints_cam_pred[i] - gt_j_cam, axis=-1) * 1000.0
    auc_errors = per_joint_cam if pck_errors is None else pck_errors
    return {"PJ": pj / s, "PV": pv / s, "CJ": cj / s, "CV": cv / s,
            "PCK_AUC": pck_auc(auc_errors)}


def evaluate(model, data, batch_size=16, use_gt_root2d=False, pck_2d=False):
    """Run the model over a dataset and compute the five metrics."""
    cam = data.config.camera() if data.config else model.config.camera()
    n = len(data)
    verts_rel = np.empty_like(data.v3d_rel)
    joints_cam = np.empty_like(data.j3d_rel)
    verts_cam = np.empty_like(data.v3d_rel)
    j2d_px = np.empty_like(data.j2d)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        out = model(data.images[lo:hi])
        gt_root = data.j2d[lo:hi, 0] if use_gt_root2d else None
        cs = model.camera_space(out, cam, gt_root2d=gt_root)
        verts_rel[lo:hi] = out.verts_rel.data
        joints_cam[lo:hi] = cs["joints_cam"]
        verts_cam[lo:hi] = cs["verts_cam"]
        j2d_px[lo:hi] = cs["j2d_px"]
    pck_errors = None
    if pck_2d:   # same integral, thresholds read as pixels instead of mm
        pck_errors = np.linalg.norm(j2d_px - data.j2d, axis=-1)
    return evaluate_predictions(verts_rel, joints_cam, verts_cam, data,
                                model.joint_regressor, pck_errors=pck_errors)


def export_metrics(metrics, path_prefix):
    """Write metrics as JSON (exactly the five keys) and a one-row CSV."""
    clean = {k: float(metrics[k]) for k in METRIC_KEYS}
    json_path = f"{path_prefix}.json"
    csv_path = f"{path_prefix}.csv"
    with open(json_path, "w") as fh:
        json.dump(clean, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w") as fh:
        fh.write(",".join(METRIC_KEYS) + "\n")
        fh.write(",".join(f"{clean[k]:.6f}" for k in METRIC_KEYS) + "\n")
    return json_path, csv_path


def export_obj(verts, faces, path):
    """Standard OBJ (one comment header, v then f lines, 6 decimals)."""
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if verts.ndim != 2 or verts.shape[1] != 3:
        raise ValueError(f"verts must be (N, 3), got {verts.shape}")
    with open(path, "w") as fh:
        fh.write("# meshspace export\n")
        for v in verts:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    return path
