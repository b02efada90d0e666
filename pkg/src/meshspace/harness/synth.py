"""Synthetic desk-scale hand data: articulate, place, rasterize, label.

Every sample is generated from integer seeds only (seed sequences keyed by
(dataset seed, sample index, attempt)), so datasets are reproducible to
the byte. Ground truth is computed from the same posed geometry that is
rasterized, which makes the labels exact rather than annotated.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from .. import tensor as T
from ..depthhead import backproject_root, project_points
from ..meshgraph import toy_hand

MAX_CURL_DEG = 60.0      # hinge limit at each finger joint
MAX_SPREAD_DEG = 15.0    # sideways play at the knuckle
_CHAIN = (("mcp", (1, 2, 3)), ("pip", (2, 3)), ("dip", (3,)))
_JOINT_RING = {"mcp": 0, "pip": 3, "dip": 6}


class BehindCameraError(RuntimeError):
    pass


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def articulate_hand(hand, rng):
    """Pose the template with random per-finger joint rotations.

    Each finger draws three hinge curls (knuckle, middle, distal) within
    +/-60 degrees and a knuckle spread within +/-15 degrees. Whole rings
    move rigidly, so regressed joints track the surface exactly.
    """
    verts = hand.verts.copy()
    for f in range(5):
        in_finger = hand.vertex_finger == f
        spread = np.deg2rad(rng.uniform(-MAX_SPREAD_DEG, MAX_SPREAD_DEG))
        curls = np.deg2rad(rng.uniform(-MAX_CURL_DEG, MAX_CURL_DEG, size=3))
        base_ring = in_finger & (hand.vertex_segment == 0)
        pivot = verts[base_ring].mean(axis=0)
        moving = in_finger & (hand.vertex_segment >= 1)
        verts[moving] = (verts[moving] - pivot) @ _rot_z(spread).T + pivot
        for (joint, segs), angle in zip(_CHAIN, curls):
            ring = _JOINT_RING[joint]
            ring_mask = in_finger & _ring_mask(hand, f, ring)
            pivot = verts[ring_mask].mean(axis=0)
            moving = in_finger & np.isin(hand.vertex_segment, segs)
            verts[moving] = (verts[moving] - pivot) @ _rot_x(angle).T + pivot
    return verts


def _ring_mask(hand, finger, ring):
    # finger vertices are laid out ring-major, 4 per ring, after the palm
    n = len(hand.verts)
    mask = np.zeros(n, dtype=bool)
    base = 50 + finger * 36 + 4 * ring
    mask[base:base + 4] = True
    return mask


def place_hand(verts, hand, rng, config):
    """Random rigid placement: global rotation, then a translation putting
    the wrist on a jittered pixel ray at a depth uniform in the band."""
    cam = config.camera()
    angle = np.deg2rad(rng.uniform(0.0, 60.0))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(angle * axis).as_matrix()
    v = verts @ rot.T
    wrist = hand.joint_regressor[0] @ v
    d_root = rng.uniform(*config.depth_band)
    jitter = 0.1 * config.image_size
    u = cam.cx + rng.uniform(-jitter, jitter)
    w = cam.cy + rng.uniform(-jitter, jitter)
    root_pos = backproject_root((u, w), d_root, cam)
    v_cam = v + (root_pos - wrist)
    return v_cam, root_pos


def rasterize_mesh(verts, faces, cam, h, w):
    """Z-buffered barycentric triangle fill; intensity = inverse depth
    normalized over the mesh's own depth extent (near bright, far dark)."""
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    img = np.zeros((h, w))
    if verts.size == 0 or faces.size == 0:
        return img
    if (verts[:, 2] <= 1e-6).any():
        raise BehindCameraError("mesh vertex at or behind the camera plane")
    uv = project_points(verts, cam)
    inv_z = 1.0 / verts[:, 2]
    zbuf = np.full((h, w), np.inf)
    lo, hi = inv_z.min(), inv_z.max()
    span = hi - lo
    for tri in faces:
        p0, p1, p2 = uv[tri]
        iz0, iz1, iz2 = inv_z[tri]
        xmin = max(int(np.floor(min(p0[0], p1[0], p2[0]))), 0)
        xmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]))) + 1, w)
        ymin = max(int(np.floor(min(p0[1], p1[1], p2[1]))), 0)
        ymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]))) + 1, h)
        if xmin >= xmax or ymin >= ymax:
            continue
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if abs(area) < 1e-12:
            continue
        xs = np.arange(xmin, xmax) + 0.5
        ys = np.arange(ymin, ymax) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((p1[0] - gx) * (p2[1] - gy) - (p1[1] - gy) * (p2[0] - gx)) / area
        w1 = ((p2[0] - gx) * (p0[1] - gy) - (p2[1] - gy) * (p0[0] - gx)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        # 1/z interpolates linearly in screen space, so the z-test is exact
        iz = w0 * iz0 + w1 * iz1 + w2 * iz2
        z = np.where(iz > 0, 1.0 / np.maximum(iz, 1e-12), np.inf)
        patch_z = zbuf[ymin:ymax, xmin:xmax]
        win = inside & (z < patch_z)
        patch_z[win] = z[win]
        shade = 1.0 if span < 1e-12 else (iz - lo) / span
        img_patch = img[ymin:ymax, xmin:xmax]
        img_patch[win] = np.clip(shade, 0.0, 1.0)[win] if span >= 1e-12 else 1.0
    return img


def _generate_one(hand, config, seed, index):
    cam = config.camera()
    for attempt in range(32):
        rng = np.random.default_rng([seed, index, attempt])
        posed = articulate_hand(hand, rng)
        v_cam, root_pos = place_hand(posed, hand, rng, config)
        try:
            gray = rasterize_mesh(v_cam, hand.faces, cam,
                                  config.image_size, config.image_size)
        except BehindCameraError:
            continue
        j_cam = hand.joint_regressor @ v_cam
        j2d = project_points(j_cam, cam)
        return {
            "image": np.repeat(gray[None], 3, axis=0),
            "j2d": j2d,
            "v3d_rel": v_cam - root_pos,
            "j3d_rel": j_cam - root_pos,
            "root_depth": float(root_pos[2]),
            "root_pos": root_pos,
        }
    raise RuntimeError(f"sample {index}: placement kept failing (32 attempts)")


def gen_synthetic_dataset(n, config, seed, out_path):
    """Write an n-sample dataset file; fully determined by (config, seed)."""
    if config.topology != "toy":
        raise ValueError("synthetic generation requires the toy template "
                         f"(got topology {config.topology!r})")
    hand = toy_hand()
    samples = [_generate_one(hand, config, seed, i) for i in range(n)]
    arrays = {
        "images": np.stack([s["image"] for s in samples]),
        "j2d": np.stack([s["j2d"] for s in samples]),
        "v3d_rel": np.stack([s["v3d_rel"] for s in samples]),
        "j3d_rel": np.stack([s["j3d_rel"] for s in samples]),
        "root_depth": np.array([s["root_depth"] for s in samples]),
        "root_pos": np.stack([s["root_pos"] for s in samples]),
    }
    meta = {"n": n, "seed": seed, "config": config.to_dict(), "kind": "dataset"}
    T.save_arrays(out_path, arrays, meta=meta)
    return out_path


class Dataset:
    """In-memory view of a generated dataset file."""

    def __init__(self, arrays, meta):
        self.images = arrays["images"]
        self.j2d = arrays["j2d"]
        self.v3d_rel = arrays["v3d_rel"]
        self.j3d_rel = arrays["j3d_rel"]
        self.root_depth = arrays["root_depth"]
        self.root_pos = arrays["root_pos"]
        self.meta = meta
        self.config = None
        if meta and "config" in meta:
            from .config import RunConfig
            self.config = RunConfig.from_dict(meta["config"])

    def __len__(self):
        return self.images.shape[0]


def load_dataset(path):
    arrays, meta = T.load_arrays(path)
    return Dataset(arrays, meta)


# -- train-time geometric augmentation ---------------------------------------

def _affine_resample(img, mat, shift, h, w):
    """Inverse-map bilinear warp of (C, H, W) with zero padding."""
    gy, gx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    src_x = mat[0, 0] * gx + mat[0, 1] * gy + shift[0] - 0.5
    src_y = mat[1, 0] * gx + mat[1, 1] * gy + shift[1] - 0.5
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0
    out = np.zeros((img.shape[0], h, w))
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            valid = (xi >= 0) & (xi < img.shape[2]) & (yi >= 0) & (yi < img.shape[1])
            xi_c = np.clip(xi, 0, img.shape[2] - 1)
            yi_c = np.clip(yi, 0, img.shape[1] - 1)
            out += img[:, yi_c, xi_c] * (weight * valid)[None]
    return out


def augment_batch(images, j2d, v3d_rel, j3d_rel, d_hat, config, rng):
    """Scale / rotate / translate a batch with exactly-updated labels.

    Rotating the image about the principal point rolls the camera: 3D
    labels rotate about the optical axis. Scaling reinterprets the focal
    length: the normalized depth label divides by the scale. Translation
    shifts the 2D labels only. The image itself is resampled bilinearly.
    """
    b, _, h, w = images.shape
    c = np.array([w / 2.0, h / 2.0])
    out_img = np.empty_like(images)
    out_j2d = j2d.copy()
    out_v = v3d_rel.copy()
    out_j3 = j3d_rel.copy()
    out_d = d_hat.copy()
    for i in range(b):
        s = rng.uniform(0.85, 1.15)
        ang = np.deg2rad(rng.uniform(-30.0, 30.0))
        t = rng.uniform(-0.06, 0.06, size=2) * np.array([w, h])
        rot2 = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        fwd = s * rot2
        inv = np.linalg.inv(fwd)
        # pixel p maps to fwd @ (p - c) + c + t; resample from the inverse
        shift = c - inv @ (c + t)
        out_img[i] = _affine_resample(images[i], inv, shift, h, w)
        out_j2d[i] = (j2d[i] - c) @ fwd.T + c + t
        rz = _rot_z(ang)
        out_v[i] = v3d_rel[i] @ rz.T
        out_j3[i] = j3d_rel[i] @ rz.T
        out_d[i] = d_hat[i] / s
    return out_img, out_j2d, out_v, out_j3, out_d
