"""Camera-space root depth recovery by adaptive-bin classification.

Depth works in camera-normalized units d_hat = d / sqrt(fx * fy), which
removes the focal-length/depth ambiguity of monocular scale. A fixed
normalized range [d_min, d_max] is partitioned into N bins whose widths are
regressed per image (adaptive binning); a global-local cross-attention
stack scores each bin with a confidence, and the final depth is the
confidence-weighted combination of bin centers — classification smoothed
into regression. The camera-space hand is the root-relative mesh
translated by the back-projected root.
"""

import numpy as np

from . import tensor as T


class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    def __init__(self, fx, fy, cx, cy):
        if fx <= 0 or fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={fx}, fy={fy}")
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)

    @property
    def focal_norm(self):
        return np.sqrt(self.fx * self.fy)

    @staticmethod
    def from_dict(d):
        return CameraIntrinsics(d["fx"], d["fy"], d["cx"], d["cy"])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


def normalize_depth(d, cam):
    """d_hat = d / sqrt(fx * fy); accepts scalars or arrays of meters."""
    d = np.asarray(d, dtype=np.float64)
    if (d <= 0).any():
        raise ValueError("depth must be positive")
    return d / cam.focal_norm


def denormalize_depth(d_hat, cam):
    return np.asarray(d_hat, dtype=np.float64) * cam.focal_norm


def project_points(xyz, cam):
    """Pinhole projection of (..,3) camera-space meters to (..,2) pixels."""
    xyz = np.asarray(xyz, dtype=np.float64)
    z = xyz[..., 2]
    u = cam.fx * xyz[..., 0] / z + cam.cx
    v = cam.fy * xyz[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def backproject_root(j2d_root, d_root, cam):
    """(u, v) pixels and metric depth -> camera-space (X, Y, Z) meters."""
    u, v = float(j2d_root[0]), float(j2d_root[1])
    if d_root <= 0:
        raise ValueError(f"root depth must be positive, got {d_root}")
    x = (u - cam.cx) * d_root / cam.fx
    y = (v - cam.cy) * d_root / cam.fy
    return np.array([x, y, d_root])


# -- adaptive bins -----------------------------------------------------------

def compute_bin_widths(y, eps=1e-3):
    """b_i = (relu(y)_i + eps) / sum_j (relu(y)_j + eps) along the last axis.

    The epsilon keeps every width positive (and handles all-zero y); the
    shared denominator makes the widths sum to 1 by construction.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    y = y if isinstance(y, T.DTensor) else T.DTensor.constant(y)
    if y.shape[-1] < 1:
        raise T.ShapeError("need at least one bin")
    shifted = T.relu(y) + eps
    total = T.sum_(shifted, axis=-1, keepdims=True)
    return shifted / total


def compute_bin_centers(b, d_min, d_max):
    """B_i = d_min + (d_max - d_min) * (b_i / 2 + sum_{j<i} b_j)."""
    if d_min >= d_max:
        raise ValueError(f"need d_min < d_max, got ({d_min}, {d_max})")
    b = b if isinstance(b, T.DTensor) else T.DTensor.constant(b)
    csum = T.cumsum(b, axis=b.ndim - 1)
    prefix = csum - b                       # exclusive prefix sum
    return d_min + (d_max - d_min) * (prefix + 0.5 * b)


def depth_from_bins(centers, p):
    """d_hat = sum_i B_i p_i; a convex combination stays inside the range."""
    centers = centers if isinstance(centers, T.DTensor) else T.DTensor.constant(centers)
    p = p if isinstance(p, T.DTensor) else T.DTensor.constant(p)
    return T.sum_(centers * p, axis=-1)


# -- attention machinery -----------------------------------------------------

class PatchEmbed(T.Module):
    """s x s / stride-s patch embedding to S_E channels, a two-layer conv
    block, then row-major flattening into L tokens; the first n_query tokens
    form the spatial query factor C_query."""

    def __init__(self, rng, c_in, h_t, w_t, s=4, s_e=64, n_query=16):
        super().__init__()
        if h_t % s or w_t % s:
            raise T.ShapeError(f"feature map {h_t}x{w_t} not divisible by patch size {s}")
        self.tokens = (h_t // s) * (w_t // s)
        if self.tokens < n_query:
            raise T.ShapeError(
                f"{self.tokens} tokens < {n_query} queries; enlarge the input "
                f"or shrink s")
        self.s_e = s_e
        self.n_query = n_query
        self.proj = self.add_child("proj", T.Conv2d(rng, c_in, s_e, s, stride=s))
        self.conv1 = self.add_child("conv1", T.Conv2d(rng, s_e, s_e, 3, 1, 1))
        self.conv2 = self.add_child("conv2", T.Conv2d(rng, s_e, s_e, 3, 1, 1))

    def __call__(self, t):
        x = self.proj(t)
        x = T.relu(self.conv1(x))
        x = T.relu(self.conv2(x))
        b = x.shape[0]
        tokens = T.reshape(x, (b, self.s_e, self.tokens))
        tokens = T.transpose(tokens, (0, 2, 1))          # (B, L, S_E)
        return tokens[:, :self.n_query]


def patch_embed_and_query(embed, t):
    return embed(t)


class RegressorBlock(T.Module):
    """Two 1-D convolutions along the token axis with ReLU, then a shared
    scalar head: (B, N, S_E) queries -> (B, N) bin-width logits y."""

    def __init__(self, rng, s_e, kernel=3):
        super().__init__()
        pad = kernel // 2
        self.conv1 = self.add_child("conv1", T.Conv2d(rng, s_e, s_e, (1, kernel),
                                                      stride=1, pad=(0, pad)))
        self.conv2 = self.add_child("conv2", T.Conv2d(rng, s_e, s_e, (1, kernel),
                                                      stride=1, pad=(0, pad)))
        self.head = self.add_child("head", T.Linear(rng, s_e, 1))

    def __call__(self, q):
        b, n, s_e = q.shape
        x = T.reshape(T.transpose(q, (0, 2, 1)), (b, s_e, 1, n))
        x = T.relu(self.conv1(x))
        x = T.relu(self.conv2(x))
        x = T.transpose(T.reshape(x, (b, s_e, n)), (0, 2, 1))   # (B, N, S_E)
        return T.reshape(self.head(x), (b, n))


class GLCrossAttention(T.Module):
    """Global-local residual cross-attention producing bin confidences.

    Keys and values are 1x1-conv projections of the pose-aligned features
    (the local stream); queries come from patch-embedded global features.
    A = Q + softmax(Q K^T / sqrt(S_E)) V, then a token-mixing map to N
    channels, adaptive average pooling over the embedding axis, and a
    softmax over bins.
    """

    def __init__(self, rng, c_local, s_e, n_query, n_bins):
        super().__init__()
        self.s_e = s_e
        self.key = self.add_child("key", T.Conv2d(rng, c_local, s_e, 1))
        self.value = self.add_child("value", T.Conv2d(rng, c_local, s_e, 1))
        self.mix = self.add_child("mix", T.Linear(rng, n_query, n_bins))

    def attend(self, c_query, t_p):
        b, c, h, w = t_p.shape
        k = T.transpose(T.reshape(self.key(t_p), (b, self.s_e, h * w)), (0, 2, 1))
        v = T.transpose(T.reshape(self.value(t_p), (b, self.s_e, h * w)), (0, 2, 1))
        scores = T.matmul(c_query, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(self.s_e))
        attn = T.matmul(T.softmax(scores, axis=2), v)
        return c_query + attn                            # (B, N_q, S_E)

    def __call__(self, c_query, t_p):
        a = self.attend(c_query, t_p)
        mixed = T.transpose(self.mix(T.transpose(a, (0, 2, 1))), (0, 2, 1))
        logits = T.mean(mixed, axis=2)                   # pool embeddings -> (B, N)
        return a, T.softmax(logits, axis=1)


def gl_cross_attention(attn, c_query, t_p):
    return attn(c_query, t_p)


class BinPrediction:
    """Everything the depth stage produces for one batch."""

    def __init__(self, y, widths, centers, p, d_hat, attn):
        self.y = y              # (B, N) raw width logits
        self.widths = widths    # (B, N)
        self.centers = centers  # (B, N)
        self.p = p              # (B, N) confidences
        self.d_hat = d_hat      # (B,) normalized root depth
        self.attn = attn        # (B, N_q, S_E) residual attention output


class DepthHead(T.Module):
    """Full root-depth stage: patch embed, width regression, cross-attention,
    and the confidence-weighted depth readout, in normalized units."""

    def __init__(self, rng, c_global, c_local, h_t, w_t, s=4, s_e=64,
                 n_bins=16, n_query=None, d_range=(0.1, 2.5), eps=1e-3):
        super().__init__()
        n_query = n_bins if n_query is None else n_query
        if n_query < n_bins:
            raise T.ShapeError(f"need n_query >= n_bins, got {n_query} < {n_bins}")
        self.n_bins = n_bins
        self.d_min, self.d_max = d_range
        if self.d_min >= self.d_max:
            raise ValueError(f"bad depth range {d_range}")
        self.eps = eps
        self.embed = self.add_child("embed", PatchEmbed(
            rng, c_global, h_t, w_t, s, s_e, n_query))
        self.regressor = self.add_child("regressor", RegressorBlock(rng, s_e))
        self.attn = self.add_child("attn", GLCrossAttention(
            rng, c_local, s_e, n_query, n_bins))

    def __call__(self, t, t_p):
        c_query = self.embed(t)
        y = self.regressor(c_query[:, :self.n_bins])
        widths = compute_bin_widths(y, self.eps)
        centers = compute_bin_centers(widths, self.d_min, self.d_max)
        a, p = self.attn(c_query, t_p)
        d_hat = depth_from_bins(centers, p)
        return BinPrediction(y, widths, centers, p, d_hat, a)
