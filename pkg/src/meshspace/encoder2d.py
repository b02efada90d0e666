"""2D feature aggregation: hourglass-lite encoder, pose pooling, and the
MLP 2D-pose relay head.

The encoder turns an RGB image into high-resolution features T at half the
input resolution. Pose pooling fuses a max-pooled copy with a bilinearly
downsampled copy (elementwise product) and aligns channels to the 21 hand
joints with a 1x1 convolution, giving pose-aligned features T_p at quarter
resolution. A small shared-weight MLP reads each joint channel of T_p and
regresses normalized 2D joint coordinates — there is no heatmap tensor and
no heatmap loss anywhere; 2D supervision flows only through these
coordinates.
"""

import numpy as np

from . import tensor as T

NUM_JOINTS = 21
ROOT_JOINT = 0      # wrist


class FeatureMaps:
    """Container for the encoder's three feature tensors.

    t: (B, C_t, h_t, w_t) high-resolution features, h_t = H/2.
    t_d: (B, C_t, h_e, w_e) max-pooled copy, h_e = h_t/2.
    t_p: (B, 21, h_e, w_e) pose-aligned features.
    """

    def __init__(self, t, t_d, t_p):
        self.t = t
        self.t_d = t_d
        self.t_p = t_p


class HourglassLite(T.Module):
    """Single-stage hourglass: stem, three pooled encoder stages, and two
    skip-connected bilinear upsampling stages back to half resolution."""

    def __init__(self, rng, c_t=64, c_in=3):
        super().__init__()
        self.c_t = c_t
        self.stem = self.add_child("stem", T.Conv2d(rng, c_in, c_t, 3, 1, 1))
        self.enc1 = self.add_child("enc1", T.Conv2d(rng, c_t, c_t, 3, 1, 1))
        self.enc2 = self.add_child("enc2", T.Conv2d(rng, c_t, c_t, 3, 1, 1))
        self.enc3 = self.add_child("enc3", T.Conv2d(rng, c_t, c_t, 3, 1, 1))
        self.dec2 = self.add_child("dec2", T.Conv2d(rng, c_t, c_t, 3, 1, 1))
        self.dec1 = self.add_child("dec1", T.Conv2d(rng, c_t, c_t, 3, 1, 1))

    def __call__(self, img):
        b, c, h, w = img.shape
        if h % 8 or w % 8:
            raise T.ShapeError(f"input {h}x{w} must be divisible by 8")
        x0 = T.relu(self.stem(img))                       # H
        x1 = T.relu(self.enc1(T.maxpool2d(x0, 2)))        # H/2
        x2 = T.relu(self.enc2(T.maxpool2d(x1, 2)))        # H/4
        x3 = T.relu(self.enc3(T.maxpool2d(x2, 2)))        # H/8
        u2 = T.bilinear_resize(x3, h // 4, w // 4) + x2   # skip at H/4
        u2 = T.relu(self.dec2(u2))
        u1 = T.bilinear_resize(u2, h // 2, w // 2) + x1   # skip at H/2
        return T.relu(self.dec1(u1))                      # T at H/2


def hourglass_forward(encoder, img):
    return encoder(img)


class PosePool(T.Module):
    """T_p = Theta(maxpool(T, 2) * bilinear(T, half)); Theta is a 1x1 conv
    mapping C_t to the 21 joint channels."""

    def __init__(self, rng, c_t=64):
        super().__init__()
        self.theta = self.add_child("theta", T.Conv2d(rng, c_t, NUM_JOINTS, 1))

    def __call__(self, t):
        b, c, h, w = t.shape
        t_d = T.maxpool2d(t, 2)
        interp = T.bilinear_resize(t, h // 2, w // 2)
        t_p = self.theta(t_d * interp)
        return FeatureMaps(t, t_d, t_p)


def pose_pool(pool, t):
    return pool(t)


class Pose2DHead(T.Module):
    """Shared per-joint MLP: (h_e * w_e) -> 32 -> 2 normalized coordinates.

    Coordinates live in normalized image units ([0,1] spans the image);
    conversion to pixels happens only at loss/metric boundaries.
    """

    def __init__(self, rng, spatial, hidden=32):
        super().__init__()
        self.spatial = spatial
        self.fc1 = self.add_child("fc1", T.Linear(rng, spatial, hidden))
        self.fc2 = self.add_child("fc2", T.Linear(rng, hidden, 2))

    def __call__(self, t_p):
        b, j, h, w = t_p.shape
        if h * w != self.spatial:
            raise T.ShapeError(f"head built for {self.spatial} cells, got {h}x{w}")
        flat = T.reshape(t_p, (b, j, h * w))
        return self.fc2(T.relu(self.fc1(flat)))           # (B, 21, 2)


def pose2d_head(head, t_p):
    return head(t_p)


class Encoder2D(T.Module):
    """Hourglass + pose pooling + relay head bundled for one image size."""

    def __init__(self, rng, image_size, c_t=64):
        super().__init__()
        if image_size % 8:
            raise T.ShapeError(f"image size {image_size} must be divisible by 8")
        self.image_size = image_size
        self.h_e = image_size // 4
        self.hourglass = self.add_child("hourglass", HourglassLite(rng, c_t))
        self.pool = self.add_child("pool", PosePool(rng, c_t))
        self.head = self.add_child("head", Pose2DHead(rng, self.h_e * self.h_e))

    def __call__(self, img):
        t = self.hourglass(img)
        fm = self.pool(t)
        joints2d = self.head(fm.t_p)
        return fm, joints2d
