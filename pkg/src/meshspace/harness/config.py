"""Run configuration: one JSON-serializable object drives every stage.

The defaults are desk scale — 64x64 images, a few hundred synthetic
samples, small channel counts — so the full pipeline trains in minutes on
a CPU. ``full_scale()`` returns the documented full-size configuration
(224x224, batch 32, wide channels); it is expensive but structurally
identical.
"""

import json

from ..depthhead import CameraIntrinsics
from ..losses import LossWeights

# Train-time scale augmentation rescales the normalized depth label by up
# to this factor either way; the bin range is widened to keep labels inside.
AUG_DEPTH_MARGIN = 1.3


class RunConfig:
    def __init__(self,
                 topology="toy",
                 image_size=64,
                 hierarchy_depth=3,
                 cheb_orders=(2, 3, 4),
                 final_order=3,
                 decoder_channels=(96, 64, 48),
                 se_reduction=4,
                 serial_blocks=False,
                 c_t=32,
                 d_latent=256,
                 n_bins=16,
                 s_e=64,
                 patch_size=4,
                 n_query=16,
                 bin_eps=1e-3,
                 loss_weights=None,
                 lr=1e-4,
                 lr_decay_epoch=40,
                 lr_decay_factor=0.1,
                 epochs=50,
                 batch_size=8,
                 seed=0,
                 n_train=512,
                 n_eval=128,
                 depth_band=(0.35, 0.65),
                 focal=None,
                 augment=True,
                 data_path=None):
        self.topology = topology
        self.image_size = int(image_size)
        self.hierarchy_depth = int(hierarchy_depth)
        self.cheb_orders = tuple(int(k) for k in cheb_orders)
        self.final_order = int(final_order)
        self.decoder_channels = tuple(int(c) for c in decoder_channels)
        self.se_reduction = int(se_reduction)
        self.serial_blocks = bool(serial_blocks)
        self.c_t = int(c_t)
        self.d_latent = int(d_latent)
        self.n_bins = int(n_bins)
        self.s_e = int(s_e)
        self.patch_size = int(patch_size)
        self.n_query = int(n_query)
        self.bin_eps = float(bin_eps)
        if isinstance(loss_weights, LossWeights):
            self.loss_weights = loss_weights
        elif loss_weights:
            self.loss_weights = LossWeights.from_dict(loss_weights)
        else:
            self.loss_weights = LossWeights()
        self.lr = float(lr)
        self.lr_decay_epoch = int(lr_decay_epoch)
        self.lr_decay_factor = float(lr_decay_factor)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.n_train = int(n_train)
        self.n_eval = int(n_eval)
        self.depth_band = (float(depth_band[0]), float(depth_band[1]))
        # Default focal scales with resolution: 1.25 px of focal per px of
        # image keeps the hand's angular footprint constant across sizes.
        self.focal = float(focal) if focal is not None else 1.25 * self.image_size
        self.augment = bool(augment)
        self.data_path = data_path
        self._validate()

    def _validate(self):
        positives = {
            "image_size": self.image_size, "hierarchy_depth": self.hierarchy_depth,
            "c_t": self.c_t, "d_latent": self.d_latent, "n_bins": self.n_bins,
            "s_e": self.s_e, "patch_size": self.patch_size, "n_query": self.n_query,
            "lr": self.lr, "epochs": self.epochs, "batch_size": self.batch_size,
            "n_train": self.n_train, "n_eval": self.n_eval, "focal": self.focal,
            "bin_eps": self.bin_eps, "lr_decay_factor": self.lr_decay_factor,
        }
        for name, val in positives.items():
            if val <= 0:
                raise ValueError(f"config field {name} must be positive, got {val}")
        if not self.depth_band[0] < self.depth_band[1]:
            raise ValueError(f"bad depth band {self.depth_band}")
        if self.depth_band[0] <= 0:
            raise ValueError("depth band must be positive")
        if any(k < 1 for k in self.cheb_orders):
            raise ValueError(f"bad Chebyshev orders {self.cheb_orders}")

    def camera(self):
        c = self.image_size / 2.0
        return CameraIntrinsics(self.focal, self.focal, c, c)

    def normalized_depth_band(self):
        """The metric placement band in camera-normalized units."""
        f = self.camera().focal_norm
        return self.depth_band[0] / f, self.depth_band[1] / f

    def bin_range(self):
        """Bin span = placement band widened for augmentation label shifts."""
        lo, hi = self.normalized_depth_band()
        return lo / AUG_DEPTH_MARGIN, hi * AUG_DEPTH_MARGIN

    def to_dict(self):
        d = dict(self.__dict__)
        d["cheb_orders"] = list(self.cheb_orders)
        d["decoder_channels"] = list(self.decoder_channels)
        d["depth_band"] = list(self.depth_band)
        d["loss_weights"] = self.loss_weights.to_dict()
        return d

    @staticmethod
    def from_dict(d):
        return RunConfig(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            return RunConfig.from_dict(json.load(fh))


def full_scale(**overrides):
    """Full-size configuration as documented: 224x224 input, batch 32,
    wide decoder; expect hours, not minutes, on CPU."""
    base = dict(image_size=224, batch_size=32, c_t=64, d_latent=512,
                decoder_channels=(256, 128, 64), n_train=4096, n_eval=512)
    base.update(overrides)
    return RunConfig(**base)
