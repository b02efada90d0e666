"""meshspace: camera-space 3D hand mesh recovery at desk scale.

Two-stage pipeline: a spectral graph-convolutional decoder predicts a
root-relative hand mesh from a monocular image, and an adaptive-bin
classification head with global-local cross-attention recovers the
camera-space root depth. Everything runs on a small numpy/scipy autodiff
engine so the full system is trainable and verifiable end to end.
"""

__version__ = "0.1.0"

from . import tensor  # noqa: F401
