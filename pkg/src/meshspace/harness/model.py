"""Full two-stage model: 2D encoding, spectral mesh decoding, root depth.

Stage one predicts the root-relative mesh from a single RGB image; stage
two classifies the root depth over adaptive bins. Their composition —
root-relative vertices translated by the back-projected root — is the
camera-space hand.
"""

import numpy as np

from .. import tensor as T
from ..depthhead import DepthHead, backproject_root, denormalize_depth
from ..encoder2d import Encoder2D
from ..gcn import LatentEncoder, MeshDecoder
from ..meshgraph import coarsen_hierarchy, toy_hand

CHECKPOINT_KIND = "checkpoint"


def _template(config):
    if config.topology == "toy":
        hand = toy_hand()
        return hand.graph, hand.faces, hand.joint_regressor
    if not config.topology.endswith(".json"):
        raise ValueError(
            f"topology {config.topology!r} must be 'toy' or a topology JSON "
            "with a joint_regressor")
    from ..meshgraph import load_topology_json
    mesh, regressor = load_topology_json(config.topology)
    if regressor is None:
        raise ValueError(f"topology {config.topology} lacks a joint_regressor")
    return mesh, mesh.faces, regressor


class ModelOutput:
    def __init__(self, joints2d, verts_rel, bins, features):
        self.joints2d = joints2d      # (B, 21, 2) in [0,1] image units
        self.verts_rel = verts_rel    # (B, V, 3) meters, root-relative
        self.bins = bins              # BinPrediction (normalized depth)
        self.features = features      # encoder FeatureMaps


class HandNet(T.Module):
    """Image -> (2D pose, root-relative mesh, adaptive-bin root depth)."""

    def __init__(self, rng, config):
        super().__init__()
        self.config = config
        graph, faces, regressor = _template(config)
        self.faces = faces
        self.joint_regressor = regressor
        self.hierarchy = coarsen_hierarchy(graph, levels=config.hierarchy_depth)

        size = config.image_size
        self.encoder = self.add_child(
            "encoder", Encoder2D(rng, size, c_t=config.c_t))
        h_e = size // 4
        d_in = config.c_t + 21 * h_e * h_e
        self.latent = self.add_child(
            "latent", LatentEncoder(rng, d_in, d=config.d_latent))
        self.decoder = self.add_child("decoder", MeshDecoder(
            rng, self.hierarchy, config.d_latent,
            channels=config.decoder_channels, orders=config.cheb_orders,
            final_order=config.final_order, se_reduction=config.se_reduction,
            serial=config.serial_blocks))
        self.depth = self.add_child("depth", DepthHead(
            rng, c_global=config.c_t, c_local=21, h_t=size // 2, w_t=size // 2,
            s=config.patch_size, s_e=config.s_e, n_bins=config.n_bins,
            n_query=config.n_query, d_range=config.bin_range(),
            eps=config.bin_eps))

    def __call__(self, images):
        images = images if isinstance(images, T.DTensor) else T.DTensor.constant(images)
        fm, joints2d = self.encoder(images)
        b = images.shape[0]
        pooled = T.mean(fm.t, axis=(2, 3))                    # (B, C_t)
        flat_p = T.reshape(fm.t_p, (b, int(np.prod(fm.t_p.shape[1:]))))
        latent = self.latent(T.concat([pooled, flat_p], axis=1))
        verts_rel = self.decoder(latent)
        bins = self.depth(fm.t, fm.t_p)
        return ModelOutput(joints2d, verts_rel, bins, fm)

    def joints3d_rel(self, verts_rel):
        """Regress (B, 21, 3) root-relative joints from predicted vertices."""
        return T.matmul(T.DTensor.constant(self.joint_regressor), verts_rel)

    def camera_space(self, out, cam, gt_root2d=None):
        """Assemble camera-space geometry (numpy; used for eval/inference).

        The root pixel is the predicted 2D wrist unless ``gt_root2d``
        supplies ground truth (ablation). Returns a dict of arrays.
        """
        size = self.config.image_size
        j2d_px = out.joints2d.data * size
        root_uv = gt_root2d if gt_root2d is not None else j2d_px[:, 0]
        d_root = denormalize_depth(np.maximum(out.bins.d_hat.data, 1e-9), cam)
        roots = np.stack([backproject_root(root_uv[i], d_root[i], cam)
                          for i in range(len(d_root))])
        v_cam = out.verts_rel.data + roots[:, None]
        j_cam = np.einsum("jv,bvc->bjc", self.joint_regressor, out.verts_rel.data) \
            + roots[:, None]
        return {"root": roots, "verts_cam": v_cam, "joints_cam": j_cam,
                "root_depth": d_root, "j2d_px": j2d_px}


def build_model(config, rng=None):
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return HandNet(rng, config)


def save_checkpoint(path, model, opt=None, epoch=0, step=0, extra=None):
    arrays = {f"param/{k}": p.data for k, p in model.parameters().items()}
    meta = {"kind": CHECKPOINT_KIND, "epoch": int(epoch), "step": int(step),
            "config": model.config.to_dict(), "adam_step": 0}
    if opt is not None:
        arrays.update(opt.state_arrays())
        meta["adam_step"] = int(opt.state.step_count)
        meta["lr"] = float(opt.lr)
    if extra:
        meta.update(extra)
    T.save_arrays(path, arrays, meta=meta)
    return path


def load_checkpoint(path, opt_factory=None):
    """Rebuild the model (and optionally its optimizer) from a checkpoint.

    ``opt_factory``: callable(params) -> Adam; its state is restored too.
    Returns (model, opt_or_None, meta).
    """
    from .config import RunConfig
    arrays, meta = T.load_arrays(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path}: not a checkpoint file")
    config = RunConfig.from_dict(meta["config"])
    model = build_model(config)
    params = {k[len("param/"):]: v for k, v in arrays.items()
              if k.startswith("param/")}
    model.load_parameters(params)
    opt = None
    if opt_factory is not None:
        opt = opt_factory(model.parameters())
        opt.load_state_arrays(arrays, meta.get("adam_step", 0))
        if "lr" in meta:
            opt.lr = meta["lr"]
    return model, opt, meta
