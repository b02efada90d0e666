"""Training loop: Adam over the seven-term objective with step decay.

Everything downstream of the config seed is deterministic: batch order is
derived from (seed, epoch), augmentation draws from (seed, step), and the
model is initialized from the seed alone. Resuming from a checkpoint
therefore reproduces the continuation bit for bit.
"""

import csv
import os

import numpy as np

from .. import tensor as T
from .. import losses as L
from .model import build_model, load_checkpoint, save_checkpoint
from .synth import augment_batch, load_dataset

CSV_FIELDS = ("step", "p2d", "d", "b", "v", "p3d", "n", "e", "total")


class TrainingDiverged(RuntimeError):
    """Raised when the objective stops being finite; the last per-epoch
    checkpoint on disk is the recovery point."""


def lr_at_epoch(epoch, config):
    """Fixed-step decay: divide once at the configured epoch (0-based)."""
    if epoch >= config.lr_decay_epoch:
        return config.lr * config.lr_decay_factor
    return config.lr


def batch_losses(model, images, j2d_px, v3d_rel, j3d_rel, d_hat_gt, weights):
    """Forward pass plus all seven loss terms; returns (total, terms)."""
    out = model(images)
    size = model.config.image_size
    terms = {
        "p2d": L.loss_p2d(out.joints2d, j2d_px / size),
        "d": L.root_depth_loss(out.bins.d_hat, d_hat_gt),
        "b": L.loss_chamfer_bins(out.bins.centers, d_hat_gt),
    }
    l_v, l_p3d = L.loss_mesh_and_pose3d(
        out.verts_rel, v3d_rel, model.joint_regressor, j3d_gt=j3d_rel)
    terms["v"] = l_v
    terms["p3d"] = l_p3d
    terms["n"] = L.loss_normal(out.verts_rel, model.faces, v3d_rel)
    terms["e"] = L.loss_edge(out.verts_rel, model.faces, v3d_rel)
    return L.total_loss(terms, weights), terms, out


def _epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, 5, epoch]).permutation(n)


def _aug_rng(seed, step):
    return np.random.default_rng([seed, 11, step])


def train(config, out_dir, resume=None, log=print):
    """Run the configured training; returns the final checkpoint path.

    Writes into ``out_dir``: config.json, loss_curve.csv (one row per
    step with every term), checkpoint_epoch_NNN.mspk and checkpoint_last.mspk.
    """
    os.makedirs(out_dir, exist_ok=True)
    config.save(os.path.join(out_dir, "config.json"))
    if not config.data_path:
        raise ValueError("config.data_path must point at a generated dataset")
    data = load_dataset(config.data_path)
    n = len(data)
    cam = config.camera()
    focal = cam.focal_norm

    if resume:
        model, opt, meta = load_checkpoint(
            resume, opt_factory=lambda p: T.Adam(p, lr=config.lr))
        start_epoch = meta["epoch"] + 1
        step = meta["step"]
    else:
        model = build_model(config)
        opt = T.Adam(model.parameters(), lr=config.lr)
        start_epoch = 0
        step = 0

    curve_path = os.path.join(out_dir, "loss_curve.csv")
    mode = "a" if resume and os.path.exists(curve_path) else "w"
    last_path = os.path.join(out_dir, "checkpoint_last.mspk")
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size

    with open(curve_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(CSV_FIELDS)
        for epoch in range(start_epoch, config.epochs):
            opt.lr = lr_at_epoch(epoch, config)
            order = _epoch_order(config.seed, epoch, n)
            for bi in range(steps_per_epoch):
                idx = order[bi * config.batch_size:(bi + 1) * config.batch_size]
                images = data.images[idx]
                j2d = data.j2d[idx]
                v3d = data.v3d_rel[idx]
                j3d = data.j3d_rel[idx]
                d_hat = data.root_depth[idx] / focal
                if config.augment:
                    images, j2d, v3d, j3d, d_hat = augment_batch(
                        images, j2d, v3d, j3d, d_hat, config,
                        _aug_rng(config.seed, step))
                try:
                    total, terms, _ = batch_losses(
                        model, images, j2d, v3d, j3d, d_hat,
                        config.loss_weights)
                    if not np.isfinite(total.data):
                        raise ValueError("total loss is non-finite")
                    opt.zero_grad()
                    total.backward()
                    opt.step()
                except (ValueError, T.GradientError) as exc:
                    raise TrainingDiverged(
                        f"step {step}: {exc}; last good checkpoint: "
                        f"{last_path if os.path.exists(last_path) else 'none'}"
                    ) from exc
                writer.writerow([step] + [f"{float(terms[k].data):.10g}"
                                          for k in CSV_FIELDS[1:-1]]
                                + [f"{float(total.data):.10g}"])
                step += 1
            epoch_path = os.path.join(out_dir, f"checkpoint_epoch_{epoch:03d}.mspk")
            save_checkpoint(epoch_path, model, opt, epoch=epoch, step=step)
            save_checkpoint(last_path, model, opt, epoch=epoch, step=step)
            fh.flush()
            if log:
                log(f"epoch {epoch}: step {step}, lr {opt.lr:.2e}, "
                    f"total {float(total.data):.6f}")
    return last_path
