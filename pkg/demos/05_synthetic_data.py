"""The synthetic data pipeline: articulate, place, rasterize, augment.

Generates a few samples, prints what the labels look like, draws one image
as ASCII art (bright = near, via the inverse-depth shading), and shows that
the geometric augmentations rewrite every label exactly instead of
approximating them.
"""

import tempfile

import numpy as np

from meshspace.depthhead import project_points
from meshspace.harness.config import RunConfig
from meshspace.harness.synth import (augment_batch, gen_synthetic_dataset,
                                     load_dataset)

ASCII = " .:-=+*#%@"


def ascii_art(img, cols=48):
    step = max(1, img.shape[0] // cols)
    small = img[::step, ::step]
    idx = (small * (len(ASCII) - 1)).round().astype(int)
    return "\n".join("".join(ASCII[v] for v in row) for row in idx)


def main():
    cfg = RunConfig(image_size=64)
    with tempfile.NamedTemporaryFile(suffix=".mspk") as fh:
        gen_synthetic_dataset(4, cfg, 7, fh.name)
        d = load_dataset(fh.name)

    print(f"{len(d)} samples; images {d.images.shape}, "
          f"joints2d {d.j2d.shape}, vertices {d.v3d_rel.shape}")
    print(f"root depths (m): {d.root_depth.round(3)} — drawn from "
          f"{cfg.depth_band}")

    print("\nsample 0, inverse-depth shading (@ = nearest):")
    print(ascii_art(d.images[0, 0]))

    cam = cfg.camera()
    reproj = project_points(d.j3d_rel[0] + d.root_pos[0], cam)
    print(f"\n2D labels reproject from 3D ones exactly: max gap "
          f"{np.abs(reproj - d.j2d[0]).max():.2e} px")

    print("\n== augmentation keeps labels exact ==")
    d_hat = d.root_depth / cam.focal_norm
    rng = np.random.default_rng(0)
    imgs, j2d, v3d, j3d, dh = augment_batch(
        d.images, d.j2d, d.v3d_rel, d.j3d_rel, d_hat, cfg, rng)
    norms_before = np.linalg.norm(d.v3d_rel[0], axis=1)
    norms_after = np.linalg.norm(v3d[0], axis=1)
    print(f"  in-plane rotation preserves vertex radii: max drift "
          f"{np.abs(norms_before - norms_after).max():.2e} m")
    print(f"  scale rescales normalized depth: "
          f"{d_hat.round(6)} -> {dh.round(6)}")
    print("  (rotation = camera roll, scale = focal reinterpretation, "
          "so 3D labels stay consistent)")


if __name__ == "__main__":
    main()
