"""Command-line entry points.

Subcommands: gen-data, train, eval, infer, export-mesh. Every command is
driven by the same JSON RunConfig; outputs are the package's binary array
files, CSV curves, JSON metrics, and OBJ meshes.
"""

import argparse
import json
import sys

import numpy as np

from ..depthhead import CameraIntrinsics
from .config import RunConfig
from .metrics import evaluate, export_metrics, export_obj
from .model import load_checkpoint
from .synth import gen_synthetic_dataset, load_dataset
from .train import train


def _load_config(path):
    return RunConfig.load(path) if path else RunConfig()


def cmd_gen_data(args):
    config = _load_config(args.config)
    path = gen_synthetic_dataset(args.n, config, args.seed, args.out)
    print(f"wrote {args.n} samples to {path}")
    return 0


def cmd_train(args):
    config = RunConfig.load(args.config)
    last = train(config, args.out, resume=args.resume)
    print(f"final checkpoint: {last}")
    return 0


def cmd_eval(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    results = []
    if args.repeats <= 1:
        results.append(evaluate(model, load_dataset(args.data),
                                use_gt_root2d=args.gt_root2d,
                                pck_2d=args.pck_2d))
    else:
        base = load_dataset(args.data)
        cfg = base.config or model.config
        seed0 = int(base.meta.get("seed", cfg.seed))
        for r in range(args.repeats):
            path = f"{args.data}.rep{r}"
            gen_synthetic_dataset(len(base), cfg, seed0 + r, path)
            results.append(evaluate(model, load_dataset(path),
                                    use_gt_root2d=args.gt_root2d,
                                    pck_2d=args.pck_2d))
    keys = sorted(results[0])
    for k in keys:
        vals = np.array([r[k] for r in results])
        if len(vals) > 1:
            print(f"{k}: {vals.mean():.4f} +/- {vals.std():.4f}")
        else:
            print(f"{k}: {vals[0]:.4f}")
    mean = {k: float(np.mean([r[k] for r in results])) for k in keys}
    if args.out:
        paths = export_metrics(mean, args.out)
        print("wrote", *paths)
    return 0


def _parse_cam(spec):
    if spec.lstrip().startswith("{"):
        return CameraIntrinsics.from_dict(json.loads(spec))
    with open(spec) as fh:
        return CameraIntrinsics.from_dict(json.load(fh))


def _load_image(path, size):
    from PIL import Image
    img = Image.open(path).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)[None]          # (1, 3, H, W)


def cmd_infer(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    cam = _parse_cam(args.cam) if args.cam else model.config.camera()
    images = _load_image(args.image, model.config.image_size)
    out = model(images)
    cs = model.camera_space(out, cam)
    report = {
        "root_xyz_m": cs["root"][0].tolist(),
        "root_depth_m": float(cs["root_depth"][0]),
        "root_depth_normalized": float(out.bins.d_hat.data[0]),
        "joints2d_px": cs["j2d_px"][0].tolist(),
    }
    print(json.dumps(report, indent=2))
    if args.out:
        export_obj(cs["verts_cam"][0], model.faces, args.out)
        print(f"wrote mesh to {args.out}", file=sys.stderr)
    return 0


def _split_sample(spec):
    if ":" in spec and not spec.endswith(".mspk"):
        path, idx = spec.rsplit(":", 1)
        return path, int(idx)
    return spec, 0


def cmd_export_mesh(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    path, idx = _split_sample(args.sample)
    data = load_dataset(path)
    if not 0 <= idx < len(data):
        raise SystemExit(f"sample index {idx} out of range [0, {len(data)})")
    cam = data.config.camera() if data.config else model.config.camera()
    out = model(data.images[idx:idx + 1])
    cs = model.camera_space(out, cam)
    export_obj(cs["verts_cam"][0], model.faces, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="meshspace",
        description="Camera-space 3D hand mesh recovery (desk-scale harness)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="RunConfig JSON (defaults: desk scale)")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train from a config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--repeats", type=int, default=1,
                   help="N>1: regenerate eval data N times (seed..seed+N-1) "
                        "and report mean +/- std")
    e.add_argument("--out", help="prefix for metrics JSON/CSV")
    e.add_argument("--gt-root2d", action="store_true",
                   help="ablation: use the ground-truth wrist pixel")
    e.add_argument("--pck-2d", action="store_true",
                   help="PCK over 2D pixel errors instead of 3D mm")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="run on a single image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--cam", help="intrinsics JSON (inline or path); "
                                 "defaults to the training camera")
    i.add_argument("--out", help="write the camera-space mesh as OBJ")
    i.set_defaults(fn=cmd_infer)

    x = sub.add_parser("export-mesh", help="export a predicted mesh as OBJ")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--sample", required=True,
                   help="dataset file, optionally PATH:INDEX (default index 0)")
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export_mesh)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
