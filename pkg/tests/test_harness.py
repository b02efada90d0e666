"""Harness: synthesis, augmentation, training loop, metrics, CLI."""

import json
import os

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import meshspace.tensor as T
from meshspace.depthhead import CameraIntrinsics, project_points
from meshspace.harness.cli import main
from meshspace.harness.config import RunConfig, full_scale
from meshspace.harness.metrics import (evaluate, evaluate_predictions,
                                       export_metrics, export_obj, pck_auc,
                                       procrustes_align)
from meshspace.harness.model import build_model, load_checkpoint, save_checkpoint
from meshspace.harness.synth import (BehindCameraError, articulate_hand,
                                     augment_batch, gen_synthetic_dataset,
                                     load_dataset, rasterize_mesh)
from meshspace.harness.train import TrainingDiverged, lr_at_epoch, train
from meshspace.meshgraph import parse_obj, toy_hand


def _tiny_config(**kw):
    args = dict(image_size=32, c_t=8, d_latent=32, decoder_channels=(16, 12, 10),
                n_bins=8, n_query=8, s_e=16, batch_size=2, epochs=2,
                n_train=4, n_eval=2, augment=False, seed=0)
    args.update(kw)
    return RunConfig(**args)


# -- config ------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = _tiny_config(seed=7)
    p = tmp_path / "config.json"
    cfg.save(p)
    back = RunConfig.load(p)
    assert back.to_dict() == cfg.to_dict()


def test_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        RunConfig(image_size=0)
    with pytest.raises(ValueError):
        RunConfig(depth_band=(0.5, 0.4))


def test_full_scale_config():
    cfg = full_scale()
    assert cfg.image_size == 224
    assert cfg.batch_size == 32
    assert cfg.decoder_channels == (256, 128, 64)


# -- synthesis ---------------------------------------------------------------

def test_gen_data_deterministic(tmp_path):
    cfg = _tiny_config()
    a, b = tmp_path / "a.mspk", tmp_path / "b.mspk"
    gen_synthetic_dataset(3, cfg, 11, a)
    gen_synthetic_dataset(3, cfg, 11, b)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.mspk"
    gen_synthetic_dataset(3, cfg, 12, c)
    assert a.read_bytes() != c.read_bytes()


def test_samples_projection_consistent(tmp_path):
    cfg = _tiny_config()
    path = tmp_path / "d.mspk"
    gen_synthetic_dataset(6, cfg, 3, path)
    d = load_dataset(path)
    cam = cfg.camera()
    for i in range(len(d)):
        uv = project_points(d.j3d_rel[i] + d.root_pos[i], cam)
        assert np.abs(uv - d.j2d[i]).max() < 0.5


def test_root_depth_in_band(tmp_path):
    cfg = _tiny_config()
    path = tmp_path / "d.mspk"
    gen_synthetic_dataset(8, cfg, 5, path)
    d = load_dataset(path)
    lo, hi = cfg.depth_band
    assert (d.root_depth >= lo).all() and (d.root_depth <= hi).all()
    assert np.allclose(d.root_depth, d.root_pos[:, 2])


def test_articulation_moves_fingers_rigidly():
    hand = toy_hand()
    rng = np.random.default_rng(2)
    posed = articulate_hand(hand, rng)
    palm = hand.vertex_finger == -1
    assert np.array_equal(posed[palm], hand.verts[palm])
    assert not np.allclose(posed[~palm], hand.verts[~palm])
    # ring rigidity: pairwise distances inside each joint ring are preserved
    for f in range(5):
        for ring in (0, 3, 6, 8):
            base = 50 + f * 36 + 4 * ring
            rest = hand.verts[base:base + 4]
            now = posed[base:base + 4]
            d_rest = np.linalg.norm(rest[:, None] - rest[None], axis=-1)
            d_now = np.linalg.norm(now[:, None] - now[None], axis=-1)
            assert np.abs(d_rest - d_now).max() < 1e-12


def test_rasterize_empty_mesh_is_black():
    cam = CameraIntrinsics(40, 40, 16, 16)
    img = rasterize_mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), cam, 32, 32)
    assert img.shape == (32, 32)
    assert np.all(img == 0.0)


def test_rasterize_zbuffer_near_wins():
    cam = CameraIntrinsics(32, 32, 16, 16)
    # big far triangle at z=2, small near one at z=1 over the image center
    far = np.array([[-0.75, -0.75, 2.0], [0.75, -0.75, 2.0], [0.0, 1.0, 2.0]])
    near = np.array([[-0.1, -0.1, 1.0], [0.1, -0.1, 1.0], [0.0, 0.15, 1.0]])
    verts = np.vstack([far, near])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    img = rasterize_mesh(verts, faces, cam, 32, 32)
    # inverse-depth shading: shade(z=1) = 1, shade(z=2) = 0
    assert img[16, 16] == 1.0          # center covered by the near triangle
    assert img[6, 16] == 0.0           # top region only reaches the far one
    only_far = rasterize_mesh(far, np.array([[0, 1, 2]]), cam, 32, 32)
    assert only_far[16, 16] == 1.0     # alone, the far triangle sets the scale


def test_rasterize_rejects_behind_camera():
    cam = CameraIntrinsics(32, 32, 16, 16)
    verts = np.array([[0.0, 0, 1], [1, 0, 1], [0, 1, -0.5]])
    with pytest.raises(BehindCameraError):
        rasterize_mesh(verts, np.array([[0, 1, 2]]), cam, 32, 32)


def test_gen_data_requires_toy(tmp_path):
    cfg = _tiny_config()
    cfg.topology = "somewhere/mano.json"
    with pytest.raises(ValueError, match="toy"):
        gen_synthetic_dataset(1, cfg, 0, tmp_path / "x.mspk")


# -- augmentation ------------------------------------------------------------

class _ScriptedRng:
    """uniform() returns scripted values (midpoint = identity transform)."""

    def __init__(self, vals=None):
        self.vals = list(vals) if vals else None

    def uniform(self, lo, hi, size=None):
        if self.vals is None:
            mid = (lo + hi) / 2.0
            return np.full(size, mid) if size else mid
        v = self.vals.pop(0)
        return np.asarray(v) if size else v


def test_augment_identity_draw_is_exact_noop(tmp_path):
    cfg = _tiny_config()
    path = tmp_path / "d.mspk"
    gen_synthetic_dataset(2, cfg, 1, path)
    d = load_dataset(path)
    d_hat = d.root_depth / cfg.camera().focal_norm
    out = augment_batch(d.images, d.j2d, d.v3d_rel, d.j3d_rel, d_hat,
                        cfg, _ScriptedRng())
    assert np.array_equal(out[0], d.images)
    assert np.allclose(out[1], d.j2d, atol=1e-12)
    assert np.array_equal(out[2], d.v3d_rel)
    assert np.array_equal(out[4], d_hat)


def test_augment_labels_follow_transform(tmp_path):
    cfg = _tiny_config()
    path = tmp_path / "d.mspk"
    gen_synthetic_dataset(1, cfg, 2, path)
    d = load_dataset(path)
    d_hat = d.root_depth / cfg.camera().focal_norm
    s, ang_deg, tx, ty = 1.1, 20.0, 0.02, -0.01
    rng = _ScriptedRng([s, ang_deg, np.array([tx, ty])])
    _, j2d, v, j3, dh = augment_batch(d.images, d.j2d, d.v3d_rel, d.j3d_rel,
                                      d_hat, cfg, rng)
    ang = np.deg2rad(ang_deg)
    c = np.array([16.0, 16.0])
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    want = (d.j2d[0] - c) @ (s * rot).T + c + np.array([tx * 32, ty * 32])
    assert np.abs(j2d[0] - want).max() < 1e-9
    assert dh[0] == pytest.approx(d_hat[0] / s, abs=1e-15)
    # 3D labels rotate about the optical axis; norms are preserved
    assert np.abs(np.linalg.norm(v[0], axis=1)
                  - np.linalg.norm(d.v3d_rel[0], axis=1)).max() < 1e-12
    assert np.abs(v[0][:, 2] - d.v3d_rel[0][:, 2]).max() < 1e-12


# -- model -------------------------------------------------------------------

def test_model_forward_shapes(tmp_path):
    cfg = _tiny_config()
    model = build_model(cfg)
    images = np.random.default_rng(0).uniform(0, 1, size=(2, 3, 32, 32))
    out = model(images)
    n = toy_hand().num_vertices
    assert out.joints2d.shape == (2, 21, 2)
    assert out.verts_rel.shape == (2, n, 3)
    assert out.bins.d_hat.shape == (2,)
    cs = model.camera_space(out, cfg.camera())
    assert cs["verts_cam"].shape == (2, n, 3)
    assert cs["joints_cam"].shape == (2, 21, 3)
    # the assembled root reprojects onto the chosen 2D root pixel
    uv = project_points(cs["root"], cfg.camera())
    assert np.abs(uv - cs["j2d_px"][:, 0]).max() < 1e-9


def test_checkpoint_roundtrip(tmp_path):
    cfg = _tiny_config()
    model = build_model(cfg)
    opt = T.Adam(model.parameters(), lr=3e-4)
    path = tmp_path / "ck.mspk"
    save_checkpoint(path, model, opt, epoch=4, step=17)
    back, opt2, meta = load_checkpoint(
        path, opt_factory=lambda p: T.Adam(p, lr=1.0))
    assert meta["epoch"] == 4 and meta["step"] == 17
    assert opt2.lr == 3e-4
    for k, p in model.parameters().items():
        assert np.array_equal(p.data, back.parameters()[k].data)
    images = np.random.default_rng(1).uniform(0, 1, size=(1, 3, 32, 32))
    assert np.array_equal(model(images).verts_rel.data,
                          back(images).verts_rel.data)


def test_checkpoint_rejects_wrong_kind(tmp_path):
    p = tmp_path / "bad.mspk"
    T.save_arrays(p, {"x": np.zeros(3)}, meta={"kind": "dataset"})
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(p)


# -- training ----------------------------------------------------------------

def test_lr_schedule_divides_at_epoch_40():
    cfg = RunConfig()
    assert lr_at_epoch(0, cfg) == 1e-4
    assert lr_at_epoch(39, cfg) == 1e-4
    assert lr_at_epoch(40, cfg) == pytest.approx(1e-5)
    assert lr_at_epoch(49, cfg) == pytest.approx(1e-5)


def _trained(tmp_path, name="run", **kw):
    cfg = _tiny_config(**kw)
    data = tmp_path / "train.mspk"
    gen_synthetic_dataset(cfg.n_train, cfg, cfg.seed, data)
    cfg.data_path = str(data)
    out = tmp_path / name
    last = train(cfg, out, log=None)
    return cfg, out, last


def test_train_writes_artifacts(tmp_path):
    cfg, out, last = _trained(tmp_path)
    assert os.path.exists(last)
    assert (out / "config.json").exists()
    curve = (out / "loss_curve.csv").read_text().strip().splitlines()
    assert curve[0] == "step,p2d,d,b,v,p3d,n,e,total"
    # 4 samples / batch 2 = 2 steps per epoch, 2 epochs
    assert len(curve) == 1 + 4
    assert (out / "checkpoint_epoch_000.mspk").exists()
    assert (out / "checkpoint_epoch_001.mspk").exists()
    first = curve[1].split(",")
    assert first[0] == "0" and len(first) == 9


def test_train_deterministic(tmp_path):
    _, out1, last1 = _trained(tmp_path, name="r1", seed=3)
    _, out2, last2 = _trained(tmp_path, name="r2", seed=3)
    assert open(last1, "rb").read() == open(last2, "rb").read()
    assert (out1 / "loss_curve.csv").read_text() == (out2 / "loss_curve.csv").read_text()


def test_resume_is_bit_exact(tmp_path):
    cfg, out_full, last_full = _trained(tmp_path, name="full", epochs=2)
    # same run split into 1 epoch + 1 resumed epoch
    cfg2 = _tiny_config(epochs=1)
    cfg2.data_path = cfg.data_path
    out_a = tmp_path / "split"
    train(cfg2, out_a, log=None)
    cfg3 = _tiny_config(epochs=2)
    cfg3.data_path = cfg.data_path
    train(cfg3, out_a, resume=out_a / "checkpoint_last.mspk", log=None)
    a = (out_a / "checkpoint_last.mspk").read_bytes()
    b = open(last_full, "rb").read()
    # identical tensors and optimizer state; meta differs only in the
    # config's epoch count, so compare the loaded arrays
    arrs_a, meta_a = T.load_arrays(out_a / "checkpoint_last.mspk")
    arrs_b, meta_b = T.load_arrays(last_full)
    assert meta_a["step"] == meta_b["step"]
    assert sorted(arrs_a) == sorted(arrs_b)
    for k in arrs_a:
        assert np.array_equal(arrs_a[k], arrs_b[k]), k


def test_train_divergence_aborts_keeping_checkpoint(tmp_path):
    cfg, out, last = _trained(tmp_path, name="diverge", epochs=1)
    bad = _tiny_config(epochs=3, lr=1e18)
    bad.data_path = cfg.data_path
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
        train(bad, out, resume=last, log=None)
    assert os.path.exists(last)    # recovery point still on disk


def test_train_requires_data_path(tmp_path):
    cfg = _tiny_config()
    with pytest.raises(ValueError, match="data_path"):
        train(cfg, tmp_path / "x", log=None)


# -- procrustes & metrics ----------------------------------------------------

def test_procrustes_absorbs_similarity():
    rng = np.random.default_rng(4)
    for _ in range(20):
        gt = rng.normal(size=(21, 3))
        rot = Rotation.random(random_state=rng).as_matrix()
        s = rng.uniform(0.3, 3.0)
        t = rng.normal(size=3)
        pred = s * gt @ rot.T + t
        aligned = procrustes_align(pred, gt)
        assert np.abs(aligned - gt).max() < 1e-9


def test_procrustes_identity_at_truth():
    rng = np.random.default_rng(5)
    gt = rng.normal(size=(10, 3))
    diag = {}
    aligned = procrustes_align(gt, gt, diagnostics=diag)
    assert np.abs(aligned - gt).max() < 1e-12
    assert diag["scale"] == pytest.approx(1.0, abs=1e-9)
    assert np.abs(diag["rotation"] - np.eye(3)).max() < 1e-9


def test_procrustes_never_increases_error():
    rng = np.random.default_rng(6)
    for _ in range(50):
        gt = rng.normal(size=(21, 3))
        pred = gt + rng.normal(scale=rng.uniform(0.01, 1.0), size=(21, 3))
        before = ((pred - gt) ** 2).sum()
        after = ((procrustes_align(pred, gt) - gt) ** 2).sum()
        assert after <= before + 1e-9


def test_procrustes_rejects_reflection():
    rng = np.random.default_rng(7)
    gt = rng.normal(size=(12, 3))
    mirror = gt.copy()
    mirror[:, 0] *= -1.0
    diag = {}
    procrustes_align(mirror, gt, diagnostics=diag)
    assert np.linalg.det(diag["rotation"]) == pytest.approx(1.0, abs=1e-9)


def test_procrustes_degenerate_fallback():
    line = np.stack([np.linspace(0, 1, 8), np.zeros(8), np.zeros(8)], axis=1)
    diag = {}
    aligned = procrustes_align(line, line * 2.0 + 1.0, diagnostics=diag)
    assert diag["fallback"]
    assert np.abs(aligned - (line * 2.0 + 1.0)).max() < 1e-9


def test_procrustes_errors():
    with pytest.raises(ValueError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        procrustes_align(np.zeros((5, 3)), np.zeros((5, 3)))


def test_pck_auc_step_function():
    # constant 25 mm error with <=: PCK jumps at the 25 mm gridpoint
    auc = pck_auc(np.full((4, 21), 25.0))
    assert auc == pytest.approx(0.51, abs=1e-12)
    assert pck_auc(np.zeros((2, 21))) == 1.0
    assert pck_auc(np.full((2, 21), 1000.0)) == 0.0


class _FakeData:
    def __init__(self, j3d_rel, v3d_rel, root_pos):
        self.j3d_rel = j3d_rel
        self.v3d_rel = v3d_rel
        self.root_pos = root_pos

    def __len__(self):
        return len(self.j3d_rel)


def _fake_scene(s=3, j=21, n=40, seed=8):
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=0.05, size=(s, n, 3))
    reg = np.zeros((j, n))
    for k in range(j):
        reg[k, rng.integers(0, n, size=2)] = 0.5
    j3 = np.einsum("jv,svc->sjc", reg, v)
    root = np.stack([rng.normal(scale=0.02, size=s),
                     rng.normal(scale=0.02, size=s),
                     rng.uniform(0.4, 0.6, size=s)], axis=1)
    return _FakeData(j3, v, root), reg, v, j3


def test_perfect_predictions_zero_error():
    data, reg, v, j3 = _fake_scene()
    m = evaluate_predictions(v, j3 + data.root_pos[:, None],
                             v + data.root_pos[:, None], data, reg)
    assert m["PJ"] == pytest.approx(0.0, abs=1e-9)
    assert m["PV"] == pytest.approx(0.0, abs=1e-9)
    assert m["CJ"] == 0.0 and m["CV"] == 0.0
    assert m["PCK_AUC"] == 1.0


def test_z_offset_moves_cj_not_pj():
    data, reg, v, j3 = _fake_scene()
    off = np.array([0.0, 0.0, 0.010])    # +10 mm along z
    m = evaluate_predictions(v, j3 + data.root_pos[:, None] + off,
                             v + data.root_pos[:, None] + off, data, reg)
    assert m["CJ"] == pytest.approx(10.0, abs=1e-9)
    assert m["CV"] == pytest.approx(10.0, abs=1e-9)
    assert m["PJ"] < 1e-9 and m["PV"] < 1e-9


def test_export_metrics_files(tmp_path):
    m = {"PJ": 1.0, "PV": 2.0, "CJ": 3.0, "CV": 4.0, "PCK_AUC": 0.5}
    jp, cp = export_metrics(m, tmp_path / "metrics")
    loaded = json.loads(open(jp).read())
    assert sorted(loaded) == ["CJ", "CV", "PCK_AUC", "PJ", "PV"]
    lines = open(cp).read().strip().splitlines()
    assert len(lines) == 2


def test_export_obj_roundtrip(tmp_path):
    hand = toy_hand()
    p = tmp_path / "hand.obj"
    export_obj(hand.verts, hand.faces, p)
    lines = p.read_text().strip().splitlines()
    assert len(lines) == 1 + len(hand.verts) + len(hand.faces)
    mesh = parse_obj(p)
    assert np.array_equal(mesh.faces, hand.faces)
    assert np.abs(mesh.positions - hand.verts).max() <= 1e-6


# -- CLI ---------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    cfg = _tiny_config(epochs=1)
    cfg_path = tmp_path / "cfg.json"
    data_path = tmp_path / "train.mspk"
    cfg.save(cfg_path)
    rc = main(["gen-data", "--n", "4", "--seed", "0",
               "--out", str(data_path), "--config", str(cfg_path)])
    assert rc == 0
    cfg.data_path = str(data_path)
    cfg.save(cfg_path)
    out_dir = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out_dir)]) == 0
    ck = out_dir / "checkpoint_last.mspk"
    assert ck.exists()

    rc = main(["eval", "--checkpoint", str(ck), "--data", str(data_path),
               "--repeats", "1", "--out", str(tmp_path / "metrics")])
    assert rc == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert sorted(report) == ["CJ", "CV", "PCK_AUC", "PJ", "PV"]

    obj_path = tmp_path / "mesh.obj"
    rc = main(["export-mesh", "--checkpoint", str(ck),
               "--sample", f"{data_path}:1", "--out", str(obj_path)])
    assert rc == 0
    mesh = parse_obj(obj_path)
    assert mesh.num_vertices == toy_hand().num_vertices
    capsys.readouterr()


def test_cli_infer(tmp_path, capsys):
    from PIL import Image
    cfg, out, last = _trained(tmp_path, name="inf", epochs=1)
    d = load_dataset(cfg.data_path)
    img8 = (d.images[0].transpose(1, 2, 0) * 255).astype(np.uint8)
    png = tmp_path / "hand.png"
    Image.fromarray(img8).save(png)
    cam = json.dumps(cfg.camera().to_dict())
    obj_path = tmp_path / "inferred.obj"
    rc = main(["infer", "--checkpoint", str(last), "--image", str(png),
               "--cam", cam, "--out", str(obj_path)])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["root_xyz_m"]) == 3
    assert report["root_depth_m"] > 0
    assert obj_path.exists()


def test_cli_eval_repeats(tmp_path, capsys):
    cfg, out, last = _trained(tmp_path, name="rep", epochs=1)
    eval_data = tmp_path / "eval.mspk"
    gen_synthetic_dataset(2, cfg, 40, eval_data)
    rc = main(["eval", "--checkpoint", str(last), "--data", str(eval_data),
               "--repeats", "2"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "+/-" in text
    assert os.path.exists(f"{eval_data}.rep0")
    assert os.path.exists(f"{eval_data}.rep1")
