import json
import os

import numpy as np
import pytest

from planemix.errors import (CorruptBlock, MissingFile, ParseError,
                             VersionMismatch)
from planemix.geometry import PointCloud, Rectangle
from planemix.radiance import make_expert, make_teacher
from planemix.renderer import RenderConfig, bake_alpha, render_image
from planemix.scene import ProceduralExpert, Scene
from planemix.scene_io import (Checkpoint, SyntheticSpec, export_baked_bundle,
                               load_baked_bundle, load_checkpoint, load_dataset,
                               load_ground_truth, load_ply,
                               make_synthetic_scene, new_checkpoint_config,
                               oracle_render, read_checkpoint_header, save_ply,
                               save_checkpoint)
from planemix.metrics import psnr


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(num_planes=4, image_size=24, n_train=3, n_test=2, seed=2)
    manifest, gt = make_synthetic_scene(spec, str(out))
    return out, manifest, gt


def test_ply_binary_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.normal(size=(25, 3)), colors=rng.uniform(size=(25, 3)))
    path = str(tmp_path / "pts.ply")
    save_ply(path, cloud, binary=True)
    back = load_ply(path)
    assert np.allclose(back.points, cloud.points, atol=1e-6)
    assert np.allclose(back.colors, cloud.colors, atol=1 / 255)


def test_ply_ascii_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.normal(size=(10, 3)))
    path = str(tmp_path / "pts.ply")
    save_ply(path, cloud, binary=False)
    back = load_ply(path)
    assert np.allclose(back.points, cloud.points, atol=1e-6)
    assert back.colors is None


def test_ply_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_ply(str(tmp_path / "nope.ply"))
    bad = tmp_path / "bad.ply"
    bad.write_text("not a ply\n")
    with pytest.raises(ParseError):
        load_ply(str(bad))


def test_load_dataset_normalizes_to_unit_sphere(dataset_dir):
    _, manifest, _ = dataset_dir
    ds = load_dataset(manifest)
    norms = np.linalg.norm(ds.cloud.points, axis=1)
    assert norms.max() <= 1.0 + 1e-6
    assert len(ds.split("train")) == 3
    assert len(ds.split("test")) == 2
    for frame in ds.frames:
        assert frame.image.shape == (24, 24, 3)
        assert frame.image.min() >= 0.0 and frame.image.max() <= 1.0


def test_load_dataset_missing_image_names_offender(dataset_dir, tmp_path):
    out, manifest, _ = dataset_dir
    with open(manifest) as f:
        data = json.load(f)
    data["frames"][1]["image"] = "gone.png"
    broken = tmp_path / "manifest.json"
    broken.write_text(json.dumps(data))
    # Dataset paths are relative to the manifest; mirror everything else.
    for name in os.listdir(out):
        if name != "manifest.json":
            (tmp_path / name).write_bytes((out / name).read_bytes())
    with pytest.raises(MissingFile) as exc:
        load_dataset(str(broken))
    assert "frames[1]" in str(exc.value)


def test_synthetic_determinism(tmp_path):
    spec = SyntheticSpec(num_planes=3, image_size=16, n_train=2, n_test=1, seed=9)
    m1, _ = make_synthetic_scene(spec, str(tmp_path / "a"))
    m2, _ = make_synthetic_scene(spec, str(tmp_path / "b"))
    img1 = (tmp_path / "a" / "train_000.png").read_bytes()
    img2 = (tmp_path / "b" / "train_000.png").read_bytes()
    assert img1 == img2
    assert (tmp_path / "a" / "points.ply").read_bytes() == \
        (tmp_path / "b" / "points.ply").read_bytes()


def test_ground_truth_matches_renderer(dataset_dir):
    """The stored normalized ground truth reproduces the dataset images."""
    _, manifest, gt = dataset_dir
    ds = load_dataset(manifest)
    frame = ds.frames[0]
    image, _ = oracle_render(frame.camera, gt)
    assert psnr(image, frame.image) > 50  # 8-bit quantization floor


def test_ground_truth_round_trip(dataset_dir):
    out, manifest, gt = dataset_dir
    loaded = load_ground_truth(str(out / "ground_truth.json"))
    assert loaded.num_planes == gt.num_planes
    for a, b in zip(loaded.rectangles, gt.rectangles):
        assert np.allclose(a.center, b.center)
        assert a.width == pytest.approx(b.width)
    ds = load_dataset(manifest)
    img1, _ = oracle_render(ds.frames[0].camera, loaded)
    img2, _ = oracle_render(ds.frames[0].camera, gt)
    assert np.array_equal(img1, img2)


def _checkpoint(tmp_path, with_teacher=False, with_bake=False):
    rng = np.random.default_rng(3)
    rects = [Rectangle(center=rng.normal(size=3), normal=rng.normal(size=3),
                       up=rng.normal(size=3), width=0.5, height=0.7)
             for _ in range(3)]
    cfg = new_checkpoint_config()
    experts = [make_expert(L_pos=cfg["L_pos"], L_dir=cfg["L_dir"],
                           hidden=cfg["hidden"], seed=i) for i in range(3)]
    textures = None
    if with_bake:
        textures = [bake_alpha(e, r, 16, k)
                    for k, (r, e) in enumerate(zip(rects, experts))]
    ckpt = Checkpoint(stage="distill", config=new_checkpoint_config(),
                      rectangles=rects, experts=experts,
                      teacher=make_teacher(seed=5) if with_teacher else None,
                      alpha_textures=textures,
                      background=np.array([0.1, 0.2, 0.3]), near=0.01, far=9.0,
                      seed=4)
    path = str(tmp_path / "ck.bin")
    save_checkpoint(ckpt, path)
    return ckpt, path


def test_checkpoint_bit_exact_round_trip(tmp_path):
    ckpt, path = _checkpoint(tmp_path, with_teacher=True, with_bake=True)
    back = load_checkpoint(path)
    assert back.stage == "distill" and back.seed == 4
    for a, b in zip(ckpt.experts, back.experts):
        assert np.array_equal(a.get_vector(), b.get_vector())
    assert np.array_equal(ckpt.teacher.get_vector(), back.teacher.get_vector())
    for a, b in zip(ckpt.rectangles, back.rectangles):
        assert np.array_equal(a.center, b.center)  # exact float64 via JSON
        assert a.width == b.width
    rng = np.random.default_rng(6)
    pos = rng.uniform(-1, 1, size=(20, 2)).astype(np.float32)
    dirs = rng.normal(size=(20, 3)).astype(np.float32)
    for a, b in zip(ckpt.experts, back.experts):
        c1, a1 = a.forward(pos, dirs)
        c2, a2 = b.forward(pos, dirs)
        assert np.array_equal(c1, c2) and np.array_equal(a1, a2)


def test_checkpoint_header_only(tmp_path):
    _, path = _checkpoint(tmp_path)
    header = read_checkpoint_header(path)
    assert header["stage"] == "distill"
    assert len(header["rectangles"]) == 3
    assert all("length" in b for b in header["blocks"])


def test_checkpoint_corruption_detection(tmp_path):
    _, path = _checkpoint(tmp_path)
    data = open(path, "rb").read()
    truncated = str(tmp_path / "trunc.bin")
    with open(truncated, "wb") as f:
        f.write(data[:-100])
    with pytest.raises(CorruptBlock):
        load_checkpoint(truncated)
    with open(truncated, "wb") as f:
        f.write(data + b"\x00" * 8)
    with pytest.raises(CorruptBlock):
        load_checkpoint(truncated)


def test_checkpoint_version_mismatch(tmp_path):
    import struct
    _, path = _checkpoint(tmp_path)
    raw = open(path, "rb").read()
    (length,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + length])
    header["version"] = 99
    payload = json.dumps(header).encode()
    bad = str(tmp_path / "vers.bin")
    with open(bad, "wb") as f:
        f.write(raw[:4] + struct.pack("<I", len(payload)) + payload
                + raw[8 + length:])
    with pytest.raises(VersionMismatch):
        read_checkpoint_header(bad)


def test_bundle_export_and_reload(tmp_path):
    rects = [Rectangle(center=[0, 0, 0], normal=[0, 0, -1], up=[0, 1, 0],
                       width=1.0, height=1.0)]
    experts = [ProceduralExpert("checker", [0.9, 0.1, 0.1], [0.1, 0.1, 0.9],
                                alpha=1.0, checker_cells=2)]
    scene = Scene(rectangles=rects, experts=experts, background=[0, 0, 0])
    bundle = export_baked_bundle(scene, str(tmp_path), resolution=32)
    manifest = json.loads(open(bundle).read())
    assert len(manifest["planes"]) == 1
    corners = np.asarray(manifest["planes"][0]["corners"])
    assert corners.shape == (4, 3)
    assert os.path.exists(tmp_path / "plane_0000.png")
    back = load_baked_bundle(str(tmp_path))
    from planemix.renderer import PinholeCamera
    cam = PinholeCamera(rotation=np.eye(3), translation=np.array([0, 0, -2.0]),
                        fx=24, fy=24, cx=12, cy=12, width=24, height=24)
    img_b, _, _ = render_image(cam, back, RenderConfig(background=[0, 0, 0]))
    img_n, _, _ = render_image(cam, scene, RenderConfig(background=[0, 0, 0]))
    assert psnr(img_b, img_n) > 35  # 8-bit texture quantization only
