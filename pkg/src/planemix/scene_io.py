"""Dataset ingestion, synthetic scene generation, checkpoints and baked bundles."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from .errors import (CorruptBlock, InvalidCamera, MissingFile, ParseError,
                     VersionMismatch)
from .geometry import PointCloud, Rectangle
from .radiance import RadianceMLP, make_expert, make_teacher
from .renderer import PinholeCamera, bake_alpha
from .scene import AlphaTexture, ProceduralExpert, Scene

CHECKPOINT_MAGIC = b"PMIX"
CHECKPOINT_VERSION = 1
MANIFEST_VERSION = 1


# -- PLY ---------------------------------------------------------------------

def load_ply(path: str) -> PointCloud:
    """Read an ASCII or binary little-endian PLY point cloud."""
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise ParseError(f"{path}: not a PLY file")
        fmt = None
        n_vertex = 0
        props: List[Tuple[str, str]] = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise ParseError(f"{path}: unterminated header")
            tokens = line.strip().decode("ascii", "replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                props.append((tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ParseError(f"{path}: unsupported format {fmt}")
        names = [name for _, name in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise ParseError(f"{path}: missing vertex property {axis}")
        np_types = {"float": "f4", "float32": "f4", "double": "f8",
                    "uchar": "u1", "uint8": "u1", "int": "i4", "uint": "u4",
                    "short": "i2", "ushort": "u2", "char": "i1"}
        if fmt == "ascii":
            rows = []
            for _ in range(n_vertex):
                rows.append(f.readline().split())
            arr = np.array(rows, dtype=np.float64)
            data = {name: arr[:, i] for i, (_, name) in enumerate(props)}
        else:
            dtype = np.dtype([(name, "<" + np_types[t]) for t, name in props])
            raw = f.read(dtype.itemsize * n_vertex)
            if len(raw) != dtype.itemsize * n_vertex:
                raise ParseError(f"{path}: truncated vertex data")
            rec = np.frombuffer(raw, dtype=dtype)
            data = {name: rec[name].astype(np.float64) for _, name in props}
    points = np.stack([data["x"], data["y"], data["z"]], axis=1)
    colors = None
    if all(c in data for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1)
        if colors.max() > 1.0:
            colors = colors / 255.0
    return PointCloud(points=points, colors=colors)


def save_ply(path: str, cloud: PointCloud, binary: bool = True):
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        pts = cloud.points.astype("<f4")
        cols = (np.clip(cloud.colors, 0, 1) * 255).astype(np.uint8) \
            if cloud.colors is not None else None
        if binary:
            if cols is None:
                f.write(pts.tobytes())
            else:
                for p, c in zip(pts, cols):
                    f.write(p.tobytes() + c.tobytes())
        else:
            for i in range(len(cloud)):
                row = " ".join(f"{v:.9g}" for v in pts[i])
                if cols is not None:
                    row += " " + " ".join(str(int(v)) for v in cols[i])
                f.write((row + "\n").encode("ascii"))


# -- images ------------------------------------------------------------------

def save_png(path: str, image: np.ndarray):
    """Save a [0, 1] float image as 8-bit RGB (or grayscale if 2D)."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_png(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise MissingFile(path)
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def save_depth(path_png: str, depth: np.ndarray, t_far: float):
    """16-bit grayscale depth normalized by t_far, plus a raw float32 sidecar.

    Sidecar layout (little-endian): magic b'PMDP', uint32 width, uint32 height,
    float32 t_far, then height*width float32 depths in row-major order.
    Invalid depths are negative.
    """
    depth = np.asarray(depth, dtype=np.float64)
    norm = np.clip(depth / t_far, 0.0, 1.0)
    norm[depth < 0] = 0.0
    Image.fromarray((norm * 65535.0 + 0.5).astype(np.uint16)).save(path_png)
    sidecar = os.path.splitext(path_png)[0] + ".bin"
    with open(sidecar, "wb") as f:
        f.write(b"PMDP")
        f.write(struct.pack("<IIf", depth.shape[1], depth.shape[0], t_far))
        f.write(depth.astype("<f4").tobytes())


# -- dataset -----------------------------------------------------------------

@dataclass
class Frame:
    image: np.ndarray
    camera: PinholeCamera
    split: str
    path: str = ""


@dataclass
class Dataset:
    frames: List[Frame]
    cloud: PointCloud
    background: np.ndarray
    near: float
    far: float
    normalization: dict = field(default_factory=lambda: {"scale": 1.0, "offset": [0, 0, 0]})

    def split(self, name: str) -> List[Frame]:
        return [f for f in self.frames if f.split == name]


def _camera_from_manifest(entry: dict, name: str) -> PinholeCamera:
    try:
        c2w = np.asarray(entry["c2w"], dtype=np.float64).reshape(4, 4)
        cam = PinholeCamera(rotation=c2w[:3, :3], translation=c2w[:3, 3],
                            fx=entry["fx"], fy=entry["fy"],
                            cx=entry["cx"], cy=entry["cy"],
                            width=int(entry["width"]), height=int(entry["height"]))
    except InvalidCamera as exc:
        raise InvalidCamera(f"{name}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{name}: bad camera entry ({exc})") from exc
    return cam


def load_dataset(manifest_path: str) -> Dataset:
    """Load a dataset manifest; applies unit-sphere normalization to cameras and cloud."""
    if not os.path.exists(manifest_path):
        raise MissingFile(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc
    norm = manifest.get("normalization", {"scale": 1.0, "offset": [0, 0, 0]})
    scale = float(norm["scale"])
    offset = np.asarray(norm["offset"], dtype=np.float64)
    if scale <= 0:
        raise ParseError(f"{manifest_path}: normalization scale must be > 0")
    cloud_path = os.path.join(root, manifest["point_cloud"])
    cloud = load_ply(cloud_path)
    cloud = PointCloud((cloud.points - offset) * scale, cloud.colors)
    frames = []
    for i, entry in enumerate(manifest["frames"]):
        name = f"frames[{i}]"
        img_path = os.path.join(root, entry["image"])
        if not os.path.exists(img_path):
            raise MissingFile(f"{name}: {img_path}")
        image = load_png(img_path)
        cam = _camera_from_manifest(entry["camera"], name)
        cam = PinholeCamera(rotation=cam.rotation,
                            translation=(cam.translation - offset) * scale,
                            fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                            width=cam.width, height=cam.height)
        frames.append(Frame(image=image, camera=cam,
                            split=entry.get("split", "train"), path=img_path))
    return Dataset(frames=frames, cloud=cloud,
                   background=np.asarray(manifest.get("background", [0, 0, 0]),
                                         dtype=np.float64),
                   near=float(manifest.get("near", 1e-3)) * scale,
                   far=float(manifest.get("far", 100.0)) * scale,
                   normalization={"scale": scale, "offset": offset.tolist()})


# -- synthetic scenes and the oracle renderer -------------------------------

@dataclass
class SyntheticSpec:
    num_planes: int = 10
    texture_kind: str = "mixed"   # constant | gradient | checker | mixed
    seed: int = 0
    image_size: int = 64
    n_train: int = 20
    n_test: int = 8
    points_per_plane: int = 1000
    opaque: bool = True
    background: tuple = (0.05, 0.05, 0.08)


def _random_rectangles(rng: np.random.Generator, num: int):
    rects = []
    for _ in range(num):
        center = rng.uniform(-0.45, 0.45, size=3)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        u = rng.normal(size=3)
        rects.append(Rectangle(center=center, normal=n, up=u,
                               width=rng.uniform(0.35, 0.6),
                               height=rng.uniform(0.35, 0.6)))
    return rects


def _procedural_experts(rng: np.random.Generator, num: int, kind: str, opaque: bool):
    kinds = ProceduralExpert.KINDS if kind == "mixed" else (kind,)
    experts = []
    for i in range(num):
        k = kinds[i % len(kinds)]
        alpha = 1.0 if opaque else float(rng.uniform(0.6, 1.0))
        experts.append(ProceduralExpert(
            k, color_a=rng.uniform(0.1, 0.9, size=3),
            color_b=rng.uniform(0.1, 0.9, size=3), alpha=alpha,
            checker_cells=int(rng.integers(2, 5))))
    return experts


def _look_at_camera(position, target, size: int, focal: float) -> PinholeCamera:
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    world_up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(forward, world_up)) > 0.98:
        world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, world_up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)  # camera looks +z
    return PinholeCamera(rotation=rotation, translation=position,
                         fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0,
                         width=size, height=size)


def _pose_ring(rng, n: int, radius_range, elev_range, size, focal):
    cams = []
    for _ in range(n):
        az = rng.uniform(0, 2 * np.pi)
        el = rng.uniform(*elev_range)
        r = rng.uniform(*radius_range)
        pos = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(_look_at_camera(pos, np.zeros(3), size, focal))
    return cams


def oracle_render(camera: PinholeCamera, scene: Scene) -> Tuple[np.ndarray, np.ndarray]:
    """Exact reference render of a procedural ground-truth scene.

    Independent of the main rendering path: direct per-plane intersection
    formulas and a literal front-to-back recurrence with no early termination.
    """
    W, H = camera.width, camera.height
    px, py = np.meshgrid(np.arange(W), np.arange(H))
    dirs = camera.ray_directions(px.ravel(), py.ravel())
    o = camera.translation
    n_px = dirs.shape[0]
    K = scene.num_planes
    t_all = np.full((n_px, K), np.inf)
    colors_all = np.zeros((n_px, K, 3))
    alphas_all = np.zeros((n_px, K))
    for k, rect in enumerate(scene.rectangles):
        denom = dirs @ rect.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.dot(rect.center - o, rect.normal) / denom
        pts = o[None, :] + t[:, None] * dirs
        a = (pts - rect.center) @ rect.right
        b = (pts - rect.center) @ rect.up
        ok = ((np.abs(denom) >= 1e-8) & (t > scene.t_near) & (t < scene.t_far)
              & (np.abs(a) <= rect.width / 2) & (np.abs(b) <= rect.height / 2))
        local = np.stack([a / (rect.width / 2), b / (rect.height / 2)], axis=1)
        c, al = scene.experts[k].forward(local[ok], dirs[ok])
        t_all[ok, k] = t[ok]
        colors_all[ok, k] = c
        alphas_all[ok, k] = al
    order = np.argsort(t_all, axis=1, kind="stable")
    t_sorted = np.take_along_axis(t_all, order, axis=1)
    a_sorted = np.take_along_axis(alphas_all, order, axis=1)
    c_sorted = np.take_along_axis(colors_all, order[:, :, None], axis=1)
    pixel = np.zeros((n_px, 3))
    depth = np.zeros(n_px)
    weight_sum = np.zeros(n_px)
    trans = np.ones(n_px)
    for j in range(K):
        w = trans * a_sorted[:, j]
        finite = np.isfinite(t_sorted[:, j])
        w = np.where(finite, w, 0.0)
        pixel += w[:, None] * c_sorted[:, j]
        depth += w * np.where(finite, t_sorted[:, j], 0.0)
        weight_sum += w
        trans *= np.where(finite, 1.0 - a_sorted[:, j], 1.0)
    pixel += trans[:, None] * scene.background[None, :]
    depth = np.where(weight_sum < 1e-3, -1.0, depth)
    return pixel.reshape(H, W, 3), depth.reshape(H, W)


def make_synthetic_scene(spec: SyntheticSpec, out_dir: str) -> Tuple[str, Scene]:
    """Generate a posed synthetic dataset on disk plus its ground-truth scene.

    Train cameras cover a narrow pose range; test cameras a wider one. Returns
    (manifest path, ground-truth Scene in the normalized coordinates a
    subsequent load_dataset call will produce).
    """
    rng = np.random.default_rng(spec.seed)
    rects = _random_rectangles(rng, spec.num_planes)
    experts = _procedural_experts(rng, spec.num_planes, spec.texture_kind, spec.opaque)
    # Surface-sampled point cloud defines the normalization.
    pts = []
    for rect in rects:
        ab = rng.uniform(-1, 1, size=(spec.points_per_plane, 2))
        pts.append(rect.center[None, :]
                   + ab[:, 0:1] * (rect.width / 2) * rect.right[None, :]
                   + ab[:, 1:2] * (rect.height / 2) * rect.up[None, :])
    cloud_pts = np.concatenate(pts)
    offset = (cloud_pts.min(axis=0) + cloud_pts.max(axis=0)) / 2.0
    scale = 1.0 / float(np.max(np.linalg.norm(cloud_pts - offset, axis=1)))
    near, far = 0.05, 20.0
    scene = Scene(rectangles=rects, experts=experts,
                  background=np.asarray(spec.background), t_near=near, t_far=far)

    size = spec.image_size
    focal = 1.1 * size
    train_cams = _pose_ring(rng, spec.n_train, (1.6, 2.2), (0.0, 0.7), size, focal)
    test_cams = _pose_ring(rng, spec.n_test, (1.5, 2.4), (-0.1, 0.8), size, focal)

    os.makedirs(out_dir, exist_ok=True)
    frames = []
    for i, (cam, split) in enumerate(
            [(c, "train") for c in train_cams] + [(c, "test") for c in test_cams]):
        image, _ = oracle_render(cam, scene)
        name = f"{split}_{i:03d}.png"
        save_png(os.path.join(out_dir, name), image)
        c2w = np.eye(4)
        c2w[:3, :3] = cam.rotation
        c2w[:3, 3] = cam.translation
        frames.append({"image": name, "split": split,
                       "camera": {"c2w": c2w.tolist(), "fx": cam.fx, "fy": cam.fy,
                                  "cx": cam.cx, "cy": cam.cy,
                                  "width": cam.width, "height": cam.height}})
    save_ply(os.path.join(out_dir, "points.ply"), PointCloud(cloud_pts))
    manifest = {
        "version": MANIFEST_VERSION,
        "point_cloud": "points.ply",
        "background": list(spec.background),
        "near": near, "far": far,
        "normalization": {"scale": scale, "offset": offset.tolist()},
        "frames": frames,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1)
    # Ground truth in normalized coordinates, for oracle-vs-pipeline checks.
    norm_rects = [Rectangle(center=(r.center - offset) * scale, normal=r.normal,
                            up=r.up, width=r.width * scale, height=r.height * scale)
                  for r in rects]
    gt_scene = Scene(rectangles=norm_rects, experts=experts,
                     background=np.asarray(spec.background),
                     t_near=near * scale, t_far=far * scale)
    with open(os.path.join(out_dir, "ground_truth.json"), "w") as f:
        json.dump({
            "background": list(spec.background),
            "near": near * scale, "far": far * scale,
            "rectangles": [_rect_to_json(r) for r in norm_rects],
            "experts": [e.to_config() for e in experts],
        }, f, indent=1)
    return manifest_path, gt_scene


def load_ground_truth(path: str) -> Scene:
    with open(path) as f:
        data = json.load(f)
    rects = [_rect_from_json(r) for r in data["rectangles"]]
    experts = [ProceduralExpert.from_config(c) for c in data["experts"]]
    return Scene(rectangles=rects, experts=experts,
                 background=np.asarray(data["background"]),
                 t_near=data["near"], t_far=data["far"])


def make_rect_cloud(num_rects: int, points_per_rect: int = 200, seed: int = 0,
                    normalize: bool = True):
    """Point cloud sampled from random rectangles, optionally unit-sphere normalized.

    Returns (cloud, rectangles in the same coordinates).
    """
    rng = np.random.default_rng(seed)
    rects = _random_rectangles(rng, num_rects)
    pts = []
    for rect in rects:
        ab = rng.uniform(-1, 1, size=(points_per_rect, 2))
        pts.append(rect.center[None, :]
                   + ab[:, 0:1] * (rect.width / 2) * rect.right[None, :]
                   + ab[:, 1:2] * (rect.height / 2) * rect.up[None, :])
    pts = np.concatenate(pts)
    if normalize:
        offset = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
        scale = 1.0 / float(np.max(np.linalg.norm(pts - offset, axis=1)))
        pts = (pts - offset) * scale
        rects = [Rectangle(center=(r.center - offset) * scale, normal=r.normal,
                           up=r.up, width=r.width * scale, height=r.height * scale)
                 for r in rects]
    return PointCloud(pts), rects


# -- checkpoints -------------------------------------------------------------

def _rect_to_json(rect: Rectangle) -> dict:
    return {"center": rect.center.tolist(), "normal": rect.normal.tolist(),
            "up": rect.up.tolist(), "width": rect.width, "height": rect.height}


def _rect_from_json(d: dict) -> Rectangle:
    return Rectangle(center=d["center"], normal=d["normal"], up=d["up"],
                     width=d["width"], height=d["height"])


@dataclass
class Checkpoint:
    stage: str
    config: dict
    rectangles: List[Rectangle]
    experts: List[RadianceMLP]
    teacher: Optional[RadianceMLP] = None
    alpha_textures: Optional[List[AlphaTexture]] = None
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 1e-3
    far: float = 100.0
    seed: int = 0

    def to_scene(self, use_baked: bool = True) -> Scene:
        return Scene(rectangles=self.rectangles, experts=self.experts,
                     background=self.background,
                     alpha_textures=self.alpha_textures if use_baked else None,
                     t_near=self.near, t_far=self.far)


def save_checkpoint(ckpt: Checkpoint, path: str):
    """Atomic write: JSON header plus raw little-endian float32 blocks."""
    blocks = []
    for i, e in enumerate(ckpt.experts):
        blocks.append((f"expert_{i:04d}", e.get_vector().astype("<f4")))
    if ckpt.teacher is not None:
        blocks.append(("teacher", ckpt.teacher.get_vector().astype("<f4")))
    if ckpt.alpha_textures is not None:
        for i, tex in enumerate(ckpt.alpha_textures):
            blocks.append((f"alpha_{i:04d}", tex.values.astype("<f4").ravel()))
    header = {
        "version": CHECKPOINT_VERSION,
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "background": ckpt.background.tolist(),
        "near": ckpt.near, "far": ckpt.far,
        "rectangles": [_rect_to_json(r) for r in ckpt.rectangles],
        "blocks": [{"name": name, "length": int(arr.size)} for name, arr in blocks],
    }
    if ckpt.alpha_textures is not None:
        header["texture_shape"] = list(ckpt.alpha_textures[0].values.shape)
    payload = json.dumps(header).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for _, arr in blocks:
            f.write(arr.tobytes())
    os.replace(tmp, path)


def read_checkpoint_header(path: str) -> dict:
    """Header-only inspection: no parameter blocks read."""
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ParseError(f"{path}: bad magic")
        (length,) = struct.unpack("<I", f.read(4))
        try:
            header = json.loads(f.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ParseError(f"{path}: bad header ({exc})") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: version {header.get('version')}")
    return header


def load_checkpoint(path: str) -> Checkpoint:
    header = read_checkpoint_header(path)
    cfg = header["config"]
    with open(path, "rb") as f:
        f.seek(4)
        (length,) = struct.unpack("<I", f.read(4))
        f.seek(8 + length)
        data = {}
        for block in header["blocks"]:
            raw = f.read(4 * block["length"])
            if len(raw) != 4 * block["length"]:
                raise CorruptBlock(f"{path}: block {block['name']} truncated")
            data[block["name"]] = np.frombuffer(raw, dtype="<f4")
        if f.read(1):
            raise CorruptBlock(f"{path}: trailing bytes after declared blocks")
    rects = [_rect_from_json(r) for r in header["rectangles"]]
    experts = []
    for i in range(len(rects)):
        e = make_expert(L_pos=cfg["L_pos"], L_dir=cfg["L_dir"], hidden=cfg["hidden"])
        vec = data[f"expert_{i:04d}"]
        if vec.size != e.param_count():
            raise CorruptBlock(f"{path}: expert_{i:04d} has {vec.size} params, "
                               f"expected {e.param_count()}")
        e.set_vector(vec)
        experts.append(e)
    teacher = None
    if "teacher" in data:
        tcfg = cfg.get("teacher", {})
        teacher = make_teacher(L_pos=tcfg.get("L_pos", 8), L_dir=tcfg.get("L_dir", 4),
                               hidden=tcfg.get("hidden", 128))
        if data["teacher"].size != teacher.param_count():
            raise CorruptBlock(f"{path}: teacher block size mismatch")
        teacher.set_vector(data["teacher"])
    textures = None
    if "texture_shape" in header:
        shape = tuple(header["texture_shape"])
        textures = [AlphaTexture(plane_index=i,
                                 values=data[f"alpha_{i:04d}"].astype(np.float64).reshape(shape))
                    for i in range(len(rects))]
    return Checkpoint(stage=header["stage"], config=cfg, rectangles=rects,
                      experts=experts, teacher=teacher, alpha_textures=textures,
                      background=np.asarray(header["background"]),
                      near=header["near"], far=header["far"], seed=header["seed"])


def new_checkpoint_config(hidden: int = 32, L_pos: int = 3, L_dir: int = 4,
                          teacher_hidden: int = 128) -> dict:
    return {"hidden": hidden, "L_pos": L_pos, "L_dir": L_dir,
            "teacher": {"hidden": teacher_hidden, "L_pos": 8, "L_dir": 4}}


# -- baked bundle ------------------------------------------------------------

class BakedPlaneExpert:
    """Radiance source backed by a baked RGBA texture (bilinear, clamp-to-edge)."""

    def __init__(self, rgba: np.ndarray):
        self.rgba = np.asarray(rgba, dtype=np.float64)  # (rows, cols, 4)

    def forward(self, pos, dirs=None, cache=None):
        pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
        rows, cols = self.rgba.shape[:2]
        u = np.clip((pos[:, 0] + 1) / 2 * cols - 0.5, 0, cols - 1.0)
        v = np.clip((pos[:, 1] + 1) / 2 * rows - 0.5, 0, rows - 1.0)
        u0 = np.floor(u).astype(int).clip(0, cols - 2)
        v0 = np.floor(v).astype(int).clip(0, rows - 2)
        fu = (u - u0)[:, None]
        fv = (v - v0)[:, None]
        tex = self.rgba
        val = ((1 - fv) * ((1 - fu) * tex[v0, u0] + fu * tex[v0, u0 + 1])
               + fv * ((1 - fu) * tex[v0 + 1, u0] + fu * tex[v0 + 1, u0 + 1]))
        return val[:, :3], val[:, 3]


def export_baked_bundle(scene: Scene, out_dir: str, resolution: int = 200,
                        reference_direction=(0.0, 0.0, -1.0),
                        raw_textures: bool = False) -> str:
    """Write per-plane RGBA textures (non-premultiplied) plus a geometry manifest."""
    if resolution < 2:
        raise ValueError("bundle resolution must be >= 2")
    os.makedirs(out_dir, exist_ok=True)
    ref = np.asarray(reference_direction, dtype=np.float64)
    ref = ref / np.linalg.norm(ref)
    centers = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    aa, bb = np.meshgrid(centers, centers)
    grid = np.stack([aa.ravel(), bb.ravel()], axis=1)
    dirs = np.tile(ref, (grid.shape[0], 1))
    planes = []
    for k, (rect, expert) in enumerate(zip(scene.rectangles, scene.experts)):
        color, _ = expert.forward(grid, dirs)
        if scene.alpha_textures is not None and scene.alpha_textures[k].values.shape == (resolution, resolution):
            alpha = scene.alpha_textures[k].values.ravel()
        else:
            alpha = bake_alpha(expert, rect, resolution, k).values.ravel()
        rgba = np.concatenate([np.asarray(color, dtype=np.float64),
                               alpha[:, None]], axis=1).reshape(resolution, resolution, 4)
        name = f"plane_{k:04d}.png"
        arr = (np.clip(rgba, 0, 1) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(arr, mode="RGBA").save(os.path.join(out_dir, name))
        if raw_textures:
            arr.astype("<u1").tofile(os.path.join(out_dir, f"plane_{k:04d}.bin"))
        planes.append({
            "texture": name,
            "resolution": resolution,
            "corners": rect.corners().tolist(),
            "center": rect.center.tolist(),
            "normal": rect.normal.tolist(),
            "up": rect.up.tolist(),
            "width": rect.width,
            "height": rect.height,
        })
    manifest = {
        "background": scene.background.tolist(),
        "reference_direction": ref.tolist(),
        "planes": planes,
    }
    path = os.path.join(out_dir, "bundle.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1)
    return path


def load_baked_bundle(bundle_dir: str) -> Scene:
    """Reconstruct a renderable scene from an exported bundle directory."""
    path = os.path.join(bundle_dir, "bundle.json")
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path) as f:
        manifest = json.load(f)
    rects, experts = [], []
    for entry in manifest["planes"]:
        rects.append(Rectangle(center=entry["center"], normal=entry["normal"],
                               up=entry["up"], width=entry["width"],
                               height=entry["height"]))
        img = Image.open(os.path.join(bundle_dir, entry["texture"]))
        experts.append(BakedPlaneExpert(np.asarray(img, dtype=np.float64) / 255.0))
    return Scene(rectangles=rects, experts=experts,
                 background=np.asarray(manifest["background"]))
