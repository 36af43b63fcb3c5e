"""Camera rays, intersection gathering, batched expert evaluation and compositing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InvalidCamera, OutOfImage, UnsortedSamples
from .geometry import Hit, Ray, Rectangle, PARALLEL_EPS
from .scene import AlphaTexture, Scene

INVALID_DEPTH = -1.0

STAGES = ("intersection", "preprocessing", "network_inference", "integration")


@dataclass
class PinholeCamera:
    rotation: np.ndarray     # 3x3 world-from-camera
    translation: np.ndarray  # camera center in world
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-8:
            raise InvalidCamera("rotation is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise InvalidCamera("image size must be >= 1x1")

    def ray_directions(self, px: np.ndarray, py: np.ndarray,
                       offset: float = 0.5) -> np.ndarray:
        """World-space unit directions through the given pixels (camera looks +z)."""
        x = (np.asarray(px, dtype=np.float64) + offset - self.cx) / self.fx
        y = (np.asarray(py, dtype=np.float64) + offset - self.cy) / self.fy
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        d = d_cam @ self.rotation.T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points -> pixel coordinates (no +0.5 pixel-center shift)."""
        p_cam = (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation
        u = p_cam[..., 0] / p_cam[..., 2] * self.fx + self.cx
        v = p_cam[..., 1] / p_cam[..., 2] * self.fy + self.cy
        return np.stack([u, v], axis=-1)


@dataclass
class RenderConfig:
    termination_epsilon: float = 1e-3
    weight_filter_threshold: float = 0.001
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    renormalize: bool = False
    max_hits_per_ray: int = 32
    tile_rays: int = 8192
    use_baked: bool = True

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if not (0 <= self.termination_epsilon < 1):
            raise ValueError("termination_epsilon must be in [0, 1)")
        if not (0 <= self.weight_filter_threshold < 1):
            raise ValueError("weight_filter_threshold must be in [0, 1)")


@dataclass
class RadianceSample:
    t: float
    color: np.ndarray
    alpha: float
    plane_index: int


def generate_ray(camera: PinholeCamera, pixel, offset=(0.5, 0.5),
                 t_near: float = 1e-4, t_far: float = 1e9) -> Ray:
    px, py = pixel
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise OutOfImage(f"pixel {pixel} outside {camera.width}x{camera.height}")
    x = (px + offset[0] - camera.cx) / camera.fx
    y = (py + offset[1] - camera.cy) / camera.fy
    d = camera.rotation @ np.array([x, y, 1.0])
    return Ray(origin=camera.translation.copy(), direction=d / np.linalg.norm(d),
               t_near=t_near, t_far=t_far)


# -- vectorized plane machinery --------------------------------------------

def plane_stack(rectangles: List[Rectangle]) -> dict:
    """Stack rectangle fields into arrays for batched intersection."""
    return {
        "center": np.stack([r.center for r in rectangles]),
        "normal": np.stack([r.normal for r in rectangles]),
        "up": np.stack([r.up for r in rectangles]),
        "right": np.stack([r.right for r in rectangles]),
        "half_w": np.array([r.width / 2.0 for r in rectangles]),
        "half_h": np.array([r.height / 2.0 for r in rectangles]),
    }


def intersect_batch(origins: np.ndarray, dirs: np.ndarray, stack: dict,
                    t_near: float, t_far: float, max_hits: int = 32):
    """All ray/rectangle hits for a batch of rays.

    Returns flat arrays (ray_idx, plane_idx, t, a_norm, b_norm) sorted by
    (ray, t, plane index) and truncated to the `max_hits` nearest per ray.
    a_norm/b_norm are local coordinates normalized to [-1, 1].
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    denom = dirs @ stack["normal"].T                      # (R, K)
    diff = stack["center"][None, :, :] - origins[:, None, :]
    numer = np.einsum("rkc,kc->rk", diff, stack["normal"])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = numer / denom
    valid = (np.abs(denom) >= PARALLEL_EPS) & (t > t_near) & (t < t_far)
    # Local coordinates of the intersection points.
    rel = origins[:, None, :] + t[..., None] * dirs[:, None, :] - stack["center"][None, :, :]
    a = np.einsum("rkc,kc->rk", rel, stack["right"])
    b = np.einsum("rkc,kc->rk", rel, stack["up"])
    valid &= (np.abs(a) <= stack["half_w"][None, :]) & (np.abs(b) <= stack["half_h"][None, :])
    ray_idx, plane_idx = np.nonzero(valid)
    t_f = t[ray_idx, plane_idx]
    order = np.lexsort((plane_idx, t_f, ray_idx))
    ray_idx, plane_idx, t_f = ray_idx[order], plane_idx[order], t_f[order]
    a_n = a[ray_idx, plane_idx] / stack["half_w"][plane_idx]
    b_n = b[ray_idx, plane_idx] / stack["half_h"][plane_idx]
    # Truncate to the nearest max_hits per ray.
    if ray_idx.size:
        starts = np.searchsorted(ray_idx, np.arange(origins.shape[0]))
        rank = np.arange(ray_idx.size) - starts[ray_idx]
        keep = rank < max_hits
        ray_idx, plane_idx = ray_idx[keep], plane_idx[keep]
        t_f, a_n, b_n = t_f[keep], a_n[keep], b_n[keep]
    return ray_idx, plane_idx, t_f, a_n, b_n


def pad_by_ray(ray_idx: np.ndarray, n_rays: int, *arrays):
    """Scatter flat per-hit arrays into dense (n_rays, max_count) slots.

    Returns (mask, slot_rows, slot_cols, padded arrays...). Padding is zero.
    """
    counts = np.bincount(ray_idx, minlength=n_rays)
    m = int(counts.max()) if counts.size else 0
    starts = np.zeros(n_rays, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    slots = np.arange(ray_idx.size) - starts[ray_idx]
    mask = np.zeros((n_rays, max(m, 1)), dtype=bool)
    mask[ray_idx, slots] = True
    padded = []
    for arr in arrays:
        out = np.zeros((n_rays, max(m, 1)) + arr.shape[1:], dtype=arr.dtype)
        out[ray_idx, slots] = arr
        padded.append(out)
    return (mask, ray_idx, slots, *padded)


def composite_padded(alpha: np.ndarray, color: np.ndarray, epsilon: float):
    """Front-to-back composition over padded (R, M) alpha and (R, M, 3) color.

    A sample is composited iff the transmittance in front of it is >= epsilon.
    Returns (color_sum, total_weight, transmittance, weights).
    """
    one_minus = 1.0 - alpha
    t_prev = np.cumprod(np.concatenate(
        [np.ones((alpha.shape[0], 1)), one_minus[:, :-1]], axis=1), axis=1)
    include = t_prev >= epsilon
    weights = t_prev * alpha * include
    color_sum = np.einsum("rm,rmc->rc", weights, color)
    total_weight = weights.sum(axis=1)
    t_full = t_prev[:, -1] * one_minus[:, -1]
    if epsilon > 0:
        excluded = ~include
        any_excl = excluded.any(axis=1)
        # t_prev is non-increasing, so the first excluded slot has the max value.
        t_stop = np.where(excluded, t_prev, -np.inf).max(axis=1)
        transmittance = np.where(any_excl, t_stop, t_full)
    else:
        transmittance = t_full
    return color_sum, total_weight, transmittance, weights


# -- spec-level scalar operations ------------------------------------------

def _check_sorted(samples: List[RadianceSample]):
    for prev, cur in zip(samples, samples[1:]):
        if cur.t < prev.t:
            raise UnsortedSamples("samples must be sorted by t")


def composite(samples: List[RadianceSample], config: RenderConfig = None):
    """Front-to-back alpha composition of one ray's sorted samples.

    Returns (color, total_weight, transmittance); callers blend the background
    as color + transmittance * background (unless renormalize is on, in which
    case color already is the weight-normalized sum).
    """
    config = config or RenderConfig()
    _check_sorted(samples)
    color = np.zeros(3)
    total_weight = 0.0
    transmittance = 1.0
    for s in samples:
        if transmittance < config.termination_epsilon:
            break
        w = transmittance * s.alpha
        color = color + w * np.asarray(s.color, dtype=np.float64)
        total_weight += w
        transmittance *= (1.0 - s.alpha)
    if config.renormalize and total_weight >= config.termination_epsilon:
        color = color / total_weight
    return color, total_weight, transmittance


def render_depth(samples: List[RadianceSample], termination_epsilon: float = 1e-3) -> float:
    """Expected depth of one ray's sorted samples; INVALID_DEPTH on low weight."""
    _check_sorted(samples)
    depth = 0.0
    total_weight = 0.0
    transmittance = 1.0
    for s in samples:
        w = transmittance * s.alpha
        depth += w * s.t
        total_weight += w
        transmittance *= (1.0 - s.alpha)
    if total_weight < termination_epsilon:
        return INVALID_DEPTH
    return depth


def gather_hits(ray: Ray, scene: Scene, max_hits_per_ray: int = 32) -> List[Hit]:
    """All scene hits along one ray, sorted ascending by (t, plane index)."""
    stack = plane_stack(scene.rectangles)
    ray_idx, plane_idx, t, a_n, b_n = intersect_batch(
        ray.origin[None], ray.direction[None], stack,
        ray.t_near, ray.t_far, max_hits_per_ray)
    hits = []
    for k, ti, an, bn in zip(plane_idx, t, a_n, b_n):
        rect = scene.rectangles[k]
        hits.append(Hit(plane_index=int(k), t=float(ti),
                        world_point=ray.at(float(ti)),
                        local=(float(an) * rect.width / 2.0,
                               float(bn) * rect.height / 2.0)))
    return hits


# -- baked alpha textures ---------------------------------------------------

def bake_alpha(expert, rect: Rectangle, resolution: int = 200,
               plane_index: int = 0) -> AlphaTexture:
    """Evaluate the expert's view-independent alpha on a cell-center grid."""
    if resolution < 2:
        raise ValueError("bake resolution must be >= 2")
    centers = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    aa, bb = np.meshgrid(centers, centers)  # rows index b, cols index a
    grid = np.stack([aa.ravel(), bb.ravel()], axis=1)
    dirs = np.tile(np.array([0.0, 0.0, 1.0]), (grid.shape[0], 1))
    _, alpha = expert.forward(grid, dirs)
    return AlphaTexture(plane_index=plane_index,
                        values=np.asarray(alpha, dtype=np.float64).reshape(resolution, resolution))


def sample_baked_alpha(texture: AlphaTexture, local_norm: np.ndarray) -> np.ndarray:
    """Bilinear lookup at normalized [-1, 1]^2 coordinates, clamping at borders."""
    local_norm = np.atleast_2d(np.asarray(local_norm, dtype=np.float64))
    rows, cols = texture.values.shape
    u = (local_norm[:, 0] + 1.0) / 2.0 * cols - 0.5
    v = (local_norm[:, 1] + 1.0) / 2.0 * rows - 0.5
    u = np.clip(u, 0.0, cols - 1.0)
    v = np.clip(v, 0.0, rows - 1.0)
    u0 = np.floor(u).astype(int).clip(0, cols - 2)
    v0 = np.floor(v).astype(int).clip(0, rows - 2)
    fu = u - u0
    fv = v - v0
    vals = texture.values
    out = ((1 - fv) * ((1 - fu) * vals[v0, u0] + fu * vals[v0, u0 + 1])
           + fv * ((1 - fu) * vals[v0 + 1, u0] + fu * vals[v0 + 1, u0 + 1]))
    return out


# -- batched evaluation and full-frame rendering ----------------------------

def _grouped_expert_eval(scene: Scene, plane_idx, a_n, b_n, dirs, eval_mask,
                         want_alpha: bool):
    """Evaluate expert networks grouped per plane over the masked samples."""
    n = plane_idx.size
    colors = np.zeros((n, 3))
    alphas = np.zeros(n)
    sel = np.nonzero(eval_mask)[0]
    if sel.size == 0:
        return colors, alphas, 0
    order = sel[np.argsort(plane_idx[sel], kind="stable")]
    planes = plane_idx[order]
    bounds = np.nonzero(np.diff(planes))[0] + 1
    for chunk in np.split(order, bounds):
        k = int(plane_idx[chunk[0]])
        local = np.stack([a_n[chunk], b_n[chunk]], axis=1)
        c, al = scene.experts[k].forward(local, dirs[chunk])
        colors[chunk] = c
        alphas[chunk] = al
    return colors, alphas, int(sel.size)


def evaluate_hits(ray_idx, plane_idx, t, a_n, b_n, ray_dirs, scene: Scene,
                  config: RenderConfig):
    """Turn flat sorted hits into padded radiance samples.

    With baked alpha textures present (and config.use_baked), samples whose
    estimated blending weight from the baked alphas falls below the filter
    threshold (or that lie past the termination point) skip network evaluation;
    survivors keep the baked alpha and the network color.

    Returns (mask, alpha_pad, color_pad, t_pad, n_evaluated, n_candidates,
    prep_seconds, net_seconds).
    """
    n_rays = ray_dirs.shape[0]
    baked = scene.alpha_textures if (config.use_baked and scene.alpha_textures) else None
    dirs_flat = ray_dirs[ray_idx]
    t0 = time.perf_counter()
    if baked is not None:
        alpha_est = np.zeros(ray_idx.size)
        if ray_idx.size:
            order = np.argsort(plane_idx, kind="stable")
            planes = plane_idx[order]
            bounds = np.nonzero(np.diff(planes))[0] + 1
            for chunk in np.split(order, bounds):
                k = int(plane_idx[chunk[0]])
                alpha_est[chunk] = sample_baked_alpha(
                    baked[k], np.stack([a_n[chunk], b_n[chunk]], axis=1))
        mask, rr, ss, alpha_pad, t_pad = pad_by_ray(
            ray_idx, n_rays, alpha_est, t)
        _, _, _, weights = composite_padded(
            alpha_pad, np.zeros(alpha_pad.shape + (3,)), config.termination_epsilon)
        w_flat = weights[rr, ss]
        eval_mask = w_flat >= config.weight_filter_threshold
        t1 = time.perf_counter()
        colors, _, n_eval = _grouped_expert_eval(
            scene, plane_idx, a_n, b_n, dirs_flat, eval_mask, want_alpha=False)
        t2 = time.perf_counter()
        color_pad = np.zeros(alpha_pad.shape + (3,))
        color_pad[rr, ss] = colors
        return (mask, alpha_pad, color_pad, t_pad, n_eval, int(ray_idx.size),
                t1 - t0, t2 - t1)
    mask, rr, ss, t_pad = pad_by_ray(ray_idx, n_rays, t)
    eval_mask = np.ones(ray_idx.size, dtype=bool)
    t1 = time.perf_counter()
    colors, alphas, n_eval = _grouped_expert_eval(
        scene, plane_idx, a_n, b_n, dirs_flat, eval_mask, want_alpha=True)
    t2 = time.perf_counter()
    alpha_pad = np.zeros(mask.shape)
    alpha_pad[rr, ss] = alphas
    color_pad = np.zeros(mask.shape + (3,))
    color_pad[rr, ss] = colors
    return (mask, alpha_pad, color_pad, t_pad, n_eval, int(ray_idx.size),
            t1 - t0, t2 - t1)


def render_rays(origins, dirs, scene: Scene, config: RenderConfig):
    """Render a flat batch of rays; returns (colors, depths, stats dict)."""
    stats = {stage: 0.0 for stage in STAGES}
    t0 = time.perf_counter()
    stack = plane_stack(scene.rectangles)
    ray_idx, plane_idx, t, a_n, b_n = intersect_batch(
        origins, dirs, stack, scene.t_near, scene.t_far, config.max_hits_per_ray)
    t1 = time.perf_counter()
    mask, alpha_pad, color_pad, t_pad, n_eval, n_cand, prep_s, net_s = evaluate_hits(
        ray_idx, plane_idx, t, a_n, b_n, np.atleast_2d(dirs), scene, config)
    t2 = time.perf_counter()
    color_sum, total_weight, transmittance, weights = composite_padded(
        alpha_pad, color_pad, config.termination_epsilon)
    if config.renormalize:
        safe = total_weight >= config.termination_epsilon
        pixel = np.where(safe[:, None],
                         color_sum / np.maximum(total_weight, 1e-12)[:, None],
                         color_sum + transmittance[:, None] * config.background[None, :])
    else:
        pixel = color_sum + transmittance[:, None] * config.background[None, :]
    depth = np.einsum("rm,rm->r", weights, t_pad)
    depth = np.where(total_weight < config.termination_epsilon, INVALID_DEPTH, depth)
    t3 = time.perf_counter()
    stats["intersection"] += t1 - t0
    stats["preprocessing"] += prep_s
    stats["network_inference"] += net_s
    stats["integration"] += t3 - t2
    stats["evaluations"] = n_eval
    stats["candidates"] = n_cand
    return pixel, depth, stats


def render_image(camera: PinholeCamera, scene: Scene, config: RenderConfig = None):
    """Full-frame render; returns (color (H,W,3), depth (H,W), stats)."""
    config = config or RenderConfig()
    W, H = camera.width, camera.height
    px, py = np.meshgrid(np.arange(W), np.arange(H))
    dirs = camera.ray_directions(px.ravel(), py.ravel())
    origins = np.broadcast_to(camera.translation, dirs.shape)
    stats = {stage: 0.0 for stage in STAGES}
    stats.update(rays=H * W, evaluations=0, candidates=0)
    colors = np.zeros((H * W, 3))
    depths = np.zeros(H * W)
    for start in range(0, H * W, config.tile_rays):
        end = min(start + config.tile_rays, H * W)
        c, d, s = render_rays(origins[start:end], dirs[start:end], scene, config)
        colors[start:end] = c
        depths[start:end] = d
        for stage in STAGES:
            stats[stage] += s[stage]
        stats["evaluations"] += s["evaluations"]
        stats["candidates"] += s["candidates"]
    stats["skipped_fraction"] = (
        1.0 - stats["evaluations"] / stats["candidates"] if stats["candidates"] else 0.0)
    return colors.reshape(H, W, 3), depths.reshape(H, W), stats
