"""Plane fitting, teacher training, distillation and photometric fine-tuning."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import EmptyDataset, EmptyInput, ShapeMismatch
from .geometry import PlaneInitConfig, PointCloud, Rectangle, init_planes
from .radiance import RadianceMLP, make_teacher
from .renderer import intersect_batch, pad_by_ray, plane_stack, sample_baked_alpha


# -- optimizer ---------------------------------------------------------------

class Adam:
    """Adam over a dict of parameter arrays; state buffers match shapes."""

    def __init__(self, params: dict, lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / b1t
            v_hat = self.v[k] / b2t
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * params[k]
            params[k] = params[k] - update.astype(params[k].dtype)


# -- configuration -----------------------------------------------------------

@dataclass
class GeometricLossConfig:
    lambda_area: float = 1e-4
    iterations: int = 200
    learning_rate: float = 5e-3
    lr_decay: bool = True          # cosine decay over the iteration budget
    polish_rounds: int = 12        # assignment/PCA refinement after descent
    restarts: int = 1              # reseeded attempts; the best run wins
    restart_rmse: float = 1e-6     # stop restarting once RMSE drops below this


@dataclass
class TrainSchedule:
    teacher_epochs: int = 20
    distill_epochs: int = 300
    finetune_epochs: int = 20
    batch_rays: int = 8192
    distill_batch: int = 512
    cloud_batch: int = 4096
    learning_rate: float = 5e-4
    lr_decay: bool = True          # cosine decay during photometric finetuning
    seed: int = 0


class TrainLog:
    """Newline-delimited JSON training log."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records = []
        self._t0 = time.perf_counter()

    def record(self, **fields):
        fields["wall_time"] = time.perf_counter() - self._t0
        self.records.append(fields)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(fields) + "\n")


# -- plane parameterization --------------------------------------------------

def planes_to_params(planes: List[Rectangle]) -> dict:
    """Optimizable view of the planes; rotation as a zero axis-angle increment."""
    return {
        "center": np.stack([p.center for p in planes]),
        "omega": np.zeros((len(planes), 3)),
        "log_w": np.log([p.width for p in planes]),
        "log_h": np.log([p.height for p in planes]),
    }


def _rotate(v: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of (K, 3) vectors by per-row axis-angle (K, 3)."""
    theta = np.linalg.norm(omega, axis=1, keepdims=True)
    small = theta[:, 0] < 1e-12
    axis = np.where(small[:, None], 0.0, omega / np.maximum(theta, 1e-300))
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    cross = np.cross(axis, v)
    dot = np.sum(axis * v, axis=1, keepdims=True)
    out = v * cos_t + cross * sin_t + axis * dot * (1.0 - cos_t)
    return np.where(small[:, None], v, out)


def params_to_planes(params: dict, planes_ref: List[Rectangle]) -> List[Rectangle]:
    """Apply the parameter state to fresh rectangles (frames re-orthonormalized)."""
    normals = _rotate(np.stack([p.normal for p in planes_ref]), params["omega"])
    ups = _rotate(np.stack([p.up for p in planes_ref]), params["omega"])
    w = np.exp(params["log_w"])
    h = np.exp(params["log_h"])
    return [Rectangle(center=params["center"][k], normal=normals[k], up=ups[k],
                      width=w[k], height=h[k])
            for k in range(len(planes_ref))]


# -- geometric loss (plane fitting) -----------------------------------------

def _point_plane_terms(points: np.ndarray, planes: List[Rectangle]):
    stack = plane_stack(planes)
    q = points[:, None, :] - stack["center"][None, :, :]          # (N, K, 3)
    a = np.einsum("nkc,kc->nk", q, stack["right"])
    b = np.einsum("nkc,kc->nk", q, stack["up"])
    c = np.einsum("nkc,kc->nk", q, stack["normal"])
    da = a - np.clip(a, -stack["half_w"], stack["half_w"])
    db = b - np.clip(b, -stack["half_h"], stack["half_h"])
    dist = np.sqrt(da * da + db * db + c * c)
    return stack, q, da, db, c, dist


def geometric_loss(cloud: PointCloud, planes: List[Rectangle],
                   config: GeometricLossConfig = None):
    """Sum of min point-to-rectangle distances plus squared-area regularizer.

    Returns (loss, grads) where grads covers {center, omega, log_w, log_h};
    the min term's gradient flows only through each point's argmin plane.
    """
    config = config or GeometricLossConfig()
    if len(cloud) == 0 or not planes:
        raise EmptyInput("cloud and planes must be non-empty")
    pts = cloud.points
    stack, q, da, db, c, dist = _point_plane_terms(pts, planes)
    k_min = np.argmin(dist, axis=1)                                # ties: lowest index
    n_pts = pts.shape[0]
    rows = np.arange(n_pts)
    d_min = dist[rows, k_min]
    w = stack["half_w"] * 2.0
    h = stack["half_h"] * 2.0
    area = (w * h) ** 2
    loss = float(d_min.sum() + config.lambda_area * area.sum())

    grads = {
        "center": np.zeros((len(planes), 3)),
        "omega": np.zeros((len(planes), 3)),
        "log_w": np.zeros(len(planes)),
        "log_h": np.zeros(len(planes)),
    }
    safe = d_min > 1e-12
    idx = k_min[safe]
    qs = q[rows[safe], idx]
    das = da[rows[safe], idx]
    dbs = db[rows[safe], idx]
    cs = c[rows[safe], idx]
    ds = d_min[safe]
    r_k = stack["right"][idx]
    u_k = stack["up"][idx]
    n_k = stack["normal"][idx]
    # d(dist)/d(center) = -(x - closest)/dist
    g_center = -(das[:, None] * r_k + dbs[:, None] * u_k + cs[:, None] * n_k) / ds[:, None]
    np.add.at(grads["center"], idx, g_center)
    # Rotation increment at identity: d a / d omega = r x q, etc.
    g_omega = (das[:, None] * np.cross(r_k, qs)
               + dbs[:, None] * np.cross(u_k, qs)
               + cs[:, None] * np.cross(n_k, qs)) / ds[:, None]
    np.add.at(grads["omega"], idx, g_omega)
    # Size gradients only act when the in-plane projection is clamped.
    np.add.at(grads["log_w"], idx,
              -np.abs(das) * stack["half_w"][idx] / ds)
    np.add.at(grads["log_h"], idx,
              -np.abs(dbs) * stack["half_h"][idx] / ds)
    grads["log_w"] += 2.0 * config.lambda_area * area
    grads["log_h"] += 2.0 * config.lambda_area * area
    return loss, grads


def point_rmse(cloud: PointCloud, planes: List[Rectangle]) -> float:
    """RMSE of per-point min distances to the plane set."""
    _, _, _, _, _, dist = _point_plane_terms(cloud.points, planes)
    return float(np.sqrt(np.mean(dist.min(axis=1) ** 2)))


def fit_planes(cloud: PointCloud, planes_init: List[Rectangle],
               config: GeometricLossConfig = None, log: TrainLog = None,
               cloud_batch: Optional[int] = None, seed: int = 0) -> List[Rectangle]:
    """Adam descent of the geometric loss starting from the given planes.

    The descent landscape has deep local minima (a plane absorbing two
    surfaces, say); with config.restarts > 1, further attempts reseed the
    initialization and the lowest-RMSE result is kept.
    """
    config = config or GeometricLossConfig()
    best = None
    for attempt in range(max(config.restarts, 1)):
        if attempt == 0:
            start = planes_init
        else:
            start = init_planes(cloud, len(planes_init),
                                PlaneInitConfig(seed=seed + attempt))
        planes = _fit_planes_once(cloud, start, config, log, cloud_batch,
                                  seed + attempt)
        rmse = point_rmse(cloud, planes)
        if best is None or rmse < best[0]:
            best = (rmse, planes)
        if best[0] < config.restart_rmse:
            break
    return best[1]


def _fit_planes_once(cloud, planes_init, config, log, cloud_batch, seed):
    planes = list(planes_init)
    params = planes_to_params(planes)
    opt = Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng(seed)
    for it in range(config.iterations):
        if cloud_batch and cloud_batch < len(cloud):
            sel = rng.choice(len(cloud), size=cloud_batch, replace=False)
            batch = PointCloud(cloud.points[sel])
        else:
            batch = cloud
        loss, grads = geometric_loss(batch, planes, config)
        if config.lr_decay:
            opt.lr = config.learning_rate * 0.5 * (
                1.0 + np.cos(np.pi * it / max(config.iterations, 1)))
        opt.step(params, grads)
        planes = params_to_planes(params, planes)
        params["omega"][:] = 0.0
        if log and (it % 25 == 0 or it == config.iterations - 1):
            log.record(stage="fit_planes", step=it, loss=loss,
                       rmse=point_rmse(cloud, planes))
    planes = refine_planes_by_assignment(cloud, planes, config.polish_rounds)
    if log:
        log.record(stage="fit_planes", step=config.iterations,
                   rmse=point_rmse(cloud, planes))
    return planes


def _fit_cluster(pts: np.ndarray, margin: float = 1.03) -> Optional[Rectangle]:
    """Best-fit rectangle for a point group via PCA; None when degenerate.

    Extents get a small margin: sampled clouds under-estimate the true surface
    border, and a slightly oversized rectangle never increases point-to-
    rectangle distances while letting opacity training carve the silhouette.
    """
    if pts.shape[0] < 3:
        return None
    center = pts.mean(axis=0)
    cov = np.cov((pts - center).T)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] < 1e-14:
        return None
    normal = evecs[:, 0]
    up = evecs[:, 2]
    local = pts - center
    a = local @ np.cross(up, normal)
    b = local @ up
    return Rectangle(center=center, normal=normal, up=up,
                     width=max(2.0 * margin * float(np.abs(a).max()), 1e-6),
                     height=max(2.0 * margin * float(np.abs(b).max()), 1e-6))


def _em_rounds(cloud: PointCloud, planes: List[Rectangle], rounds: int):
    """Assignment/refit iterations; returns (planes, min dist per point, assignment)."""
    planes = list(planes)
    dist = assign = None
    for _ in range(max(rounds, 1)):
        _, _, _, _, _, d = _point_plane_terms(cloud.points, planes)
        assign = np.argmin(d, axis=1)
        dist = d[np.arange(len(cloud)), assign]
        changed = False
        for k in range(len(planes)):
            new = _fit_cluster(cloud.points[assign == k])
            if new is None:
                continue
            if (np.linalg.norm(new.center - planes[k].center) > 1e-12
                    or abs(new.width - planes[k].width) > 1e-12):
                changed = True
            planes[k] = new
        if not changed:
            break
    return planes, dist, assign


def refine_planes_by_assignment(cloud: PointCloud, planes: List[Rectangle],
                                rounds: int = 12) -> List[Rectangle]:
    """Alternate nearest-plane assignment with per-plane PCA refits.

    Each refit recenters a plane on its assigned points, takes its frame from
    the local covariance and sizes it to the assigned extent. Between passes,
    the plane whose removal costs the least is tentatively relocated to split
    the worst-fitting cluster; the move is kept only if total error drops.
    A no-op when rounds == 0.
    """
    if rounds <= 0 or len(planes) < 2:
        return list(planes)
    planes, dist, assign = _em_rounds(cloud, planes, rounds)
    K = len(planes)
    failed: set = set()
    for _ in range(2 * K):
        _, _, _, _, _, d = _point_plane_terms(cloud.points, planes)
        assign = np.argmin(d, axis=1)
        dist = d[np.arange(len(cloud)), assign]
        sse_before = float(np.sum(dist ** 2))
        if np.sqrt(sse_before / len(cloud)) < 1e-9:
            break
        per_plane_sse = np.bincount(assign, weights=dist ** 2, minlength=K)
        per_plane_sse[list(failed)] = -1.0
        recipient = int(np.argmax(per_plane_sse))
        if per_plane_sse[recipient] <= 0.0:
            break
        # Removal cost: each point falls back to its second-closest plane.
        d_sorted = np.sort(d, axis=1)
        fallback = d_sorted[:, 1] ** 2 - dist ** 2
        removal_cost = np.bincount(assign, weights=fallback, minlength=K)
        removal_cost[recipient] = np.inf
        donor = int(np.argmin(removal_cost))
        pts = cloud.points[assign == recipient]
        if pts.shape[0] < 6:
            failed.add(recipient)
            continue
        # Split the worst cluster along its largest-variance axis.
        center = pts.mean(axis=0)
        _, evecs = np.linalg.eigh(np.cov((pts - center).T))
        proj = (pts - center) @ evecs[:, 2]
        lo, hi = _fit_cluster(pts[proj <= np.median(proj)]), \
            _fit_cluster(pts[proj > np.median(proj)])
        if lo is None or hi is None:
            failed.add(recipient)
            continue
        candidate = list(planes)
        candidate[recipient] = lo
        candidate[donor] = hi
        candidate, cand_dist, _ = _em_rounds(cloud, candidate, rounds)
        if float(np.sum(cand_dist ** 2)) < sse_before * (1.0 - 1e-9):
            planes = candidate
            failed.clear()
        else:
            failed.add(recipient)
    return planes


# -- photometric machinery ---------------------------------------------------

def photometric_loss(rendered: np.ndarray, target: np.ndarray):
    """Sum of squared errors over a ray batch; gradient is 2 * (c - c_gt)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ShapeMismatch(f"{rendered.shape} vs {target.shape}")
    diff = rendered - target
    return float(np.sum(diff * diff)), 2.0 * diff


def composite_forward_backward(alpha: np.ndarray, color: np.ndarray,
                               background: np.ndarray):
    """Exact front-to-back composition over padded (R, M) samples with grads.

    Returns (pixel, d_alpha_fn) where d_alpha_fn(upstream) yields
    (d_alpha (R, M), d_color (R, M, 3)) for upstream dL/dpixel of shape (R, 3).
    Padded slots (alpha 0, color 0) are exact no-ops.
    """
    R, M = alpha.shape
    one_minus = 1.0 - alpha
    t_prev = np.cumprod(np.concatenate([np.ones((R, 1)), one_minus[:, :-1]], axis=1), axis=1)
    weights = t_prev * alpha
    t_full = t_prev[:, -1] * one_minus[:, -1]
    pixel = np.einsum("rm,rmc->rc", weights, color) + t_full[:, None] * background[None, :]
    # tail[j] = composition of everything behind sample j, background included.
    tail = np.empty((R, M, 3))
    acc = np.broadcast_to(background, (R, 3)).copy()
    for j in range(M - 1, -1, -1):
        tail[:, j] = acc
        acc = alpha[:, j:j + 1] * color[:, j] + one_minus[:, j:j + 1] * acc

    def backward(upstream: np.ndarray):
        d_color = weights[:, :, None] * upstream[:, None, :]
        d_alpha = np.einsum("rmc,rc->rm", t_prev[:, :, None] * (color - tail), upstream)
        return d_alpha, d_color

    return pixel, t_full, weights, backward


def _collect_rays(dataset, split: str = "train"):
    """Flatten a dataset split into (origins, dirs, target colors)."""
    origins, dirs, colors = [], [], []
    for frame in dataset.frames:
        if frame.split != split:
            continue
        cam = frame.camera
        px, py = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        d = cam.ray_directions(px.ravel(), py.ravel())
        dirs.append(d)
        origins.append(np.broadcast_to(cam.translation, d.shape).copy())
        colors.append(frame.image.reshape(-1, 3))
    if not origins:
        raise EmptyDataset(f"no frames in split {split!r}")
    return (np.concatenate(origins), np.concatenate(dirs), np.concatenate(colors))


def _grouped_forward(experts, plane_idx, pos, dirs):
    """Per-plane batched forward with caches; returns colors, alphas, chunks."""
    n = plane_idx.size
    colors = np.zeros((n, 3))
    alphas = np.zeros(n)
    chunks = []
    if n:
        order = np.argsort(plane_idx, kind="stable")
        bounds = np.nonzero(np.diff(plane_idx[order]))[0] + 1
        for chunk in np.split(order, bounds):
            k = int(plane_idx[chunk[0]])
            cache = {}
            c, a = experts[k].forward(pos[chunk], dirs[chunk], cache)
            colors[chunk] = c
            alphas[chunk] = a
            chunks.append((k, chunk, cache))
    return colors, alphas, chunks


# -- training stages ---------------------------------------------------------

def train_teacher(dataset, planes: List[Rectangle], schedule: TrainSchedule,
                  geom_config: GeometricLossConfig = None,
                  teacher: RadianceMLP = None, log: TrainLog = None):
    """Joint teacher + plane optimization with photometric and geometric losses.

    The photometric term updates the teacher; the geometric term updates the
    planes. Plane frames are re-orthonormalized after every step.
    """
    geom_config = geom_config or GeometricLossConfig()
    if teacher is None:
        teacher = make_teacher(seed=schedule.seed)
    if schedule.teacher_epochs == 0:
        return teacher, list(planes)
    origins, dirs, targets = _collect_rays(dataset, "train")
    rng = np.random.default_rng(schedule.seed)
    opt_t = Adam(teacher.params, lr=schedule.learning_rate)
    plane_params = planes_to_params(planes)
    opt_p = Adam(plane_params, lr=geom_config.learning_rate)
    planes = list(planes)
    background = dataset.background
    n_rays = origins.shape[0]
    step = 0
    for epoch in range(schedule.teacher_epochs):
        perm = rng.permutation(n_rays)
        epoch_loss = 0.0
        for start in range(0, n_rays, schedule.batch_rays):
            sel = perm[start:start + schedule.batch_rays]
            o, d, tgt = origins[sel], dirs[sel], targets[sel]
            stack = plane_stack(planes)
            ray_idx, plane_idx, t_hit, a_n, b_n = intersect_batch(
                o, d, stack, dataset.near, dataset.far)
            world = o[ray_idx] + t_hit[:, None] * d[ray_idx]
            cache = {}
            colors, alphas = teacher.forward(world, d[ray_idx], cache)
            _, rr, ss, alpha_pad, color_pad = pad_by_ray(
                ray_idx, len(sel), np.asarray(alphas, dtype=np.float64), np.asarray(colors, dtype=np.float64))
            pixel, _, _, backward = composite_forward_backward(
                alpha_pad, color_pad, background)
            loss_c, upstream = photometric_loss(pixel, tgt)
            d_alpha_pad, d_color_pad = backward(upstream)
            grads = teacher.backward(
                cache, d_color_pad[rr, ss], d_alpha_pad[rr, ss])
            opt_t.step(teacher.params, grads)
            # Geometric step on a point-cloud batch.
            if len(dataset.cloud) and geom_config.iterations != 0:
                if schedule.cloud_batch < len(dataset.cloud):
                    pts = dataset.cloud.points[
                        rng.choice(len(dataset.cloud), schedule.cloud_batch, replace=False)]
                    batch_cloud = PointCloud(pts)
                else:
                    batch_cloud = dataset.cloud
                loss_g, g_grads = geometric_loss(batch_cloud, planes, geom_config)
                opt_p.step(plane_params, g_grads)
                planes = params_to_planes(plane_params, planes)
                plane_params["omega"][:] = 0.0
            else:
                loss_g = 0.0
            epoch_loss += loss_c
            step += 1
        if log:
            log.record(stage="teacher", step=step, epoch=epoch,
                       loss_c=epoch_loss / n_rays, loss_g=loss_g)
    return teacher, planes


def _sample_rect_points(rect: Rectangle, n: int, rng: np.random.Generator):
    """Uniform samples on the rectangle plus front-hemisphere directions."""
    ab = rng.uniform(-1.0, 1.0, size=(n, 2))
    world = (rect.center[None, :]
             + ab[:, 0:1] * (rect.width / 2.0) * rect.right[None, :]
             + ab[:, 1:2] * (rect.height / 2.0) * rect.up[None, :])
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    facing = v @ rect.normal
    v[facing > 0] *= -1.0  # directions hit the front face: d . n < 0
    return ab, world, v


def distill(teacher: RadianceMLP, planes: List[Rectangle], experts: List[RadianceMLP],
            schedule: TrainSchedule, log: TrainLog = None) -> List[RadianceMLP]:
    """Per-plane student training against teacher outputs on random samples."""
    rng = np.random.default_rng(schedule.seed + 1)
    opts = [Adam(e.params, lr=schedule.learning_rate) for e in experts]
    for step in range(schedule.distill_epochs):
        total = 0.0
        for k, (rect, expert) in enumerate(zip(planes, experts)):
            ab, world, v = _sample_rect_points(rect, schedule.distill_batch, rng)
            tgt_c, tgt_a = teacher.forward(world, v)
            cache = {}
            c, a = expert.forward(ab, v, cache)
            dc = np.asarray(c, dtype=np.float64) - np.asarray(tgt_c, dtype=np.float64)
            da = np.asarray(a, dtype=np.float64) - np.asarray(tgt_a, dtype=np.float64)
            total += float(np.sum(dc * dc) + np.sum(da * da))
            grads = expert.backward(cache, 2.0 * dc, 2.0 * da)
            opts[k].step(expert.params, grads)
        if log and (step % 50 == 0 or step == schedule.distill_epochs - 1):
            log.record(stage="distill", step=step,
                       loss=total / max(len(experts), 1))
    return experts


def _finetune_pass(experts, planes, dataset, schedule, rng, opts, epochs,
                   baked=None, freeze_alpha_head=False, log=None, stage="finetune"):
    origins, dirs, targets = _collect_rays(dataset, "train")
    background = dataset.background
    n_rays = origins.shape[0]
    stack = plane_stack(planes)
    for epoch in range(epochs):
        if schedule.lr_decay:
            lr = schedule.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / epochs))
            for opt in opts:
                opt.lr = lr
        perm = rng.permutation(n_rays)
        epoch_loss = 0.0
        for start in range(0, n_rays, schedule.batch_rays):
            sel = perm[start:start + schedule.batch_rays]
            o, d, tgt = origins[sel], dirs[sel], targets[sel]
            ray_idx, plane_idx, t_hit, a_n, b_n = intersect_batch(
                o, d, stack, dataset.near, dataset.far)
            pos = np.stack([a_n, b_n], axis=1)
            colors, alphas, chunks = _grouped_forward(
                experts, plane_idx, pos, d[ray_idx])
            if baked is not None:
                alphas = np.zeros(plane_idx.size)
                for k, chunk, _ in chunks:
                    alphas[chunk] = sample_baked_alpha(baked[k], pos[chunk])
            _, rr, ss, alpha_pad, color_pad = pad_by_ray(
                ray_idx, len(sel), alphas, colors)
            pixel, _, _, backward = composite_forward_backward(
                alpha_pad, color_pad, background)
            loss, upstream = photometric_loss(pixel, tgt)
            d_alpha_pad, d_color_pad = backward(upstream)
            d_alpha = d_alpha_pad[rr, ss]
            d_color = d_color_pad[rr, ss]
            if baked is not None:
                d_alpha = np.zeros_like(d_alpha)  # alpha path frozen post-bake
            for k, chunk, cache in chunks:
                grads = experts[k].backward(cache, d_color[chunk], d_alpha[chunk])
                if freeze_alpha_head:
                    grads["Wa"][:] = 0.0
                    grads["ba"][:] = 0.0
                opts[k].step(experts[k].params, grads)
            epoch_loss += loss
        if log:
            log.record(stage=stage, epoch=epoch, loss=epoch_loss / n_rays)
    return experts


def finetune(experts: List[RadianceMLP], dataset, planes: List[Rectangle],
             schedule: TrainSchedule, log: TrainLog = None) -> List[RadianceMLP]:
    """Photometric fine-tuning of all experts with plane geometry frozen."""
    if schedule.finetune_epochs == 0:
        return experts
    rng = np.random.default_rng(schedule.seed + 2)
    opts = [Adam(e.params, lr=schedule.learning_rate) for e in experts]
    return _finetune_pass(experts, planes, dataset, schedule, rng, opts,
                          schedule.finetune_epochs, log=log)


def finetune_rgb_after_bake(experts: List[RadianceMLP], baked, dataset,
                            planes: List[Rectangle], schedule: TrainSchedule,
                            epochs: Optional[int] = None,
                            log: TrainLog = None) -> List[RadianceMLP]:
    """Color-only fine-tuning with opacity frozen to the baked alpha textures."""
    epochs = schedule.finetune_epochs if epochs is None else epochs
    if epochs == 0:
        return experts
    rng = np.random.default_rng(schedule.seed + 3)
    opts = [Adam(e.params, lr=schedule.learning_rate) for e in experts]
    return _finetune_pass(experts, planes, dataset, schedule, rng, opts, epochs,
                          baked=baked, freeze_alpha_head=True, log=log,
                          stage="finetune_rgb")
