"""Oriented rectangles, rays, intersections and plane initialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateFrame, DegenerateNeighborhood, InvalidK

PARALLEL_EPS = 1e-8


def normalize_frame(n_raw: np.ndarray, u_raw: np.ndarray):
    """Orthonormalize a (normal, up) pair; returns (n, u, r) with r = u x n."""
    n_raw = np.asarray(n_raw, dtype=np.float64)
    u_raw = np.asarray(u_raw, dtype=np.float64)
    n_norm = np.linalg.norm(n_raw)
    if n_norm <= 1e-12:
        raise DegenerateFrame("normal has near-zero length")
    n = n_raw / n_norm
    u_norm = np.linalg.norm(u_raw)
    if u_norm <= 1e-12:
        raise DegenerateFrame("up vector has near-zero length")
    cos_angle = abs(np.dot(u_raw / u_norm, n))
    if cos_angle > np.cos(1e-6):
        raise DegenerateFrame("up vector is parallel to the normal")
    u = u_raw - np.dot(u_raw, n) * n
    u = u / np.linalg.norm(u)
    r = np.cross(u, n)
    return n, u, r


@dataclass
class Rectangle:
    """Oriented bounded plane: center, orthonormal (right, up, normal) frame, size."""

    center: np.ndarray
    normal: np.ndarray
    up: np.ndarray
    width: float
    height: float
    right: np.ndarray = field(init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        n, u, r = normalize_frame(self.normal, self.up)
        self.normal, self.up, self.right = n, u, r
        self.width = float(self.width)
        self.height = float(self.height)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("rectangle sizes must be positive")

    def local_coords(self, x: np.ndarray):
        """Project a world point into the (right, up) plane frame."""
        d = np.asarray(x, dtype=np.float64) - self.center
        return float(np.dot(d, self.right)), float(np.dot(d, self.up))

    def world_point(self, a: float, b: float) -> np.ndarray:
        return self.center + a * self.right + b * self.up

    def corners(self) -> np.ndarray:
        """4x3 corner array, counter-clockwise when viewed from +normal."""
        hw, hh = self.width / 2.0, self.height / 2.0
        return np.stack([
            self.world_point(-hw, -hh),
            self.world_point(hw, -hh),
            self.world_point(hw, hh),
            self.world_point(-hw, hh),
        ])


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = 1e9

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if abs(norm - 1.0) > 1e-9:
            d = d / norm
        self.direction = d
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be < t_far")

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class Hit:
    plane_index: int
    t: float
    world_point: np.ndarray
    local: tuple  # (a, b) along (right, up), scene units from the center


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return self.points.shape[0]


def ray_rectangle_intersect(ray: Ray, rect: Rectangle, plane_index: int = 0) -> Optional[Hit]:
    """Closed-form ray/rectangle intersection; returns None on miss."""
    denom = float(np.dot(ray.direction, rect.normal))
    if abs(denom) < PARALLEL_EPS:
        return None
    t = float(np.dot(rect.center - ray.origin, rect.normal)) / denom
    if not (ray.t_near < t < ray.t_far):
        return None
    x = ray.at(t)
    a, b = rect.local_coords(x)
    if abs(a) > rect.width / 2.0 or abs(b) > rect.height / 2.0:
        return None
    return Hit(plane_index=plane_index, t=t, world_point=x, local=(a, b))


def point_to_rectangle_distance(x: np.ndarray, rect: Rectangle) -> float:
    """Euclidean distance from x to the closest point of the bounded rectangle."""
    x = np.asarray(x, dtype=np.float64)
    a, b = rect.local_coords(x)
    a = min(max(a, -rect.width / 2.0), rect.width / 2.0)
    b = min(max(b, -rect.height / 2.0), rect.height / 2.0)
    return float(np.linalg.norm(x - rect.world_point(a, b)))


def farthest_point_sample(cloud: PointCloud, K: int, seed: int = 0) -> list:
    """Greedy FPS over the cloud; deterministic for a fixed (cloud, K, seed)."""
    n = len(cloud)
    if K < 1 or K > n:
        raise InvalidK(f"K={K} out of range for {n} points")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    selected = [first]
    min_d2 = np.sum((cloud.points - cloud.points[first]) ** 2, axis=1)
    for _ in range(K - 1):
        idx = int(np.argmax(min_d2))  # argmax takes the lowest index on ties
        selected.append(idx)
        d2 = np.sum((cloud.points - cloud.points[idx]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return selected


def estimate_local_frame(cloud: PointCloud, center: np.ndarray, k_neighbors: int = 16):
    """PCA frame of the k nearest neighbors: (normal, up)."""
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be >= 3")
    k = min(k_neighbors, len(cloud))
    tree = cKDTree(cloud.points)
    _, idx = tree.query(np.asarray(center, dtype=np.float64), k=k)
    nbrs = cloud.points[np.atleast_1d(idx)]
    centered = nbrs - nbrs.mean(axis=0)
    cov = centered.T @ centered / len(nbrs)
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
    if evals[1] <= 1e-12 * max(evals[2], 1e-300):
        raise DegenerateNeighborhood("neighbors are collinear")
    n = evecs[:, 0]
    n = _canonical_sign(n)
    u = evecs[:, 1]
    u = u - np.dot(u, n) * n
    u = u / np.linalg.norm(u)
    return n, u


def _canonical_sign(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    # Flip so the first nonzero of (z, y, x) is positive.
    for c in (2, 1, 0):
        if v[c] > eps:
            return v
        if v[c] < -eps:
            return -v
    return v


@dataclass
class PlaneInitConfig:
    k_neighbors: int = 16
    init_size: Optional[float] = None  # default: 2x median NN spacing of centers
    seed: int = 0


def init_planes(cloud: PointCloud, K: int, config: PlaneInitConfig = None) -> list:
    """FPS centers + PCA frames + heuristic initial sizes."""
    config = config or PlaneInitConfig()
    if K < 1:
        raise InvalidK("K must be >= 1")
    indices = farthest_point_sample(cloud, K, seed=config.seed)
    centers = cloud.points[indices]
    size = config.init_size
    if size is None:
        if K >= 2:
            tree = cKDTree(centers)
            d, _ = tree.query(centers, k=2)
            size = 2.0 * float(np.median(d[:, 1]))
        else:
            spread = cloud.points.max(axis=0) - cloud.points.min(axis=0)
            size = float(np.max(spread))
        size = max(size, 1e-3)
    planes = []
    for c in centers:
        n, u = estimate_local_frame(cloud, c, config.k_neighbors)
        planes.append(Rectangle(center=c, normal=n, up=u, width=size, height=size))
    return planes
