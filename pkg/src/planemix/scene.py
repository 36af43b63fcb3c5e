"""Scene container: rectangles plus their radiance sources and baked textures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geometry import Rectangle


class ProceduralExpert:
    """Closed-form radiance source for synthetic ground-truth scenes.

    Mirrors the RadianceMLP forward signature so the renderer can evaluate
    either interchangeably. Colors are view-independent; alpha is constant.
    """

    KINDS = ("constant", "gradient", "checker")

    def __init__(self, kind: str, color_a, color_b=None, alpha: float = 1.0,
                 checker_cells: int = 4):
        if kind not in self.KINDS:
            raise ValueError(f"unknown texture kind {kind!r}")
        self.kind = kind
        self.color_a = np.asarray(color_a, dtype=np.float64)
        self.color_b = (np.asarray(color_b, dtype=np.float64)
                        if color_b is not None else 1.0 - self.color_a)
        self.alpha = float(alpha)
        self.checker_cells = int(checker_cells)

    def forward(self, pos: np.ndarray, dirs: np.ndarray = None, cache=None):
        pos = np.asarray(pos, dtype=np.float64).reshape(-1, 2)
        n = pos.shape[0]
        if self.kind == "constant":
            color = np.broadcast_to(self.color_a, (n, 3)).copy()
        elif self.kind == "gradient":
            # Linear blend along the diagonal of the normalized square.
            s = (pos[:, 0] + pos[:, 1] + 2.0) / 4.0
            color = self.color_a[None, :] + s[:, None] * (self.color_b - self.color_a)[None, :]
        else:
            cells = self.checker_cells
            ia = np.floor((pos[:, 0] + 1.0) / 2.0 * cells).clip(0, cells - 1)
            ib = np.floor((pos[:, 1] + 1.0) / 2.0 * cells).clip(0, cells - 1)
            parity = ((ia + ib) % 2).astype(bool)
            color = np.where(parity[:, None], self.color_b[None, :], self.color_a[None, :])
        alpha = np.full(n, self.alpha)
        return color, alpha

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "color_a": self.color_a.tolist(),
            "color_b": self.color_b.tolist(),
            "alpha": self.alpha,
            "checker_cells": self.checker_cells,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ProceduralExpert":
        return cls(cfg["kind"], cfg["color_a"], cfg["color_b"],
                   cfg["alpha"], cfg["checker_cells"])


@dataclass
class AlphaTexture:
    """Baked view-independent opacity grid at cell centers over the rectangle."""

    plane_index: int
    values: np.ndarray  # (rows, cols) in [0, 1]; rows index b, cols index a

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError("alpha texture must be at least 2x2")


@dataclass
class Scene:
    rectangles: List[Rectangle]
    experts: List  # RadianceMLP or ProceduralExpert, one per rectangle
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha_textures: Optional[List[AlphaTexture]] = None
    t_near: float = 1e-4
    t_far: float = 100.0

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if len(self.rectangles) != len(self.experts):
            raise ValueError("one expert per rectangle required")

    @property
    def num_planes(self) -> int:
        return len(self.rectangles)
