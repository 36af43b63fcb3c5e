"""Tiny per-plane radiance MLPs, the teacher MLP, and exact reverse-mode gradients.

Each network is a position trunk (ReLU hidden layers) feeding two sigmoid heads:
the alpha head reads trunk features only, so opacity is view-independent by
architecture; the color head reads trunk features concatenated with the encoded
view direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EncodingConfig:
    L_pos: int = 6
    L_dir: int = 4
    include_identity: bool = True

    def encoded_dim(self, D: int, L: int) -> int:
        base = 2 * L
        if self.include_identity:
            base += 1
        return D * base


def fourier_encode(v: np.ndarray, L: int, include_identity: bool = True) -> np.ndarray:
    """Per-component frequency encoding.

    For each input component x the output block is
    [x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)],
    blocks concatenated in input order. Accepts (D,) or (N, D) arrays.
    """
    v = np.asarray(v)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    blocks = []
    for d in range(v.shape[1]):
        x = v[:, d:d + 1]
        if include_identity:
            blocks.append(x)
        for level in range(L):
            arg = (2.0 ** level) * np.pi * x
            blocks.append(np.sin(arg))
            blocks.append(np.cos(arg))
    out = np.concatenate(blocks, axis=1) if blocks else v[:, :0]
    return out[0] if single else out


def _layer_params(fan_in: int, fan_out: int, rng: np.random.Generator, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return W.astype(dtype), b.astype(dtype)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class RadianceMLP:
    """Position-trunk MLP with sigmoid (color, alpha) heads and manual backprop."""

    def __init__(self, pos_dim: int, hidden: int, depth: int,
                 L_pos: int, L_dir: int, seed: int = 0,
                 dtype=np.float32, include_identity: bool = True):
        self.pos_dim = pos_dim
        self.hidden = hidden
        self.depth = depth
        self.L_pos = L_pos
        self.L_dir = L_dir
        self.include_identity = include_identity
        self.dtype = np.dtype(dtype)
        enc = EncodingConfig(L_pos, L_dir, include_identity)
        self.enc_pos_dim = enc.encoded_dim(pos_dim, L_pos)
        self.enc_dir_dim = enc.encoded_dim(3, L_dir)
        rng = np.random.default_rng(seed)
        self.params = {}
        fan_in = self.enc_pos_dim
        for i in range(depth):
            W, b = _layer_params(fan_in, hidden, rng, self.dtype)
            self.params[f"W{i}"] = W
            self.params[f"b{i}"] = b
            fan_in = hidden
        Wa, ba = _layer_params(hidden, 1, rng, self.dtype)
        self.params["Wa"] = Wa
        self.params["ba"] = ba
        Wc, bc = _layer_params(hidden + self.enc_dir_dim, 3, rng, self.dtype)
        self.params["Wc"] = Wc
        self.params["bc"] = bc
        assert self.param_count() == mlp_param_count(
            pos_dim, hidden, depth, L_pos, L_dir, include_identity)

    # -- parameter plumbing -------------------------------------------------

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def param_names(self):
        return list(self.params.keys())

    def get_vector(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names()])

    def set_vector(self, vec: np.ndarray):
        off = 0
        for k in self.param_names():
            p = self.params[k]
            self.params[k] = np.asarray(
                vec[off:off + p.size], dtype=self.dtype).reshape(p.shape)
            off += p.size
        if off != vec.size:
            raise ValueError("parameter vector length mismatch")

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(p) for k, p in self.params.items()}

    def astype(self, dtype) -> "RadianceMLP":
        other = RadianceMLP(self.pos_dim, self.hidden, self.depth,
                            self.L_pos, self.L_dir, dtype=dtype,
                            include_identity=self.include_identity)
        for k, p in self.params.items():
            other.params[k] = p.astype(dtype)
        return other

    # -- forward / backward -------------------------------------------------

    def forward(self, pos: np.ndarray, dirs: np.ndarray, cache: dict = None):
        """Batched evaluation; pos (N, pos_dim), dirs (N, 3) unit vectors.

        Returns (color (N, 3), alpha (N,)).  Pass a dict as `cache` to retain
        the activations needed by `backward`.
        """
        pos = np.asarray(pos, dtype=self.dtype).reshape(-1, self.pos_dim)
        dirs = np.asarray(dirs, dtype=self.dtype).reshape(-1, 3)
        e_pos = fourier_encode(pos, self.L_pos, self.include_identity)
        e_dir = fourier_encode(dirs, self.L_dir, self.include_identity)
        h = e_pos
        hs, zs = [h], []
        for i in range(self.depth):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = np.maximum(z, 0)
            zs.append(z)
            hs.append(h)
        alpha = _sigmoid(h @ self.params["Wa"] + self.params["ba"])[:, 0]
        color_in = np.concatenate([h, e_dir], axis=1)
        color = _sigmoid(color_in @ self.params["Wc"] + self.params["bc"])
        if cache is not None:
            cache.update(hs=hs, zs=zs, color_in=color_in, color=color, alpha=alpha)
        return color, alpha

    def backward(self, cache: dict, d_color: np.ndarray, d_alpha: np.ndarray,
                 grads: dict = None) -> dict:
        """Exact gradients of the cached forward pass; sums over the batch.

        `grads` may hold an existing buffer to accumulate into (mergeable by
        summation across workers).
        """
        if grads is None:
            grads = self.zero_grads()
        color, alpha = cache["color"], cache["alpha"]
        h = cache["hs"][-1]
        H = self.hidden
        d_color = np.asarray(d_color, dtype=self.dtype).reshape(color.shape)
        d_alpha = np.asarray(d_alpha, dtype=self.dtype).reshape(alpha.shape)

        dz_c = d_color * color * (1.0 - color)
        grads["Wc"] += cache["color_in"].T @ dz_c
        grads["bc"] += dz_c.sum(axis=0)
        dh = (dz_c @ self.params["Wc"].T)[:, :H]

        dz_a = (d_alpha * alpha * (1.0 - alpha))[:, None]
        grads["Wa"] += h.T @ dz_a
        grads["ba"] += dz_a.sum(axis=0)
        dh = dh + dz_a @ self.params["Wa"].T

        for i in reversed(range(self.depth)):
            dz = dh * (cache["zs"][i] > 0)
            grads[f"W{i}"] += cache["hs"][i].T @ dz
            grads[f"b{i}"] += dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.params[f"W{i}"].T
        return grads


def mlp_param_count(pos_dim: int, hidden: int, depth: int,
                    L_pos: int, L_dir: int, include_identity: bool = True) -> int:
    """Closed-form parameter count of the trunk + two-head architecture."""
    enc = EncodingConfig(L_pos, L_dir, include_identity)
    n = 0
    fan_in = enc.encoded_dim(pos_dim, L_pos)
    for _ in range(depth):
        n += fan_in * hidden + hidden
        fan_in = hidden
    n += hidden * 1 + 1                                  # alpha head
    n += (hidden + enc.encoded_dim(3, L_dir)) * 3 + 3    # color head
    return n


EXPERT_HIDDEN = 32
EXPERT_DEPTH = 3
TEACHER_HIDDEN = 128
TEACHER_DEPTH = 4


def make_expert(L_pos: int = 6, L_dir: int = 4, hidden: int = EXPERT_HIDDEN,
                seed: int = 0, dtype=np.float32) -> RadianceMLP:
    """Per-plane expert over normalized 2D local coordinates."""
    return RadianceMLP(2, hidden, EXPERT_DEPTH, L_pos, L_dir, seed=seed, dtype=dtype)


def make_teacher(L_pos: int = 8, L_dir: int = 4, hidden: int = TEACHER_HIDDEN,
                 seed: int = 0, dtype=np.float32) -> RadianceMLP:
    """Teacher field over 3D world coordinates inside the unit sphere."""
    return RadianceMLP(3, hidden, TEACHER_DEPTH, L_pos, L_dir, seed=seed, dtype=dtype)


def expert_param_count(hidden: int = EXPERT_HIDDEN, L_pos: int = 6, L_dir: int = 4) -> int:
    return mlp_param_count(2, hidden, EXPERT_DEPTH, L_pos, L_dir)
