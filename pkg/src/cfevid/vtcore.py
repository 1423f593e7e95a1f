"""A small, deterministic video transformer in float32 numpy.

Cube embedding (non-overlapping ``T x mb x mb`` cubes projected by a 3-D
kernel), a class token, learned positional rows, pre-norm encoder blocks and
a linear head on the class token.  Inference only.

Token order is temporal-major: token ``1 + t * G + g`` holds the cube at
temporal slot ``t`` and spatial grid position ``g`` (row-major), where
``G = grid_rows * grid_cols``; token 0 is the class token.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import struct

import numpy as np

from .geometry import Clip, DimensionError, FormatError

F32 = np.float32


@dataclass(frozen=True)
class VtConfig:
    frames: int = 8
    height: int = 64
    width: int = 64
    T: int = 2
    mb: int = 16
    embed_dim: int = 32
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 2
    n_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.frames % self.T:
            raise ValueError(f"frames={self.frames} not divisible by T={self.T}")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim={self.embed_dim} not divisible by n_heads={self.n_heads}")
        if self.height % self.mb or self.width % self.mb:
            raise ValueError(f"{self.height}x{self.width} not divisible by cube size {self.mb}")

    @property
    def grid_rows(self) -> int:
        return self.height // self.mb

    @property
    def grid_cols(self) -> int:
        return self.width // self.mb

    @property
    def n_positions(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def t_tokens(self) -> int:
        return self.frames // self.T

    @property
    def n_tokens(self) -> int:
        return self.t_tokens * self.n_positions

    @property
    def kernel_shape(self) -> tuple[int, int, int, int, int]:
        return (self.embed_dim, 3, self.T, self.mb, self.mb)


@dataclass
class ModelWeights:
    """Named float32 tensors plus the config they were built for.

    ``embed.kernel`` is ``(D, 3, T, mb, mb)`` for a shared kernel or
    ``(G, D, 3, T, mb, mb)`` when every grid position has its own kernel.
    """

    config: VtConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def per_position(self) -> bool:
        return self.tensors["embed.kernel"].ndim == 6

    def with_tensors(self, updates: dict[str, np.ndarray]) -> "ModelWeights":
        return ModelWeights(self.config, {**self.tensors, **updates})

    def validate(self) -> None:
        cfg = self.config
        k = self.tensors["embed.kernel"]
        if k.shape[-5:] != cfg.kernel_shape:
            raise DimensionError(f"embed.kernel {k.shape} does not match config {cfg.kernel_shape}")
        if k.ndim == 6 and k.shape[0] != cfg.n_positions:
            raise DimensionError(f"per-position kernel count {k.shape[0]} != {cfg.n_positions}")
        if self.tensors["pos"].shape != (cfg.n_tokens + 1, cfg.embed_dim):
            raise DimensionError(f"pos rows {self.tensors['pos'].shape[0]} != tokens + 1")
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                bad = int(np.size(t) - np.count_nonzero(np.isfinite(t)))
                raise ValueError(f"tensor {name!r} holds {bad} non-finite values")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    # normal draw clipped at two standard deviations
    return np.clip(rng.standard_normal(shape), -2.0, 2.0).astype(F32) * F32(std)


def init_weights(cfg: VtConfig) -> ModelWeights:
    """Random weights from ``cfg.seed`` (PCG64).

    Linear maps use a clipped normal with std ``1/sqrt(fan_in)``; positional
    rows and the class token use std 0.5 so that position actually matters;
    biases get std 0.02 and layer norms start at unit gain.
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.embed_dim
    hidden = d * cfg.mlp_ratio
    fan_in = 3 * cfg.T * cfg.mb * cfg.mb
    t: dict[str, np.ndarray] = {
        "embed.kernel": _trunc_normal(rng, cfg.kernel_shape, fan_in ** -0.5),
        "embed.bias": _trunc_normal(rng, (d,), 0.02),
        "cls": _trunc_normal(rng, (d,), 0.5),
        "pos": _trunc_normal(rng, (cfg.n_tokens + 1, d), 0.5),
    }
    for i in range(cfg.n_layers):
        p = f"enc.{i}."
        t[p + "ln1.w"] = np.ones(d, F32)
        t[p + "ln1.b"] = np.zeros(d, F32)
        t[p + "attn.qkv.w"] = _trunc_normal(rng, (d, 3 * d), d ** -0.5)
        t[p + "attn.qkv.b"] = _trunc_normal(rng, (3 * d,), 0.02)
        t[p + "attn.proj.w"] = _trunc_normal(rng, (d, d), d ** -0.5)
        t[p + "attn.proj.b"] = _trunc_normal(rng, (d,), 0.02)
        t[p + "ln2.w"] = np.ones(d, F32)
        t[p + "ln2.b"] = np.zeros(d, F32)
        t[p + "mlp.fc1.w"] = _trunc_normal(rng, (d, hidden), d ** -0.5)
        t[p + "mlp.fc1.b"] = _trunc_normal(rng, (hidden,), 0.02)
        t[p + "mlp.fc2.w"] = _trunc_normal(rng, (hidden, d), hidden ** -0.5)
        t[p + "mlp.fc2.b"] = _trunc_normal(rng, (d,), 0.02)
    t["norm.w"] = np.ones(d, F32)
    t["norm.b"] = np.zeros(d, F32)
    t["head.w"] = _trunc_normal(rng, (d, cfg.n_classes), d ** -0.5)
    t["head.b"] = _trunc_normal(rng, (cfg.n_classes,), 0.02)
    return ModelWeights(cfg, t)


# -- forward pass ---------------------------------------------------------------

def normalize(samples: np.ndarray) -> np.ndarray:
    """Map 8-bit samples to [-1, 1] via (2p - 255) / 255, so 255 - p maps to -v."""
    return ((samples.astype(F32) * F32(2) - F32(255)) / F32(255)).astype(F32)


def cubes(clip: Clip, cfg: VtConfig) -> np.ndarray:
    """``(t_tokens, G, 3, T, mb, mb)`` view of the normalised clip."""
    if (clip.frames, clip.height, clip.width) != (cfg.frames, cfg.height, cfg.width):
        raise DimensionError(
            f"clip {clip.frames}x{clip.height}x{clip.width} does not match model "
            f"{cfg.frames}x{cfg.height}x{cfg.width}"
        )
    v = normalize(clip.data)
    v = v.reshape(cfg.t_tokens, cfg.T, cfg.grid_rows, cfg.mb, cfg.grid_cols, cfg.mb, 3)
    # -> (nt, gr, gc, C, T, y, x)
    v = v.transpose(0, 2, 4, 6, 1, 3, 5)
    return np.ascontiguousarray(v.reshape(cfg.t_tokens, cfg.n_positions, 3, cfg.T, cfg.mb, cfg.mb))


def embed(clip: Clip, w: ModelWeights) -> np.ndarray:
    """Token matrix ``(1 + n_tokens, D)`` with class token first and positions added."""
    cfg = w.config
    x = cubes(clip, cfg)
    nt, g = x.shape[:2]
    k = w["embed.kernel"]
    d = cfg.embed_dim
    flat = x.reshape(nt, g, -1)
    if k.ndim == 6:
        # (G, nt, K) @ (G, K, D)
        tok = np.matmul(flat.transpose(1, 0, 2), k.reshape(g, d, -1).transpose(0, 2, 1))
        tok = tok.transpose(1, 0, 2)
    else:
        tok = np.matmul(flat.reshape(nt * g, -1), k.reshape(d, -1).T).reshape(nt, g, d)
    tok = tok.reshape(nt * g, d) + w["embed.bias"]
    seq = np.concatenate([w["cls"][None, :], tok], axis=0)
    return (seq + w["pos"]).astype(F32)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return ((x - mu) / np.sqrt(var + F32(eps))) * gain + bias


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    c = F32(np.sqrt(2.0 / np.pi))
    return F32(0.5) * x * (F32(1) + np.tanh(c * (x + F32(0.044715) * x ** 3)))


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def attention(x: np.ndarray, w: ModelWeights, prefix: str, n_heads: int) -> np.ndarray:
    n, d = x.shape
    dh = d // n_heads
    qkv = x @ w[prefix + "qkv.w"] + w[prefix + "qkv.b"]
    q, k, v = (qkv[:, i * d:(i + 1) * d].reshape(n, n_heads, dh).transpose(1, 0, 2)
               for i in range(3))
    a = softmax((q @ k.transpose(0, 2, 1)) * F32(dh ** -0.5))
    out = (a @ v).transpose(1, 0, 2).reshape(n, d)
    return out @ w[prefix + "proj.w"] + w[prefix + "proj.b"]


def encode(tokens: np.ndarray, w: ModelWeights) -> np.ndarray:
    """Run the encoder stack and return the final-normed class token."""
    cfg = w.config
    x = tokens.astype(F32)
    for i in range(cfg.n_layers):
        p = f"enc.{i}."
        h = layer_norm(x, w[p + "ln1.w"], w[p + "ln1.b"])
        x = x + attention(h, w, p + "attn.", cfg.n_heads)
        h = layer_norm(x, w[p + "ln2.w"], w[p + "ln2.b"])
        h = gelu(h @ w[p + "mlp.fc1.w"] + w[p + "mlp.fc1.b"])
        x = x + (h @ w[p + "mlp.fc2.w"] + w[p + "mlp.fc2.b"])
    return layer_norm(x[0], w["norm.w"], w["norm.b"])


def head(cls_token: np.ndarray, w: ModelWeights) -> np.ndarray:
    return (cls_token @ w["head.w"] + w["head.b"]).astype(F32)


def forward(clip: Clip, w: ModelWeights) -> np.ndarray:
    """Class logits ``(n_classes,)`` for ``clip``."""
    w.validate()
    return head(encode(embed(clip, w), w), w)


# -- weight files -----------------------------------------------------------------

_MAGIC = b"CFEW"
_VERSION = 1
_CONFIG_FIELDS = ("frames", "height", "width", "T", "mb", "embed_dim", "n_layers",
                  "n_heads", "mlp_ratio", "n_classes")


def _config_tensors(cfg: VtConfig) -> dict[str, np.ndarray]:
    seed_parts = [(cfg.seed >> (16 * i)) & 0xFFFF for i in range(4)]
    return {
        "meta.config": np.array([getattr(cfg, f) for f in _CONFIG_FIELDS], F32),
        "meta.seed": np.array(seed_parts, F32),
    }


def save_weights(w: ModelWeights, path) -> None:
    tensors = {**_config_tensors(w.config), **w.tensors}
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(tensors))]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> ModelWeights:
    raw = Path(path).read_bytes()
    off = 0

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise FormatError(f"{path}: truncated at byte {off}")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    off = 4
    version, count = take("<II")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if off + n > len(raw):
            raise FormatError(f"{path}: truncated tensor name at byte {off}")
        name = raw[off:off + n].decode("utf-8")
        off += n
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        count_f = int(np.prod(dims, dtype=np.int64))
        if off + 4 * count_f > len(raw):
            raise FormatError(f"{path}: truncated data for {name!r} at byte {off}")
        tensors[name] = np.frombuffer(raw, "<f4", count_f, off).reshape(dims).astype(F32)
        off += 4 * count_f
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    try:
        vals = tensors.pop("meta.config")
        seed = tensors.pop("meta.seed", np.zeros(4, F32))
    except KeyError:
        raise FormatError(f"{path}: missing meta.config tensor") from None
    fields = {f: int(v) for f, v in zip(_CONFIG_FIELDS, vals)}
    fields["seed"] = sum(int(p) << (16 * i) for i, p in enumerate(seed))
    return ModelWeights(VtConfig(**fields), tensors)
