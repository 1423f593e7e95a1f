"""Clip container, block grids and the partition arithmetic shared by the rest
of the package.

A clip is stored as a read-only ``uint8`` array of shape
``(frames, height, width, 3)``.  Main-blocks (MBs) and sub-blocks (SBs) are
indexed row-major: MB ``m`` sits at grid row ``m // grid_cols``, column
``m % grid_cols``; SB ``s`` sits at row ``s // (mb_w // sb_w)`` inside its MB.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator
import struct

import numpy as np

__all__ = [
    "Clip",
    "BlockGrid",
    "DimensionError",
    "FormatError",
    "partition",
    "to_blocks",
    "from_blocks",
    "resize_bicubic",
    "sample_frames_uniform",
    "read_cfvr",
    "write_cfvr",
    "read_ppm_sequence",
    "write_ppm_sequence",
]


class DimensionError(ValueError):
    """Clip dimensions are incompatible with a grid or another clip."""


class FormatError(ValueError):
    """A file on disk does not follow the expected layout."""


@dataclass(frozen=True, eq=False)
class Clip:
    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 4 or a.shape[-1] != 3:
            raise DimensionError(f"clip must be (frames, H, W, 3), got {a.shape}")
        if a.dtype != np.uint8:
            raise TypeError(f"clip samples must be uint8, got {a.dtype}")
        if a.flags.writeable or not a.flags.c_contiguous:
            a = np.ascontiguousarray(a).copy()
            a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Clip):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Clip(frames={self.frames}, height={self.height}, width={self.width})"


@dataclass(frozen=True)
class BlockGrid:
    """MB/SB geometry for frames of a given size."""

    grid_rows: int
    grid_cols: int
    mb_h: int = 16
    mb_w: int = 16
    sb_h: int = 8
    sb_w: int = 8

    def __post_init__(self):
        if min(self.grid_rows, self.grid_cols, self.mb_h, self.mb_w, self.sb_h, self.sb_w) < 1:
            raise DimensionError("grid sizes must be positive")
        if self.mb_h % self.sb_h or self.mb_w % self.sb_w:
            raise DimensionError(
                f"MB {self.mb_h}x{self.mb_w} not divisible by SB {self.sb_h}x{self.sb_w}"
            )

    @classmethod
    def for_frame(cls, height: int, width: int, mb: int | tuple[int, int] = 16,
                  sb: int | tuple[int, int] = 8) -> "BlockGrid":
        mb_h, mb_w = (mb, mb) if isinstance(mb, int) else mb
        sb_h, sb_w = (sb, sb) if isinstance(sb, int) else sb
        if height % mb_h or width % mb_w:
            raise DimensionError(
                f"frame {height}x{width} not divisible by MB {mb_h}x{mb_w}; resize first"
            )
        return cls(height // mb_h, width // mb_w, mb_h, mb_w, sb_h, sb_w)

    @property
    def sb_rows(self) -> int:
        return self.mb_h // self.sb_h

    @property
    def sb_cols(self) -> int:
        return self.mb_w // self.sb_w

    @property
    def sbs_per_mb(self) -> int:
        return self.sb_rows * self.sb_cols

    @property
    def n_mbs(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def height(self) -> int:
        return self.grid_rows * self.mb_h

    @property
    def width(self) -> int:
        return self.grid_cols * self.mb_w

    def check(self, clip: Clip) -> None:
        if (clip.height, clip.width) != (self.height, self.width):
            raise DimensionError(
                f"clip {clip.height}x{clip.width} does not match grid "
                f"{self.height}x{self.width}"
            )


def partition(clip: Clip, grid: BlockGrid) -> Iterator[tuple[int, int, int, tuple[slice, slice]]]:
    """Yield ``(frame, mb_index, sb_index, (rows, cols))`` for every SB region.

    Regions are disjoint and cover the frame; indices are row-major.
    """
    grid.check(clip)
    for f in range(clip.frames):
        for m in range(grid.n_mbs):
            my, mx = divmod(m, grid.grid_cols)
            for s in range(grid.sbs_per_mb):
                sy, sx = divmod(s, grid.sb_cols)
                y0 = my * grid.mb_h + sy * grid.sb_h
                x0 = mx * grid.mb_w + sx * grid.sb_w
                yield f, m, s, (slice(y0, y0 + grid.sb_h), slice(x0, x0 + grid.sb_w))


def to_blocks(frames: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Reshape ``(F, H, W, C)`` into ``(F, n_mbs, sbs_per_mb, sb_h, sb_w, C)``."""
    f, h, w, c = frames.shape
    if (h, w) != (grid.height, grid.width):
        raise DimensionError(f"frame {h}x{w} does not match grid {grid.height}x{grid.width}")
    a = frames.reshape(f, grid.grid_rows, grid.sb_rows, grid.sb_h,
                       grid.grid_cols, grid.sb_cols, grid.sb_w, c)
    # (F, gr, gc, sr, sc, sh, sw, C)
    a = a.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return a.reshape(f, grid.n_mbs, grid.sbs_per_mb, grid.sb_h, grid.sb_w, c)


def from_blocks(blocks: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Inverse of :func:`to_blocks`."""
    f, c = blocks.shape[0], blocks.shape[-1]
    a = blocks.reshape(f, grid.grid_rows, grid.grid_cols, grid.sb_rows, grid.sb_cols,
                       grid.sb_h, grid.sb_w, c)
    a = a.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return np.ascontiguousarray(a.reshape(f, grid.height, grid.width, c))


# -- resampling ---------------------------------------------------------------

def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense ``(n_out, n_in)`` interpolation matrix with edge clamping."""
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64)
    m = np.zeros((n_out, n_in))
    for k in range(-1, 3):
        idx = base + k
        wts = _cubic(centers - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wts)
    return m


def resize_bicubic(clip: Clip, out_h: int, out_w: int) -> Clip:
    """Separable Catmull-Rom resize (a = -0.5), half-pixel centres, clamped edges."""
    if out_h < 1 or out_w < 1:
        raise DimensionError("output size must be positive")
    if (out_h, out_w) == (clip.height, clip.width):
        return clip
    ry = _bicubic_matrix(clip.height, out_h)
    rx = _bicubic_matrix(clip.width, out_w)
    x = clip.data.astype(np.float64)
    y = np.einsum("oh,fhwc->fowc", ry, x)
    y = np.einsum("pw,fowc->fopc", rx, y)
    return Clip(np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8))


def sample_frames_uniform(clip: Clip, n: int) -> Clip:
    if n < 1 or clip.frames < 1:
        raise DimensionError("need at least one input and one output frame")
    idx = [i * clip.frames // n for i in range(n)]
    return Clip(clip.data[idx])


# -- containers ---------------------------------------------------------------

_CFVR_MAGIC = b"CFVR"
_CFVR_HEADER = struct.Struct("<4sIII")


def write_cfvr(clip: Clip, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CFVR_HEADER.pack(_CFVR_MAGIC, clip.width, clip.height, clip.frames))
        fh.write(clip.data.tobytes())


def read_cfvr(path) -> Clip:
    raw = Path(path).read_bytes()
    if len(raw) < _CFVR_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, w, h, n = _CFVR_HEADER.unpack_from(raw)
    if magic != _CFVR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = n * h * w * 3
    body = raw[_CFVR_HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} sample bytes, found {len(body)}")
    return Clip(np.frombuffer(body, dtype=np.uint8).reshape(n, h, w, 3).copy())


def write_ppm_sequence(clip: Clip, directory, prefix: str = "frame") -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    digits = max(6, len(str(clip.frames)))
    paths = []
    for i, frame in enumerate(clip.data):
        p = out / f"{prefix}_{i:0{digits}d}.ppm"
        p.write_bytes(b"P6\n%d %d\n255\n" % (clip.width, clip.height) + frame.tobytes())
        paths.append(p)
    return paths


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace before raster
    if fields[0] != b"P6":
        raise FormatError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    body = raw[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def read_ppm_sequence(directory, pattern: str = "*.ppm") -> Clip:
    paths = sorted(Path(directory).glob(pattern))
    if not paths:
        raise FormatError(f"no PPM files matching {pattern!r} in {directory}")
    frames = [_read_ppm(p) for p in paths]
    if len({f.shape for f in frames}) != 1:
        raise FormatError(f"{directory}: frames differ in size")
    return Clip(np.stack(frames))


def mb_coords(grid: BlockGrid, m: int) -> tuple[int, int]:
    return divmod(m, grid.grid_cols)
