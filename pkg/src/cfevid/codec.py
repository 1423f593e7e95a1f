"""Toy intra-frame codec and an adapter for external codecs.

Each RGB channel is coded independently in 8x8 blocks: level shift, orthonormal
DCT-II, division by the scaled JPEG luminance table, round-half-even, zigzag
scan and zero-run symbols ``(run, level)`` closed by an end-of-block symbol
``(0, 0)``.  Stream size is the order-0 entropy of the symbol sequence plus
the header; no entropy coder is run.

``.cfcs`` layout (little-endian)::

    "CFCS" u32 version=1 u32 width u32 height u32 frames u32 quality u32 n_symbols
    n_symbols x (u8 run, i16 level)

Blocks are ordered frame, channel, block row, block column.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
import logging
import os
import shlex
import shutil
import struct
import subprocess
import sys
import tempfile

import numpy as np

from .geometry import Clip, DimensionError, FormatError

log = logging.getLogger(__name__)

BLOCK = 8
LUMA_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

_HEADER = struct.Struct("<4sIIIIII")
_MAGIC = b"CFCS"
_VERSION = 1
SYMBOL_DTYPE = np.dtype([("run", "u1"), ("level", "<i2")])


class StreamError(FormatError):
    """Malformed coded stream; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ExternalCodecUnavailable(RuntimeError):
    """The external codec binary could not be found."""


def quant_table(quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValueError(f"quality {quality} outside 1..100")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.maximum((LUMA_BASE * scale + 50) // 100, 1)


@lru_cache(maxsize=None)
def dct_matrix(n: int = BLOCK) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    c[0] /= np.sqrt(2.0)
    return c


@lru_cache(maxsize=None)
def zigzag_order(n: int = BLOCK) -> np.ndarray:
    """Flat indices of an ``n x n`` block in JPEG zigzag order."""
    cells = sorted(((y, x) for y in range(n) for x in range(n)),
                   key=lambda yx: (yx[0] + yx[1], yx[1] if (yx[0] + yx[1]) % 2 == 0 else yx[0]))
    return np.array([y * n + x for y, x in cells])


def _split_blocks(clip: Clip) -> np.ndarray:
    """``(F, H, W, 3)`` -> ``(F * 3 * by * bx, 8, 8)`` in stream order."""
    f, h, w, _ = clip.shape
    if h % BLOCK or w % BLOCK:
        raise DimensionError(f"{h}x{w} frame not divisible into {BLOCK}x{BLOCK} blocks")
    a = clip.data.transpose(0, 3, 1, 2).reshape(f, 3, h // BLOCK, BLOCK, w // BLOCK, BLOCK)
    return a.transpose(0, 1, 2, 4, 3, 5).reshape(-1, BLOCK, BLOCK)


def _join_blocks(blocks: np.ndarray, frames: int, h: int, w: int) -> np.ndarray:
    a = blocks.reshape(frames, 3, h // BLOCK, w // BLOCK, BLOCK, BLOCK)
    return a.transpose(0, 2, 4, 3, 5, 1).reshape(frames, h, w, 3)


def quantize_blocks(blocks: np.ndarray, quality: int) -> np.ndarray:
    """Quantised DCT coefficients ``(n, 8, 8)`` of ``uint8`` pixel blocks."""
    c = dct_matrix()
    x = blocks.astype(np.float64) - 128.0
    coef = c @ x @ c.T
    return np.rint(coef / quant_table(quality)).astype(np.int64)


def dequantize_blocks(q: np.ndarray, quality: int) -> np.ndarray:
    c = dct_matrix()
    x = c.T @ (q * quant_table(quality)).astype(np.float64) @ c
    return np.clip(np.rint(x + 128.0), 0, 255).astype(np.uint8)


def run_length(zz: np.ndarray) -> np.ndarray:
    """Symbols for zigzag-ordered ``(n, 64)`` coefficients, EOB closing every block."""
    n = zz.shape[0]
    b, i = np.nonzero(zz)
    prev = np.full(b.shape, -1)
    same = b[1:] == b[:-1]
    prev[1:][same] = i[:-1][same]
    blk = np.concatenate([b, np.arange(n)])
    pos = np.concatenate([i, np.full(n, BLOCK * BLOCK)])
    run = np.concatenate([i - prev - 1, np.zeros(n, np.int64)])
    lvl = np.concatenate([zz[b, i], np.zeros(n, np.int64)])
    order = np.lexsort((pos, blk))
    if np.any(np.abs(lvl) > 32767):
        raise OverflowError("coefficient level does not fit the 16-bit symbol field")
    sym = np.empty(len(order), SYMBOL_DTYPE)
    sym["run"] = run[order]
    sym["level"] = lvl[order]
    return sym


def entropy_bits(symbols: np.ndarray) -> float:
    """Order-0 Shannon entropy of the symbol sequence, in bits (total, not per symbol)."""
    if len(symbols) == 0:
        return 0.0
    key = symbols["run"].astype(np.int64) * 65536 + (symbols["level"].astype(np.int64) + 32768)
    _, counts = np.unique(key, return_counts=True)
    n = counts.sum()
    return float(-(counts * np.log2(counts / n)).sum())


@dataclass(frozen=True)
class CodedStream:
    width: int
    height: int
    frames: int
    quality: int
    symbols: np.ndarray

    @property
    def header_bits(self) -> int:
        return 8 * _HEADER.size

    @property
    def bits(self) -> float:
        return entropy_bits(self.symbols) + self.header_bits

    @property
    def bpp(self) -> float:
        return self.bits / (self.frames * self.height * self.width)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(_MAGIC, _VERSION, self.width, self.height, self.frames,
                            self.quality, len(self.symbols))
        return head + self.symbols.astype(SYMBOL_DTYPE).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CodedStream":
        if len(raw) < _HEADER.size:
            raise StreamError("truncated header", len(raw))
        magic, version, w, h, f, q, n = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise StreamError(f"bad magic {magic!r}", 0)
        if version != _VERSION:
            raise StreamError(f"unsupported version {version}", 4)
        if not 1 <= q <= 100:
            raise StreamError(f"quality {q} outside 1..100", 20)
        body = raw[_HEADER.size:]
        if len(body) != n * SYMBOL_DTYPE.itemsize:
            raise StreamError(f"expected {n} symbols, body has {len(body)} bytes", _HEADER.size)
        return cls(w, h, f, q, np.frombuffer(body, SYMBOL_DTYPE).copy())


def encode_intra(clip: Clip, quality: int) -> CodedStream:
    blocks = _split_blocks(clip)
    q = quantize_blocks(blocks, quality)
    zz = q.reshape(len(q), -1)[:, zigzag_order()]
    return CodedStream(clip.width, clip.height, clip.frames, quality, run_length(zz))


def decode_intra(s: CodedStream) -> Clip:
    if s.width % BLOCK or s.height % BLOCK:
        raise StreamError(f"{s.height}x{s.width} not a multiple of {BLOCK}", 8)
    n_blocks = s.frames * 3 * (s.height // BLOCK) * (s.width // BLOCK)
    sym = s.symbols
    run = sym["run"].astype(np.int64)
    lvl = sym["level"].astype(np.int64)
    eob = lvl == 0
    offsets = _HEADER.size + SYMBOL_DTYPE.itemsize * np.arange(len(sym))
    bad_eob = np.nonzero(eob & (run != 0))[0]
    if len(bad_eob):
        raise StreamError("zero level with nonzero run", int(offsets[bad_eob[0]]))
    n_eob = int(eob.sum())
    if n_eob != n_blocks or (len(sym) and not eob[-1]):
        where = int(offsets[-1]) if len(sym) else _HEADER.size
        raise StreamError(f"stream closes {n_eob} blocks, header implies {n_blocks}", where)
    block = np.cumsum(eob) - eob  # block index of every symbol
    step = np.where(eob, 0, run + 1)
    csum = np.cumsum(step)
    start = np.zeros(n_blocks + 1, np.int64)
    np.maximum.at(start, block + 1, csum)
    start = np.maximum.accumulate(start)
    pos = csum - start[block] - 1
    coded = ~eob
    over = np.nonzero(coded & (pos >= BLOCK * BLOCK))[0]
    if len(over):
        raise StreamError("run overflows the 64-coefficient block", int(offsets[over[0]]))
    zz = np.zeros((n_blocks, BLOCK * BLOCK), np.int64)
    zz[block[coded], pos[coded]] = lvl[coded]
    q = np.empty_like(zz)
    q[:, zigzag_order()] = zz
    pixels = dequantize_blocks(q.reshape(-1, BLOCK, BLOCK), s.quality)
    return Clip(_join_blocks(pixels, s.frames, s.height, s.width))


def write_stream(s: CodedStream, path) -> None:
    Path(path).write_bytes(s.to_bytes())


def read_stream(path) -> CodedStream:
    return CodedStream.from_bytes(Path(path).read_bytes())


# -- rate control -----------------------------------------------------------------

@dataclass(frozen=True)
class RateResult:
    quality: int
    bpp: float
    reached: bool  # False when the target lies outside the achievable range


def rate_search(clip: Clip, target_bpp: float, tolerance: float = 0.05) -> RateResult:
    """Quality whose bpp is closest to ``target_bpp`` (bisection over 1..100)."""
    cache: dict[int, float] = {}

    def bpp(q: int) -> float:
        if q not in cache:
            cache[q] = encode_intra(clip, q).bpp
        return cache[q]

    def result(q: int) -> RateResult:
        ok = abs(bpp(q) - target_bpp) <= tolerance * target_bpp
        return RateResult(q, bpp(q), ok)

    if target_bpp >= bpp(100):
        r = result(100)
    elif target_bpp <= bpp(1):
        r = result(1)
    else:
        lo, hi = 1, 100  # bpp(lo) < target < bpp(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if bpp(mid) <= target_bpp:
                lo = mid
            else:
                hi = mid
        best = min((lo, hi), key=lambda q: (abs(bpp(q) - target_bpp), q))
        r = result(best)
    if not r.reached:
        log.warning("target %.3f bpp not reached; nearest is q=%d at %.3f bpp",
                    target_bpp, r.quality, r.bpp)
    return r


# -- external codecs -----------------------------------------------------------------

def to_planar(clip: Clip) -> bytes:
    """Frames as consecutive R, G, B planes of ``height x width`` bytes."""
    return np.ascontiguousarray(clip.data.transpose(0, 3, 1, 2)).tobytes()


def from_planar(raw: bytes, frames: int, height: int, width: int) -> Clip:
    expected = frames * 3 * height * width
    if len(raw) != expected:
        raise FormatError(f"external codec returned {len(raw)} bytes, expected {expected}")
    a = np.frombuffer(raw, np.uint8).reshape(frames, 3, height, width)
    return Clip(a.transpose(0, 2, 3, 1).copy())


@dataclass(frozen=True)
class ExternalResult:
    clip: Clip
    coded_bytes: int
    bpp: float
    argv: tuple[str, ...]


def external_codec(clip: Clip, template: str | list[str], fourcc: str = "RAW ",
                   timeout: float | None = 600) -> ExternalResult:
    """Round-trip ``clip`` through an external command.

    The command receives planar RGB frames (see :func:`to_planar`) on stdin and
    must write the decoded frames in the same layout to stdout.  Placeholders
    ``{width} {height} {frames} {fourcc} {coded}`` are substituted in every
    argument; ``{coded}`` is a scratch path where the tool should leave its
    compressed container, whose size gives the bitrate.  When no container is
    written the raw stdout size is used.
    """
    tokens = shlex.split(template) if isinstance(template, str) else list(template)
    if not tokens:
        raise ValueError("empty codec command")
    with tempfile.TemporaryDirectory(prefix="cfevid-") as tmp:
        coded = os.path.join(tmp, "coded.bin")
        fields = {"width": clip.width, "height": clip.height, "frames": clip.frames,
                  "fourcc": fourcc, "coded": coded}
        argv = [t.format(**fields) for t in tokens]
        exe = shutil.which(argv[0])
        if exe is None:
            raise ExternalCodecUnavailable(f"codec binary {argv[0]!r} not found on PATH")
        proc = subprocess.run([exe, *argv[1:]], input=to_planar(clip), capture_output=True,
                              timeout=timeout, check=False)
        if proc.returncode != 0:
            raise RuntimeError(f"external codec exited with {proc.returncode}: "
                               f"{proc.stderr.decode(errors='replace')[-500:]}")
        out = from_planar(proc.stdout, clip.frames, clip.height, clip.width)
        size = os.path.getsize(coded) if os.path.exists(coded) else len(proc.stdout)
    return ExternalResult(out, size, 8 * size / (clip.frames * clip.height * clip.width),
                          tuple(argv))


def toy_codec_command(quality: int) -> list[str]:
    """External-codec template that runs this module's own codec as a filter."""
    return [sys.executable, "-m", "cfevid.codec", "--width", "{width}", "--height", "{height}",
            "--frames", "{frames}", "--quality", str(quality), "--coded", "{coded}"]


def _filter_main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description="planar-RGB stdin -> toy codec -> planar-RGB stdout")
    ap.add_argument("--width", type=int, required=True)
    ap.add_argument("--height", type=int, required=True)
    ap.add_argument("--frames", type=int, required=True)
    ap.add_argument("--quality", type=int, default=75)
    ap.add_argument("--coded", help="where to write the .cfcs stream")
    a = ap.parse_args(argv)
    clip = from_planar(sys.stdin.buffer.read(), a.frames, a.height, a.width)
    stream = encode_intra(clip, a.quality)
    if a.coded:
        write_stream(stream, a.coded)
    sys.stdout.buffer.write(to_planar(decode_intra(stream)))
    return 0


if __name__ == "__main__":
    raise SystemExit(_filter_main())
