"""Slow, independent reference implementations used only to check the package.

Nothing here imports the code under test except plain data containers.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# -- SplitMix64 replay (numpy uint64 wrap-around arithmetic) -------------------------

class ReplayRng:
    def __init__(self, seed: int):
        self.x = np.uint64(seed % 2**64)

    def next(self) -> int:
        with np.errstate(over="ignore"):
            self.x = self.x + np.uint64(0x9E3779B97F4A7C15)
            z = self.x
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            return int(z ^ (z >> np.uint64(31)))


def replay_shuffle(rng: ReplayRng, n: int) -> list[int]:
    a = list(range(n))
    i = n - 1
    while i > 0:
        j = rng.next() % (i + 1)
        a[i], a[j] = a[j], a[i]
        i -= 1
    return a


PERMS = list(itertools.permutations(range(3)))


def replay_expand(mode: str, k_st: int, k_ms: int, n_mbs: int, sbs: int) -> dict:
    """Key expansion replayed from the documented draw order."""
    st = ReplayRng(k_st)
    sets = 1 if mode == "V1" else n_mbs
    params, perms = [], []
    for _ in range(sets):
        ps = []
        for _ in range(sbs):
            rot = 90 * (st.next() % 4)
            flip = st.next() % 3
            inv = st.next() % 2
            perm = list(PERMS[st.next() % 6])
            ps.append([rot, flip, inv, perm])
        params.append(ps)
        perms.append(replay_shuffle(st, sbs))
    mb = replay_shuffle(ReplayRng(k_ms), n_mbs)
    return {"mode": mode, "sb_params": params, "sb_perms": perms, "mb_perm": mb}


# -- per-pixel SB transform ------------------------------------------------------------

def transform_pixels(block: list, rotation: int, flip: int, invert: bool, perm, neg=lambda v: 255 - v):
    """Transform a nested-list ``n x n x 3`` block one element at a time.

    Rotation is counter-clockwise: ``out[i][j] = in[j][n-1-i]`` per quarter turn.
    Flip 1 mirrors columns, flip 2 mirrors rows.  ``out[..][c] = in[..][perm[c]]``.
    """
    n = len(block)
    cur = [[list(px) for px in row] for row in block]
    for _ in range(rotation // 90):
        cur = [[cur[j][n - 1 - i] for j in range(n)] for i in range(n)]
    if flip == 1:
        cur = [[cur[i][n - 1 - j] for j in range(n)] for i in range(n)]
    elif flip == 2:
        cur = [[cur[n - 1 - i][j] for j in range(n)] for i in range(n)]
    if invert:
        cur = [[[neg(v) for v in px] for px in row] for row in cur]
    return [[[px[perm[c]] for c in range(3)] for px in row] for row in cur]


def encrypt_frame_replay(frame: np.ndarray, plan: dict, mb: int, sb: int) -> np.ndarray:
    """Encrypt one frame region by region from a plan dictionary."""
    h, w, _ = frame.shape
    gc = w // mb
    per = mb // sb
    out = np.zeros_like(frame)
    for m in range(plan_n(plan, h, w, mb)):
        k = 0 if plan["mode"] == "V1" else m
        dst_m = plan["mb_perm"][m]
        sy, sx = divmod(m, gc)
        dy, dx = divmod(dst_m, gc)
        for s in range(per * per):
            rot, flip, inv, perm = plan["sb_params"][k][s]
            ds = plan["sb_perms"][k][s]
            a, b = divmod(s, per)
            c, d = divmod(ds, per)
            src = frame[sy * mb + a * sb:sy * mb + (a + 1) * sb, sx * mb + b * sb:sx * mb + (b + 1) * sb]
            t = transform_pixels(src.astype(int).tolist(), rot, flip, inv, perm)
            out[dy * mb + c * sb:dy * mb + (c + 1) * sb, dx * mb + d * sb:dx * mb + (d + 1) * sb] = t
    return out


def plan_n(plan: dict, h: int, w: int, mb: int) -> int:
    return (h // mb) * (w // mb)


# -- bicubic ----------------------------------------------------------------------------

def keys_cubic(t: float, a: float = -0.5) -> float:
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def bicubic_pixel(img: np.ndarray, oy: int, ox: int, out_h: int, out_w: int, ch: int) -> int:
    h, w = img.shape[:2]
    y = (oy + 0.5) * h / out_h - 0.5
    x = (ox + 0.5) * w / out_w - 0.5
    y0, x0 = math.floor(y), math.floor(x)
    acc = 0.0
    for i in range(y0 - 1, y0 + 3):
        wy = keys_cubic(y - i)
        for j in range(x0 - 1, x0 + 3):
            wx = keys_cubic(x - j)
            acc += wy * wx * float(img[min(max(i, 0), h - 1), min(max(j, 0), w - 1), ch])
    return int(min(max(math.floor(acc + 0.5), 0), 255))


# -- DCT + quantiser --------------------------------------------------------------------

BASE = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
]


def ijg_table(q: int) -> list[list[int]]:
    s = 5000 // q if q < 50 else 200 - 2 * q
    return [[max((v * s + 50) // 100, 1) for v in row] for row in BASE]


def dct_quantize(block: np.ndarray, q: int) -> list[list[int]]:
    """Direct-summation 2-D DCT-II (orthonormal) of one level-shifted 8x8 block."""
    t = ijg_table(q)
    out = []
    for u in range(8):
        row = []
        for v in range(8):
            cu = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
            cv = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
            acc = 0.0
            for y in range(8):
                for x in range(8):
                    acc += (float(block[y, x]) - 128) * math.cos((2 * y + 1) * u * math.pi / 16) \
                        * math.cos((2 * x + 1) * v * math.pi / 16)
            row.append(int(round(cu * cv * acc / t[u][v])))  # round() is half-to-even
        out.append(row)
    return out


def zigzag_cells(n: int = 8) -> list[tuple[int, int]]:
    """Walk the anti-diagonals, alternating direction, starting rightwards."""
    out = []
    for d in range(2 * n - 1):
        cells = [(y, d - y) for y in range(n) if 0 <= d - y < n]
        out += cells if d % 2 else cells[::-1]
    return out


# -- jigsaw -------------------------------------------------------------------------------

def monte_carlo_chance(rows: int, cols: int, trials: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    n = rows * cols
    pairs = rows * (cols - 1) + (rows - 1) * cols
    total = 0
    for _ in range(trials):
        lab = rng.permutation(n).reshape(rows, cols)
        hits = 0
        for r in range(rows):
            for c in range(cols):
                a = lab[r, c]
                if c + 1 < cols and a % cols != cols - 1 and lab[r, c + 1] == a + 1:
                    hits += 1
                if r + 1 < rows and lab[r + 1, c] == a + cols:
                    hits += 1
        total += hits / pairs
    return total / trials
