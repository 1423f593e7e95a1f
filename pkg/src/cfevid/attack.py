"""Ciphertext-only reassembly attack: greedy jigsaw solving over MBs.

The attacker cuts a ciphertext frame into MBs and tries to put them back in
their original layout using only border compatibility.  SB-level transforms
are never inverted and stay unknown; only the MB permutation is attacked.
Which SB edges face each other across an MB border is learned from the
ciphertext itself, which works when all MBs share one transform (V1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BlockGrid, Clip, DimensionError
from .keyschedule import CHANNEL_PERMS

def pairwise_cost(block_a: np.ndarray, block_b: np.ndarray, side: str) -> float:
    """SSD between the 1-pixel borders of ``a`` and ``b`` when ``b`` sits on ``side`` of ``a``."""
    a = np.asarray(block_a, dtype=np.float64)
    b = np.asarray(block_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"block shapes differ: {a.shape} vs {b.shape}")
    if side == "right":
        d = a[:, -1] - b[:, 0]
    elif side == "left":
        d = a[:, 0] - b[:, -1]
    elif side == "bottom":
        d = a[-1] - b[0]
    elif side == "top":
        d = a[0] - b[-1]
    else:
        raise ValueError(f"unknown side {side!r}")
    return float((d * d).sum())


def cost_matrices(blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(right, bottom)`` where ``right[i, j]`` is the cost of ``j`` right of ``i``.

    Diagonals are set to ``inf``.
    """
    b = np.asarray(blocks, dtype=np.float64)
    n = len(b)
    flat = lambda e: e.reshape(n, -1)  # noqa: E731

    def ssd(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        uu = (u * u).sum(1)[:, None]
        vv = (v * v).sum(1)[None, :]
        return np.maximum(uu + vv - 2.0 * (u @ v.T), 0.0)

    right = ssd(flat(b[:, :, -1]), flat(b[:, :, 0]))
    bottom = ssd(flat(b[:, -1]), flat(b[:, 0]))
    np.fill_diagonal(right, np.inf)
    np.fill_diagonal(bottom, np.inf)
    return right, bottom


def normalized_costs(cost: np.ndarray) -> np.ndarray:
    """Divide each cost by the runner-up cost of either participant.

    A pair scores well only when it is clearly better than the alternatives
    on both sides, which keeps flat or repetitive regions from attracting
    matches.
    """
    row = np.sort(cost, axis=1)[:, 1:2]
    col = np.sort(cost, axis=0)[1:2, :]
    return cost / (np.minimum(row, col) + 1e-9)


def greedy_assemble(blocks: np.ndarray, grid_dims: tuple[int, int]) -> np.ndarray:
    """Place ``blocks`` on a ``rows x cols`` board; returns ``(rows, cols)`` block indices.

    Uses raw 1-pixel border costs; see :func:`assemble_from_costs`.
    """
    rows, cols = grid_dims
    if len(blocks) != rows * cols:
        raise DimensionError(f"{len(blocks)} blocks cannot fill a {rows}x{cols} board")
    return assemble_from_costs(*cost_matrices(blocks), grid_dims)


def assemble_from_costs(right: np.ndarray, bottom: np.ndarray,
                        grid_dims: tuple[int, int]) -> np.ndarray:
    """Greedy placement from pairwise costs (``right[i, j]``: ``j`` right of ``i``).

    Costs are normalised with :func:`normalized_costs`.  The solver starts
    from the globally cheapest adjacent pair, then repeatedly fills the open
    cell/block combination with the lowest summed cost to its placed
    neighbours divided by their count squared (cells closing more borders go
    first), never letting the layout outgrow the board.  Ties break on block
    index, then cell position.
    """
    rows, cols = grid_dims
    n = len(right)
    if n != rows * cols or right.shape != (n, n) or bottom.shape != (n, n):
        raise DimensionError(f"{n} blocks cannot fill a {rows}x{cols} board")
    if n == 1:
        return np.zeros((1, 1), dtype=np.int64)
    right, bottom = normalized_costs(right), normalized_costs(bottom)

    # canvas large enough for any placement order; origin in the middle
    h, w = 2 * rows + 1, 2 * cols + 1
    canvas = np.full((h, w), -1, dtype=np.int64)
    cy, cx = rows, cols

    # seed: cheapest pair, horizontal before vertical on ties, then lowest indices
    i_r, j_r = np.unravel_index(np.argmin(right), right.shape)
    i_b, j_b = np.unravel_index(np.argmin(bottom), bottom.shape)
    if (right[i_r, j_r], 0, i_r, j_r) <= (bottom[i_b, j_b], 1, i_b, j_b):
        canvas[cy, cx], canvas[cy, cx + 1] = i_r, j_r
    else:
        canvas[cy, cx], canvas[cy + 1, cx] = i_b, j_b
    unplaced = np.ones(n, dtype=bool)
    unplaced[canvas[canvas >= 0]] = False

    while unplaced.any():
        ys, xs = np.nonzero(canvas >= 0)
        y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
        cand = np.flatnonzero(unplaced)
        best = None
        for y in range(max(y1 - rows + 1, 1), min(y0 + rows - 1, h - 2) + 1):
            for x in range(max(x1 - cols + 1, 1), min(x0 + cols - 1, w - 2) + 1):
                if canvas[y, x] >= 0:
                    continue
                total = np.zeros(len(cand))
                k = 0
                if canvas[y, x - 1] >= 0:
                    total += right[canvas[y, x - 1], cand]
                    k += 1
                if canvas[y, x + 1] >= 0:
                    total += right[cand, canvas[y, x + 1]]
                    k += 1
                if canvas[y - 1, x] >= 0:
                    total += bottom[canvas[y - 1, x], cand]
                    k += 1
                if canvas[y + 1, x] >= 0:
                    total += bottom[cand, canvas[y + 1, x]]
                    k += 1
                if k == 0:
                    continue
                score = total / (k * k)
                j = int(np.argmin(score))  # first minimum = lowest block index
                key = (score[j], cand[j], y, x)
                if best is None or key < best:
                    best = key
        _, blk, y, x = best
        canvas[y, x] = blk
        unplaced[blk] = False

    ys, xs = np.nonzero(canvas >= 0)
    return canvas[ys.min():ys.min() + rows, xs.min():xs.min() + cols].copy()


# -- edge relations -----------------------------------------------------------------
#
# Under a V1 key every MB goes through the same SB transforms, so the pixel line
# that faced the right neighbour in the plaintext lands on the same SB edge of
# every ciphertext MB, possibly reversed, complemented and channel-permuted.
# The attacker does not know where; it searches all pairs of SB edges and all
# such maps for the pairing whose best matches are most distinctive.  With
# per-MB keys (V2) no single pairing exists and the search finds nothing useful.

@dataclass(frozen=True)
class EdgeRelation:
    """``map(segment src of block i)`` should match ``segment dst of block j``."""

    src: int
    dst: int
    rev: bool = False
    sign: int = 1
    perm: tuple[int, int, int] = (0, 1, 2)

    def apply(self, seg: np.ndarray) -> np.ndarray:
        """Map segments ``(..., L, 3)``."""
        out = seg[..., ::-1, :] if self.rev else seg
        return self.sign * out[..., list(self.perm)]

    def costs(self, segs: np.ndarray) -> np.ndarray:
        """``(n, n)`` SSD matrix for segments ``(n, E, ..., L, 3)``; diagonal is ``inf``.

        Extra axes (e.g. frames) are summed over.
        """
        a = self.apply(segs[:, self.src]).reshape(len(segs), -1)
        b = segs[:, self.dst].reshape(len(segs), -1)
        c = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
        c = np.maximum(c, 0.0)
        np.fill_diagonal(c, np.inf)
        return c


def sb_edges(blocks: np.ndarray, sb: int) -> np.ndarray:
    """``(n, E, sb, 3)`` edge lines of every SB, centred on zero.

    Per SB (row-major) the order is top, right, bottom, left; rows run left to
    right and columns top to bottom.
    """
    b = np.asarray(blocks, dtype=np.float64) - 127.5
    _, h, w, _ = b.shape
    if h % sb or w % sb:
        raise DimensionError(f"MB {h}x{w} not divisible by SB {sb}")
    segs = []
    for y in range(0, h, sb):
        for x in range(0, w, sb):
            s = b[:, y:y + sb, x:x + sb]
            segs += [s[:, 0], s[:, :, -1], s[:, -1], s[:, :, 0]]
    return np.stack(segs, axis=1)


def _distinctiveness(c: np.ndarray) -> np.ndarray:
    """Median over blocks of best/second-best cost; ``c`` is ``(n, E, n, E)``."""
    two = np.partition(c, 1, axis=2)
    ratio = two[:, :, 0] / (two[:, :, 1] + 1e-9)  # (n, E, E)
    return np.median(ratio, axis=0)


def learn_relations(segs: np.ndarray) -> tuple[list[EdgeRelation], list[EdgeRelation]]:
    """Find edge pairings for two board axes from segments ``(F, n, E, L, 3)``.

    Returns ``(axis_a, axis_b)``: each a list of one or two relations whose
    cost matrices are summed.  Which axis is horizontal, and which way each
    runs, cannot be told from the ciphertext; the board comes out right up to
    a global symmetry.
    """
    n, e = segs.shape[1:3]
    feats = segs.transpose(1, 2, 0, 3, 4)  # (n, E, F, L, 3)
    b = feats.reshape(n * e, -1)
    nb = (b * b).sum(1).reshape(n, e)
    idx = np.arange(n)
    cand = []
    for rev in (False, True):
        for perm in CHANNEL_PERMS:
            m = feats[:, :, :, ::-1] if rev else feats
            a = m[..., list(perm)].reshape(n * e, -1)
            cross = (a @ b.T).reshape(n, e, n, e)
            for sign in (1, -1):
                c = np.maximum(nb[:, :, None, None] + nb[None, None] - 2.0 * sign * cross, 0.0)
                c[idx, :, idx, :] = np.inf
                d = _distinctiveness(c)
                for s in range(e):
                    for t in range(e):
                        cand.append((d[s, t], s, t, rev, sign, perm))
    cand.sort(key=lambda r: (r[0], r[1], r[2], r[3], -r[4], r[5]))
    top = [EdgeRelation(s, t, rev, sign, perm) for _, s, t, rev, sign, perm in cand[:64]]
    pairs = [np.argmin(r.costs(feats), axis=1) for r in top]

    def agree(p, q):
        return float(np.mean(p == q))

    def mirrored(p, q):
        # q is the reverse relation of p when q[p[i]] == i for most i
        return float(np.mean(q[p] == idx))

    def partner(k0, exclude):
        for k, r in enumerate(top):
            if k in exclude or r.src == top[k0].src or r.dst == top[k0].dst:
                continue
            if agree(pairs[k], pairs[k0]) >= 0.5:
                return k
        return None

    first = 0
    axis_a = [first]
    k = partner(first, {first})
    if k is not None:
        axis_a.append(k)
    second = None
    for k in range(len(top)):
        if k in axis_a:
            continue
        if max(agree(pairs[k], pairs[first]), mirrored(pairs[first], pairs[k])) < 0.2:
            second = k
            break
    axis_b = []
    if second is not None:
        axis_b = [second]
        k = partner(second, set(axis_a) | {second})
        if k is not None:
            axis_b.append(k)
    return [top[k] for k in axis_a], [top[k] for k in axis_b]


def relation_costs(segs: np.ndarray, relations: list[EdgeRelation]) -> np.ndarray | None:
    if not relations:
        return None
    return sum(r.costs(segs) for r in relations)




def frame_blocks(frame: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """``(n_mbs, mb_h, mb_w, 3)`` MBs of one frame in row-major order."""
    f = np.asarray(frame)
    a = f.reshape(grid.grid_rows, grid.mb_h, grid.grid_cols, grid.mb_w, -1)
    return a.transpose(0, 2, 1, 3, 4).reshape(grid.n_mbs, grid.mb_h, grid.mb_w, -1)


def place_blocks(blocks: np.ndarray, placement: np.ndarray, grid: BlockGrid) -> np.ndarray:
    chosen = blocks[placement.ravel()]
    a = chosen.reshape(grid.grid_rows, grid.grid_cols, grid.mb_h, grid.mb_w, -1)
    return a.transpose(0, 2, 1, 3, 4).reshape(grid.height, grid.width, -1)


def neighbor_accuracy(labels: np.ndarray) -> float:
    """Fraction of adjacent cell pairs holding blocks that were adjacent the same way.

    ``labels[r, c]`` is the original row-major index of the block at cell ``(r, c)``.
    """
    lab = np.asarray(labels)
    rows, cols = lab.shape
    pairs = rows * (cols - 1) + (rows - 1) * cols
    if pairs == 0:
        return 1.0
    a, b = lab[:, :-1], lab[:, 1:]
    hits = np.count_nonzero((b == a + 1) & (a % cols != cols - 1))
    a, b = lab[:-1], lab[1:]
    hits += np.count_nonzero(b == a + cols)
    return hits / pairs


def chance_level(rows: int, cols: int) -> float:
    """Expected :func:`neighbor_accuracy` of a uniformly random placement."""
    n = rows * cols
    h, v = rows * (cols - 1), (rows - 1) * cols
    if n < 2 or h + v == 0:
        return 1.0
    return (h * h + v * v) / (n * (n - 1) * (h + v))


def identify_blocks(original: np.ndarray, reconstructed: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Label each reconstructed MB with the index of the closest original MB (by MSE)."""
    ob = frame_blocks(original, grid).reshape(grid.n_mbs, -1).astype(np.float64)
    rb = frame_blocks(reconstructed, grid).reshape(grid.n_mbs, -1).astype(np.float64)
    d = (rb * rb).sum(1)[:, None] + (ob * ob).sum(1)[None, :] - 2.0 * rb @ ob.T
    return np.argmin(d, axis=1).reshape(grid.grid_rows, grid.grid_cols)


def attack_score(original: Clip, reconstructed: Clip, grid: BlockGrid) -> float:
    """Mean per-frame neighbour accuracy of ``reconstructed`` against ``original``.

    MBs are identified by nearest content, so this suits reconstructions made
    of untransformed MBs.  For ciphertext reconstructions use
    :func:`neighbor_accuracy` on labels derived from the key.
    """
    if original.shape != reconstructed.shape:
        raise DimensionError("clips differ in shape")
    grid.check(original)
    return float(np.mean([neighbor_accuracy(identify_blocks(o, r, grid))
                          for o, r in zip(original.data, reconstructed.data)]))


def board_symmetries(labels: np.ndarray) -> list[np.ndarray]:
    """All rigid motions of a board that keep its shape (8 if square, else 4)."""
    lab = np.asarray(labels)
    out = [lab, lab[:, ::-1], lab[::-1], lab[::-1, ::-1]]
    if lab.shape[0] == lab.shape[1]:
        t = lab.T
        out += [t, t[:, ::-1], t[::-1], t[::-1, ::-1]]
    return out


@dataclass(frozen=True)
class AttackResult:
    placements: np.ndarray  # (frames, rows, cols) ciphertext MB index per cell
    reconstructed: Clip
    relations: tuple = ()  # learned (axis_a, axis_b) edge relations, if any

    def labels(self, mb_perm) -> np.ndarray:
        """Map placements to plaintext MB indices given the true MB permutation."""
        inv = np.argsort(np.asarray(mb_perm))
        return inv[self.placements]

    def score(self, mb_perm) -> float:
        """Mean per-frame neighbour accuracy, board taken exactly as placed."""
        return float(np.mean([neighbor_accuracy(l) for l in self.labels(mb_perm)]))

    def aligned_score(self, mb_perm) -> float:
        """:meth:`score` after the one global board symmetry that fits best.

        A ciphertext-only attacker cannot tell up from down or left from right
        when every MB went through the same unknown transform, so a
        reconstruction is judged up to one rigid motion shared by all frames.
        """
        labels = self.labels(mb_perm)
        per_sym = np.array([[neighbor_accuracy(v) for v in board_symmetries(l)] for l in labels])
        return float(per_sym.mean(axis=0).max())


def attack_clip(clip: Clip, grid: BlockGrid, frames=None, learn: bool = True) -> AttackResult:
    """Reassemble every frame (or the selected ``frames``) with the greedy solver.

    With ``learn`` the border pairing is learned from all selected frames
    (see :func:`learn_relations`); otherwise raw 1-pixel borders are compared.
    """
    grid.check(clip)
    idx = list(range(clip.frames) if frames is None else frames)
    dims = (grid.grid_rows, grid.grid_cols)
    blocks = [frame_blocks(clip.data[f], grid) for f in idx]
    relations: tuple = ()
    if learn and grid.sb_h == grid.sb_w and grid.n_mbs > 2:
        segs = np.stack([sb_edges(b, grid.sb_h) for b in blocks])
        relations = learn_relations(segs)
    placements, out = [], []
    for k, b in enumerate(blocks):
        if relations:
            ca = relation_costs(segs[k], relations[0])
            cb = relation_costs(segs[k], relations[1])
            p = assemble_from_costs(ca, ca if cb is None else cb, dims)
        else:
            p = greedy_assemble(b, dims)
        placements.append(p)
        out.append(place_blocks(b, p, grid))
    return AttackResult(np.stack(placements), Clip(np.stack(out).astype(np.uint8)), relations)
