"""Block-wise compression-friendly encryption and a pixel-shuffle baseline.

Per frame, every SB of every MB is rotated, flipped, complemented and has its
channels permuted, the SBs of each MB are then permuted, and finally the MBs
are permuted across the frame.  The same plan is used for every frame.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .geometry import BlockGrid, Clip, DimensionError, from_blocks, to_blocks
from .keyschedule import Flip, Mode, SbParams, SplitMix64, TransformPlan, fisher_yates, invert_perm

__all__ = [
    "transform_sb",
    "apply_sb_transform",
    "encrypt",
    "decrypt",
    "pixel_shuffle",
    "pixel_unshuffle",
    "shuffle_permutation",
]


def _complement_u8(a: np.ndarray) -> np.ndarray:
    return 255 - a


def apply_sb_transform(block: np.ndarray, p: SbParams, inverse: bool = False,
                       negate: Callable[[np.ndarray], np.ndarray] = _complement_u8) -> np.ndarray:
    """Apply ``p`` to the last three axes ``(h, w, channel)`` of ``block``.

    Leading axes are batch axes.  ``negate`` implements the sign inversion for
    the sample domain at hand (``255 - x`` for pixels, ``-x`` for weights).
    Forward order is rotate, flip, invert, permute channels.
    """
    k = p.rotation // 90
    if k % 2 and block.shape[-3] != block.shape[-2]:
        raise ValueError("quarter-turn rotation needs a square sub-block")
    hw = (-3, -2)
    if not inverse:
        out = np.rot90(block, k, axes=hw) if k else block
        if p.flip is Flip.HORIZONTAL:
            out = out[..., :, ::-1, :]
        elif p.flip is Flip.VERTICAL:
            out = out[..., ::-1, :, :]
        if p.invert:
            out = negate(out)
        return out[..., list(p.channel_perm)]
    out = block[..., list(invert_perm(p.channel_perm))]
    if p.invert:
        out = negate(out)
    if p.flip is Flip.HORIZONTAL:
        out = out[..., :, ::-1, :]
    elif p.flip is Flip.VERTICAL:
        out = out[..., ::-1, :, :]
    return np.rot90(out, -k, axes=hw) if k else out


def transform_sb(region: np.ndarray, p: SbParams, direction: str = "forward") -> np.ndarray:
    if direction not in ("forward", "inverse"):
        raise ValueError(f"unknown direction {direction!r}")
    if region.dtype != np.uint8:
        raise TypeError("pixel sub-blocks must be uint8")
    return np.ascontiguousarray(apply_sb_transform(region, p, direction == "inverse"))


def _check(clip: Clip, plan: TransformPlan) -> None:
    try:
        plan.grid.check(clip)
    except DimensionError as exc:
        raise DimensionError(f"plan/clip mismatch: {exc}") from None


def _mb_sets(plan: TransformPlan):
    """Yield ``(mb_indices, params, sb_perm)`` groups sharing the same keys."""
    if plan.mode is Mode.V1:
        yield slice(None), plan.sb_params[0], plan.sb_perms[0]
    else:
        for m in range(plan.grid.n_mbs):
            yield m, plan.sb_params[m], plan.sb_perms[m]


def encrypt(clip: Clip, plan: TransformPlan) -> Clip:
    _check(clip, plan)
    grid = plan.grid
    blocks = to_blocks(clip.data, grid)
    out = np.empty_like(blocks)
    for mbs, params, perm in _mb_sets(plan):
        for s, p in enumerate(params):
            out[:, mbs, perm[s]] = apply_sb_transform(blocks[:, mbs, s], p)
    scrambled = np.empty_like(out)
    scrambled[:, list(plan.mb_perm)] = out
    return Clip(from_blocks(scrambled, grid))


def decrypt(clip: Clip, plan: TransformPlan) -> Clip:
    _check(clip, plan)
    grid = plan.grid
    blocks = to_blocks(clip.data, grid)
    blocks = blocks[:, list(plan.mb_perm)]
    out = np.empty_like(blocks)
    for mbs, params, perm in _mb_sets(plan):
        for s, p in enumerate(params):
            out[:, mbs, s] = apply_sb_transform(blocks[:, mbs, perm[s]], p, inverse=True)
    return Clip(from_blocks(out, grid))


# -- pixel-shuffle baseline -----------------------------------------------------

def shuffle_permutation(seed: int, n_pixels: int) -> np.ndarray:
    """Destination index of every flattened pixel position."""
    return np.asarray(fisher_yates(SplitMix64(seed), n_pixels), dtype=np.int64)


def pixel_shuffle(clip: Clip, seed: int) -> Clip:
    """Frame-wide pixel permutation, channels moving together, same for all frames."""
    f, h, w, _ = clip.shape
    perm = shuffle_permutation(seed, h * w)
    flat = clip.data.reshape(f, h * w, 3)
    out = np.empty_like(flat)
    out[:, perm] = flat
    return Clip(out.reshape(f, h, w, 3))


def pixel_unshuffle(clip: Clip, seed: int) -> Clip:
    f, h, w, _ = clip.shape
    perm = shuffle_permutation(seed, h * w)
    flat = clip.data.reshape(f, h * w, 3)
    return Clip(flat[:, perm].reshape(f, h, w, 3))


def grid_for(clip: Clip, mb: int = 16, sb: int = 8) -> BlockGrid:
    return BlockGrid.for_frame(clip.height, clip.width, mb, sb)
