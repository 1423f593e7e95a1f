"""Key-dependent adaptation of the cube embedding.

With samples normalised as ``v = (2p - 255) / 255`` the SB cipher acts on a
cube as a signed permutation ``P`` (spatial moves, channel moves, sign flips).
Applying the same ``P`` to the embedding kernel gives ``<P E, P x> = <E, x>``,
so tokens are unchanged up to their grid position.  The MB permutation is then
absorbed by moving the positional rows along with the cubes.
"""
from __future__ import annotations

import numpy as np

from .cipher import apply_sb_transform
from .geometry import BlockGrid, DimensionError, from_blocks, to_blocks
from .keyschedule import Mode, TransformPlan
from .vtcore import ModelWeights

__all__ = ["adapt_kernel", "adapt_pos_embed", "adapt_model", "restore_model"]


def _negate(a: np.ndarray) -> np.ndarray:
    return -a


def _check(w: ModelWeights, plan: TransformPlan) -> None:
    cfg, grid = w.config, plan.grid
    if (grid.mb_h, grid.mb_w) != (cfg.mb, cfg.mb):
        raise DimensionError(f"plan MB {grid.mb_h}x{grid.mb_w} != cube size {cfg.mb}")
    if (grid.grid_rows, grid.grid_cols) != (cfg.grid_rows, cfg.grid_cols):
        raise DimensionError(
            f"plan grid {grid.grid_rows}x{grid.grid_cols} != model grid "
            f"{cfg.grid_rows}x{cfg.grid_cols}"
        )


def _transform_kernel(kernel: np.ndarray, plan: TransformPlan, m: int, inverse: bool) -> np.ndarray:
    """Apply MB ``m``'s SB transforms and SB permutation to a ``(D, 3, T, h, w)`` kernel."""
    g = plan.grid
    one_mb = BlockGrid(1, 1, g.mb_h, g.mb_w, g.sb_h, g.sb_w)
    d, c, t, h, w = kernel.shape
    # treat every (output channel, temporal slice) as an RGB image of one MB
    img = kernel.transpose(0, 2, 3, 4, 1).reshape(d * t, h, w, c)
    blocks = to_blocks(img, one_mb)[:, 0]  # (D*T, S, sh, sw, 3)
    params, perm = plan.params_for(m), plan.sb_perm_for(m)
    out = np.empty_like(blocks)
    for s, p in enumerate(params):
        if inverse:
            out[:, s] = apply_sb_transform(blocks[:, perm[s]], p, True, _negate)
        else:
            out[:, perm[s]] = apply_sb_transform(blocks[:, s], p, False, _negate)
    img = from_blocks(out[:, None], one_mb)
    return np.ascontiguousarray(img.reshape(d, t, h, w, c).transpose(0, 4, 1, 2, 3))


def adapt_kernel(w: ModelWeights, plan: TransformPlan) -> np.ndarray:
    """Kernel for encrypted input.

    V1 returns one ``(D, 3, T, mb, mb)`` kernel; V2 returns
    ``(G, D, 3, T, mb, mb)`` where entry ``g`` serves the ciphertext MB at
    grid position ``g``, i.e. plaintext MB ``mb_perm^-1[g]``.
    """
    _check(w, plan)
    kernel = w["embed.kernel"]
    if kernel.ndim != 5:
        raise DimensionError("kernel is already per-position; adapt the plain model")
    if plan.mode is Mode.V1:
        return _transform_kernel(kernel, plan, 0, inverse=False)
    inv = plan.mb_perm_inverse
    return np.stack([_transform_kernel(kernel, plan, inv[g], inverse=False)
                     for g in range(plan.grid.n_mbs)])


def adapt_pos_embed(w: ModelWeights, plan: TransformPlan) -> np.ndarray:
    """Positional rows with row ``(t, g)`` taken from ``(t, mb_perm^-1[g])``."""
    _check(w, plan)
    pos = w["pos"]
    cfg = w.config
    g = cfg.n_positions
    if len(plan.mb_perm) != g:
        raise DimensionError(f"mb_perm length {len(plan.mb_perm)} != {g} grid positions")
    body = pos[1:].reshape(cfg.t_tokens, g, -1)
    body = body[:, list(plan.mb_perm_inverse)]
    return np.concatenate([pos[:1], body.reshape(cfg.n_tokens, -1)], axis=0)


def adapt_model(w: ModelWeights, plan: TransformPlan) -> ModelWeights:
    return w.with_tensors({"embed.kernel": adapt_kernel(w, plan),
                           "pos": adapt_pos_embed(w, plan)})


def restore_model(w: ModelWeights, plan: TransformPlan) -> ModelWeights:
    """Undo :func:`adapt_model`; exact because only moves and negations are involved."""
    _check(w, plan)
    kernel = w["embed.kernel"]
    cfg = w.config
    if kernel.ndim == 6:
        inv = plan.mb_perm_inverse
        per_g = [_transform_kernel(kernel[g], plan, inv[g], inverse=True)
                 for g in range(cfg.n_positions)]
        if any(not np.array_equal(k, per_g[0]) for k in per_g[1:]):
            raise ValueError("per-position kernels do not share a plain kernel under this plan")
        plain_kernel = per_g[0]
    else:
        plain_kernel = _transform_kernel(kernel, plan, 0, inverse=True)
    body = w["pos"][1:].reshape(cfg.t_tokens, cfg.n_positions, -1)
    body = body[:, list(plan.mb_perm)]
    pos = np.concatenate([w["pos"][:1], body.reshape(cfg.n_tokens, -1)], axis=0)
    return w.with_tensors({"embed.kernel": plain_kernel, "pos": pos})
