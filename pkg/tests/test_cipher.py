import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfevid.cipher import (decrypt, encrypt, grid_for, pixel_shuffle, pixel_unshuffle,
                           shuffle_permutation, transform_sb)
from cfevid.geometry import BlockGrid, Clip, DimensionError, to_blocks
from cfevid.keyschedule import CHANNEL_PERMS, Flip, KeyMaterial, Mode, SbParams, TransformPlan, expand
from conftest import clips, random_clip, seeds64
from oracles import encrypt_frame_replay, transform_pixels

sb_params = st.builds(SbParams, st.sampled_from([0, 90, 180, 270]), st.sampled_from(list(Flip)),
                      st.booleans(), st.sampled_from(CHANNEL_PERMS))


@given(sb_params, st.integers(0, 2**32 - 1))
def test_transform_sb_matches_pixel_oracle(p, seed):
    block = np.random.default_rng(seed).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    got = transform_sb(block, p)
    ref = transform_pixels(block.astype(int).tolist(), p.rotation, int(p.flip), p.invert,
                           p.channel_perm)
    assert got.tolist() == ref


@given(sb_params, st.integers(0, 2**32 - 1))
def test_transform_sb_inverse(p, seed):
    block = np.random.default_rng(seed).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    assert np.array_equal(transform_sb(transform_sb(block, p), p, "inverse"), block)


def test_transform_sb_examples():
    block = np.zeros((8, 8, 3), np.uint8)
    block[0, 0] = (10, 20, 30)
    r90 = transform_sb(block, SbParams(rotation=90))
    assert tuple(r90[7, 0]) == (10, 20, 30)  # counter-clockwise: top-left goes bottom-left
    r180 = transform_sb(block, SbParams(rotation=180))
    assert tuple(r180[7, 7]) == (10, 20, 30)
    h = transform_sb(block, SbParams(flip=Flip.HORIZONTAL))
    assert tuple(h[0, 7]) == (10, 20, 30)
    v = transform_sb(block, SbParams(flip=Flip.VERTICAL))
    assert tuple(v[7, 0]) == (10, 20, 30)
    inv = transform_sb(block, SbParams(invert=True))
    assert tuple(inv[0, 0]) == (245, 235, 225) and inv[1, 1, 0] == 255
    cp = transform_sb(block, SbParams(channel_perm=(2, 0, 1)))
    assert tuple(cp[0, 0]) == (30, 10, 20)


def test_transform_sb_rejects():
    with pytest.raises(ValueError):
        transform_sb(np.zeros((8, 8, 3), np.uint8), SbParams(), "sideways")
    with pytest.raises(TypeError):
        transform_sb(np.zeros((8, 8, 3), np.float32), SbParams())
    with pytest.raises(ValueError):
        transform_sb(np.zeros((8, 4, 3), np.uint8), SbParams(rotation=90))


@given(clips(max_frames=2), seeds64, seeds64, st.sampled_from(["V1", "V2"]))
def test_encrypt_matches_region_replay(clip, k_st, k_ms, mode):
    plan = expand(KeyMaterial(Mode(mode), k_st, k_ms), grid_for(clip))
    enc = encrypt(clip, plan)
    d = plan.as_dict()
    for f in range(clip.frames):
        assert np.array_equal(enc.data[f], encrypt_frame_replay(clip.data[f], d, 16, 8))


@given(clips(), seeds64, seeds64, st.sampled_from(["V1", "V2"]))
def test_roundtrip(clip, k_st, k_ms, mode):
    plan = expand(KeyMaterial(Mode(mode), k_st, k_ms), grid_for(clip))
    assert decrypt(encrypt(clip, plan), plan) == clip


def test_identity_plan_is_identity():
    clip = random_clip(np.random.default_rng(0), 2, 32, 48)
    plan = TransformPlan.identity(grid_for(clip))
    assert encrypt(clip, plan) == clip


def test_every_frame_uses_the_same_plan():
    frame = np.random.default_rng(1).integers(0, 256, (1, 32, 32, 3), dtype=np.uint8)
    clip = Clip(np.repeat(frame, 3, axis=0))
    enc = encrypt(clip, expand(KeyMaterial(Mode.V2, 5, 6), grid_for(clip)))
    assert np.array_equal(enc.data[0], enc.data[1]) and np.array_equal(enc.data[1], enc.data[2])


def test_v1_transforms_every_mb_alike():
    # identical MBs encrypt to identical MBs under V1 but not under V2
    mb = np.random.default_rng(2).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    clip = Clip(np.tile(mb, (1, 4, 4, 1)))
    grid = grid_for(clip)
    b1 = to_blocks(encrypt(clip, expand(KeyMaterial(Mode.V1, 3, 4), grid)).data, grid)[0]
    assert all(np.array_equal(b1[0], b1[m]) for m in range(grid.n_mbs))
    b2 = to_blocks(encrypt(clip, expand(KeyMaterial(Mode.V2, 3, 4), grid)).data, grid)[0]
    assert not all(np.array_equal(b2[0], b2[m]) for m in range(grid.n_mbs))


def test_encrypt_preserves_sample_multiset_up_to_inversion():
    clip = random_clip(np.random.default_rng(3), 1, 32, 32)
    plan = expand(KeyMaterial(Mode.V1, 8, 9), grid_for(clip))
    enc = encrypt(clip, plan)
    p = plan.sb_params[0]
    if not any(x.invert for x in p):
        assert sorted(enc.data.ravel()) == sorted(clip.data.ravel())
    assert enc != clip


def test_mismatched_plan_rejected():
    clip = random_clip(np.random.default_rng(4), 1, 32, 32)
    plan = expand(KeyMaterial(Mode.V1, 1, 2), BlockGrid(3, 3))
    with pytest.raises(DimensionError):
        encrypt(clip, plan)
    with pytest.raises(DimensionError):
        decrypt(clip, plan)


@given(clips(), seeds64)
def test_pixel_shuffle_roundtrip(clip, seed):
    assert pixel_unshuffle(pixel_shuffle(clip, seed), seed) == clip


def test_pixel_shuffle_moves_whole_pixels():
    clip = random_clip(np.random.default_rng(5), 2, 16, 16)
    out = pixel_shuffle(clip, 11)
    perm = shuffle_permutation(11, 256)
    flat_in = clip.data.reshape(2, 256, 3)
    flat_out = out.data.reshape(2, 256, 3)
    assert np.array_equal(flat_out[:, perm], flat_in)
    assert sorted(perm.tolist()) == list(range(256))
