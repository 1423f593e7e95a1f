import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfevid.geometry import (BlockGrid, Clip, DimensionError, FormatError, from_blocks,
                             partition, read_cfvr, read_ppm_sequence, resize_bicubic,
                             sample_frames_uniform, to_blocks, write_cfvr, write_ppm_sequence)
from conftest import clips, random_clip
from oracles import bicubic_pixel


def test_partition_64x64_counts():
    clip = Clip(np.zeros((1, 64, 64, 3), np.uint8))
    grid = BlockGrid.for_frame(64, 64, 16, 8)
    regions = list(partition(clip, grid))
    assert grid.n_mbs == 16 and grid.sbs_per_mb == 4
    assert len(regions) == 64
    assert {(m, s) for _, m, s, _ in regions} == {(m, s) for m in range(16) for s in range(4)}


def test_partition_row_major_positions():
    grid = BlockGrid.for_frame(32, 48, 16, 8)
    clip = Clip(np.zeros((1, 32, 48, 3), np.uint8))
    first = {(m, s): r for _, m, s, r in partition(clip, grid)}
    assert first[(1, 0)] == (slice(0, 8), slice(16, 24))  # MB 1 is right of MB 0
    assert first[(3, 3)] == (slice(24, 32), slice(8, 16))  # MB 3 starts row 2; SB 3 bottom-right
    assert first[(0, 1)] == (slice(0, 8), slice(8, 16))


@given(clips())
def test_partition_is_disjoint_cover(clip):
    grid = BlockGrid.for_frame(clip.height, clip.width, 16, 8)
    seen = np.zeros((clip.frames, clip.height, clip.width), np.int64)
    for f, _, _, (ys, xs) in partition(clip, grid):
        seen[f, ys, xs] += 1
    assert np.all(seen == 1)


@given(clips())
def test_blocks_roundtrip(clip):
    grid = BlockGrid.for_frame(clip.height, clip.width, 16, 8)
    b = to_blocks(clip.data, grid)
    assert b.shape == (clip.frames, grid.n_mbs, 4, 8, 8, 3)
    assert np.array_equal(from_blocks(b, grid), clip.data)
    for f, m, s, (ys, xs) in partition(clip, grid):
        assert np.array_equal(b[f, m, s], clip.data[f, ys, xs])


def test_for_frame_rejects_indivisible():
    with pytest.raises(DimensionError, match="resize"):
        BlockGrid.for_frame(224, 200, 16, 8)


def test_mb_not_divisible_by_sb():
    with pytest.raises(DimensionError):
        BlockGrid(1, 1, 16, 16, 6, 6)


def test_resize_224_to_16_multiple():
    rng = np.random.default_rng(0)
    clip = random_clip(rng, 1, 50, 70)
    out = resize_bicubic(clip, 48, 64)
    assert out.shape == (1, 48, 64, 3)
    BlockGrid.for_frame(48, 64, 16, 8)


def test_resize_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    img = random_clip(rng, 1, 13, 11)
    out = resize_bicubic(img, 16, 16).data[0]
    for oy in range(16):
        for ox in range(16):
            for ch in range(3):
                ref = bicubic_pixel(img.data[0], oy, ox, 16, 16, ch)
                assert abs(int(out[oy, ox, ch]) - ref) <= 1


def test_resize_downscale_matches_oracle():
    rng = np.random.default_rng(2)
    img = random_clip(rng, 1, 40, 24)
    out = resize_bicubic(img, 16, 16).data[0]
    ref = np.array([[[bicubic_pixel(img.data[0], y, x, 16, 16, c) for c in range(3)]
                     for x in range(16)] for y in range(16)])
    assert np.max(np.abs(out.astype(int) - ref)) <= 1


def test_resize_identity_and_constant():
    clip = Clip(np.full((2, 20, 30, 3), 77, np.uint8))
    assert resize_bicubic(clip, 20, 30) == clip
    assert np.all(resize_bicubic(clip, 32, 48).data == 77)


def test_sample_frames_uniform():
    clip = Clip(np.arange(10, dtype=np.uint8)[:, None, None, None] * np.ones((1, 2, 2, 3), np.uint8))
    picked = sample_frames_uniform(clip, 4).data[:, 0, 0, 0]
    assert picked.tolist() == [0, 2, 5, 7]
    assert sample_frames_uniform(clip, 10) == clip


def test_clip_is_read_only():
    clip = Clip(np.zeros((1, 16, 16, 3), np.uint8))
    with pytest.raises(ValueError):
        clip.data[0, 0, 0, 0] = 1


@pytest.mark.parametrize("bad", [np.zeros((1, 16, 16), np.uint8), np.zeros((1, 16, 16, 3), np.float32),
                                 np.zeros((1, 16, 16, 4), np.uint8)])
def test_clip_rejects_bad_arrays(bad):
    with pytest.raises((ValueError, TypeError)):
        Clip(bad)


@given(clips(max_frames=2))
def test_cfvr_roundtrip(tmp_path_factory, clip):
    p = tmp_path_factory.mktemp("cfvr") / "c.cfvr"
    write_cfvr(clip, p)
    assert read_cfvr(p) == clip


def test_cfvr_errors(tmp_path):
    p = tmp_path / "x.cfvr"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(FormatError, match="magic"):
        read_cfvr(p)
    write_cfvr(Clip(np.zeros((2, 16, 16, 3), np.uint8)), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError, match="expected"):
        read_cfvr(p)
    p.write_bytes(b"CF")
    with pytest.raises(FormatError, match="truncated"):
        read_cfvr(p)


def test_ppm_roundtrip_with_comments(tmp_path):
    clip = random_clip(np.random.default_rng(3), 3, 16, 24)
    paths = write_ppm_sequence(clip, tmp_path)
    assert [p.name for p in paths] == ["frame_000000.ppm", "frame_000001.ppm", "frame_000002.ppm"]
    raw = paths[0].read_bytes()
    paths[0].write_bytes(raw.replace(b"P6\n", b"P6\n# made by hand\n", 1))
    assert read_ppm_sequence(tmp_path) == clip


def test_ppm_errors(tmp_path):
    with pytest.raises(FormatError):
        read_ppm_sequence(tmp_path)
    (tmp_path / "a.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(FormatError, match="P6"):
        read_ppm_sequence(tmp_path)
    (tmp_path / "a.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="truncated"):
        read_ppm_sequence(tmp_path)


@given(st.integers(1, 6), st.integers(1, 6))
def test_grid_properties(rows, cols):
    g = BlockGrid(rows, cols)
    assert g.height == 16 * rows and g.width == 16 * cols and g.n_mbs == rows * cols
