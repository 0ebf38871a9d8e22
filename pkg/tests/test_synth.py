import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from uvenet import frames as fio
from uvenet import metrics
from uvenet import synth as S


# ---------------------------------------------------------------- depth fill


def test_fill_no_holes_is_identity(rng):
    d = S.DepthMap(rng.uniform(1, 5, (8, 8)))
    out = S.fill_depth(d, rng.random((3, 8, 8)))
    np.testing.assert_array_equal(out.values, d.values)


def test_fill_constant_map_single_hole():
    v = np.full((9, 9), 2.5)
    v[4, 4] = 0
    out = S.fill_depth(S.DepthMap(v), np.full((3, 9, 9), 0.4))
    assert out.values[4, 4] == pytest.approx(2.5)
    assert out.valid.all()


def test_fill_all_invalid_raises():
    with pytest.raises(ValueError):
        S.fill_depth(S.DepthMap(np.zeros((4, 4))), np.zeros((3, 4, 4)))


def test_fill_matches_cross_bilateral_oracle(rng):
    v = rng.uniform(0.5, 10, (20, 20))
    valid = rng.random((20, 20)) >= 0.1
    guide = rng.random((3, 20, 20))
    out = S.fill_depth(S.DepthMap(v, valid), guide, radius=5, sigma_r=0.1)
    expect = oracles.cross_bilateral_fill(v, valid, guide, 5, 2.5, 0.1)
    np.testing.assert_allclose(out.values, expect, rtol=1e-10)


def test_fill_large_hole_uses_coarse_levels(rng):
    v = rng.uniform(1, 3, (32, 32))
    valid = np.ones((32, 32), bool)
    valid[4:28, 4:28] = False
    v[~valid] = 0
    out = S.fill_depth(S.DepthMap(v, valid), rng.random((3, 32, 32)))
    assert out.valid.all() and np.isfinite(out.values).all()
    assert 1 <= out.values.min() and out.values.max() <= 3
    np.testing.assert_array_equal(out.values[valid], v[valid])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.9))
def test_fill_keeps_valid_pixels(seed, frac):
    r = np.random.default_rng(seed)
    v = r.uniform(0.5, 10, (12, 12))
    valid = r.random((12, 12)) >= frac
    valid[0, 0] = True
    out = S.fill_depth(S.DepthMap(v, valid), r.random((3, 12, 12)))
    np.testing.assert_array_equal(out.values[valid], v[valid])
    assert out.valid.all()


# ---------------------------------------------------------------- crop and formation model


def test_center_crop_examples(rng):
    f = rng.random((3, 480, 640))
    out = S.center_crop(f, 460, 620)
    assert out.shape == (3, 460, 620)
    np.testing.assert_array_equal(out, f[:, 10:470, 10:630])
    assert S.center_crop(f, 480, 640) is not None and np.array_equal(S.center_crop(f, 480, 640), f)
    g = np.arange(25).reshape(5, 5)
    np.testing.assert_array_equal(S.center_crop(g, 4, 4), g[:4, :4])
    with pytest.raises(ValueError):
        S.center_crop(g, 6, 4)


def water(beta=(0.5, 0.1, 0.05), bg=(0.3, 0.4, 0.6)):
    return S.WaterParams(beta, bg)


def test_degrade_examples(rng):
    j = rng.random((3, 4, 4))
    np.testing.assert_allclose(S.degrade_frame(j, np.zeros((4, 4)), water()), j.astype(np.float32))
    far = S.degrade_frame(j, np.full((4, 4), 1e4), water())
    np.testing.assert_allclose(far, np.broadcast_to(np.array([0.3, 0.4, 0.6], np.float32)[:, None, None], j.shape))
    one = S.degrade_frame(np.ones((3, 1, 1)), np.full((1, 1), 2.0), water())
    assert one[0, 0, 0] == pytest.approx(math.exp(-1) + 0.3 * (1 - math.exp(-1)), abs=1e-6)
    assert one[0, 0, 0] == pytest.approx(0.55752, abs=1e-5)


def test_water_params_validation():
    with pytest.raises(ValueError):
        S.WaterParams((-0.1, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        S.WaterParams((0, 0, 0), (0, 1.2, 0))
    w = water()
    assert S.WaterParams.from_dict(json.loads(json.dumps(w.to_dict()))) == w


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_degrade_range_and_monotone_in_depth(seed):
    r = np.random.default_rng(seed)
    j = r.random((3, 4, 4))
    w = S.sample_water(seed)
    d = r.uniform(0, 10, (4, 4))
    near, far = S.degrade_frame(j, d, w), S.degrade_frame(j, d + r.uniform(0, 3, (4, 4)), w)
    assert near.min() >= 0 and near.max() <= 1
    bg = np.array(w.background)[:, None, None]
    assert np.all(np.abs(far - bg) <= np.abs(near - bg) + 1e-6)


def test_synth_clip_static_and_stateless(rng):
    f = rng.random((3, 8, 8))
    d = rng.uniform(1, 5, (8, 8))
    static = S.CleanClip(np.stack([f] * 4), np.stack([d] * 4))
    out = S.synth_clip(static, water())
    assert out.shape == (4, 3, 8, 8)
    assert all(np.array_equal(out[0], o) for o in out)
    other = S.CleanClip(np.stack([f, rng.random((3, 8, 8))]), np.stack([d, d]))
    assert np.array_equal(S.synth_clip(other, water())[0], out[0])


def test_per_frame_params_flicker_more():
    clip = S.gen_procedural_clip(3, 8, 32, 32, motion=1)
    shared = S.synth_clip(clip, S.sample_water(0))
    varied = np.stack([S.degrade_frame(f, d, S.sample_water(100 + i)) for i, (f, d) in enumerate(zip(clip.frames, clip.depths))])
    assert metrics.cdc(varied) > metrics.cdc(shared)


# ---------------------------------------------------------------- sampling and procedural clips


def test_sample_water_deterministic():
    assert S.sample_water(7) == S.sample_water(7)
    with pytest.raises(KeyError):
        S.sample_water(0, ["arctic"])


def test_sample_water_ranges_and_blue_ordering():
    for seed in range(1000):
        w = S.sample_water(seed)
        spec = S.PRESETS[w.preset]
        for v, (lo, hi) in zip(w.beta, spec["beta"]):
            assert lo <= v <= hi
        for v, (lo, hi) in zip(w.background, spec["background"]):
            assert lo <= v <= hi
        if w.preset == "blue-ocean":
            assert w.beta[2] <= w.beta[1] <= w.beta[0]


def test_procedural_clip_properties():
    static = S.gen_procedural_clip(1, 4, 16, 20, motion=0)
    assert all(np.array_equal(static.frames[0], f) for f in static.frames)
    moving = S.gen_procedural_clip(1, 4, 16, 20, motion=2)
    np.testing.assert_allclose(moving.frames[1][:, :, :-2], moving.frames[0][:, :, 2:], atol=1e-6)
    assert moving.depths.min() >= S.DEPTH_RANGE[0] and moving.depths.max() <= S.DEPTH_RANGE[1]
    again = S.gen_procedural_clip(1, 4, 16, 20, motion=2)
    assert again.frames.tobytes() == moving.frames.tobytes()


def test_clean_clip_validation():
    with pytest.raises(ValueError):
        S.CleanClip(np.zeros((2, 3, 4, 4)), np.zeros((3, 4, 4)))


# ---------------------------------------------------------------- dataset assembly


def test_parse_split():
    assert S.parse_split("220:60", 280) == 220
    assert S.parse_split((220, 60), 28) == 22
    assert S.parse_split(0.5, 10) == 5
    assert S.parse_split("0.3", 10) == 3
    with pytest.raises(ValueError):
        S.parse_split(1.5, 10)


def _clips(n, size=16, frames=3):
    return [S.gen_procedural_clip(i, frames, size, size, clip_id=f"c{i}") for i in range(n)]


def test_build_single_clip(tmp_path):
    man = S.build_dataset(_clips(1), tmp_path, split_ratio=(1, 0))
    assert len(man.entries) == 3
    assert {e.split for e in man.entries} == {"train"}
    assert [e.style for e in man.entries] == [1, 2, 3]
    assert len(fio.list_frames(tmp_path / "underwater/c0_s2")) == 3


def test_build_split_no_leakage_and_counts(tmp_path):
    man = S.build_dataset(_clips(10), tmp_path, split_ratio=(7, 3), seed=4)
    train, test = man.split("train"), man.split("test")
    assert len(train) == 21 and len(test) == 9
    assert not {e.clip_id for e in train} & {e.clip_id for e in test}
    loaded = S.DatasetManifest.load(tmp_path / "manifest.json")
    assert loaded.to_json() == man.to_json()


def test_build_is_byte_reproducible(tmp_path):
    clips = _clips(3)
    S.build_dataset(clips, tmp_path / "a", seed=9, split_ratio=(2, 1))
    S.build_dataset(clips, tmp_path / "b", seed=9, split_ratio=(2, 1))
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_stored_frames_regenerate_from_manifest(tmp_path):
    man = S.build_dataset(_clips(2), tmp_path, seed=1, split_ratio=(1, 1))
    for e in man.entries:
        clean = fio.read_frames(tmp_path / e.clean)
        depth = fio.read_depths(tmp_path / e.depth)
        stored = fio.read_frames(tmp_path / e.underwater)
        redo = fio.quantize(S.degrade_frame(clean[0], depth[0], e.water))
        assert redo.tobytes() == stored[0].tobytes()


def test_duplicate_ids_rejected(tmp_path):
    clip = S.gen_procedural_clip(0, 2, 8, 8, clip_id="x")
    with pytest.raises(ValueError):
        S.build_dataset([clip, clip], tmp_path)


def test_depth_png_roundtrip(tmp_path, rng):
    d = rng.uniform(0.5, 10, (2, 6, 7))
    fio.write_depths(d, tmp_path)
    np.testing.assert_allclose(fio.read_depths(tmp_path), d, atol=5e-4)
