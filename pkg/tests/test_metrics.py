import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from uvenet import metrics as m


def const(v, h=16, w=16):
    return np.full((3, h, w), v, dtype=np.float64)


# ---------------------------------------------------------------- PSNR / SSIM


def test_psnr_examples(rng):
    assert m.psnr(const(0.0), const(0.5)) == pytest.approx(6.0206, abs=1e-4)
    assert m.psnr(const(0.3), const(0.3)) == 100.0
    a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    assert abs(m.psnr(a, b) - oracles.psnr(a, b)) <= 1e-9


def test_psnr_decreases_with_noise(rng):
    img = rng.random((3, 32, 32)) * 0.5 + 0.25
    noise = rng.standard_normal(img.shape)
    vals = [m.psnr(img + a * noise, img) for a in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_examples(rng):
    ref = rng.random((3, 32, 32))
    assert m.ssim(ref, ref) == pytest.approx(1.0, abs=1e-12)
    inv = 1 - ref
    s = m.ssim(inv, ref)
    assert s < 1
    assert abs(s - oracles.ssim(inv, ref)) <= 1e-7
    a, b = rng.random((3, 32, 32)), rng.random((3, 32, 32))
    assert abs(m.ssim(a, b) - oracles.ssim(a, b)) <= 1e-7
    assert -1 <= m.ssim(a, b) <= 1


# ---------------------------------------------------------------- UIQM


def test_uiqm_uniform_gray_is_zero():
    g = const(0.5)
    assert m.uicm(g) == 0 and m.uism(g) == 0 and m.uiconm(g) == 0 and m.uiqm(g) == 0


def test_uicm_uniform_red_and_varied_colour(rng):
    red = np.zeros((3, 16, 16))
    red[0] = 1
    # a flat colour has no spread, so only the (negatively weighted) mean term remains
    assert m.uicm(red) == pytest.approx(-0.0268 * math.sqrt(1.0 + 0.25), abs=1e-12)
    stripes = np.zeros((3, 16, 16))
    stripes[0, :, ::2] = 1
    stripes[2, :, 1::2] = 1
    assert m.uicm(stripes) > m.uicm(const(0.5)) == 0


@pytest.mark.parametrize("name", ["uicm", "uism", "uiconm", "uiqm"])
def test_uiqm_components_match_oracle(rng, name):
    f = rng.random((3, 16, 16))
    assert abs(getattr(m, name)(f) - getattr(oracles, name)(f)) <= 1e-9


def test_eme_guards():
    a = np.zeros((8, 8))
    a[0, 0] = 1
    assert m.eme(a) == 0.0
    assert m.eme(np.ones((8, 8))) == 0.0
    b = np.full((8, 8), 0.5)
    b[0, 0] = 1.0
    assert m.eme(b) == pytest.approx(2 * math.log(2))
    assert m.eme(np.ones((4, 4))) == 0.0


# ---------------------------------------------------------------- Lab / UCIQE


def test_lab_reference_points():
    L, a, b = m.rgb_to_lab(const(1.0, 2, 2))
    np.testing.assert_allclose(L, 100, atol=1e-9)
    assert np.abs(a).max() < 0.01 and np.abs(b).max() < 0.01
    assert np.all(m.rgb_to_lab(const(0.0, 2, 2))[0] == 0)
    L, a, b = m.rgb_to_lab(const(0.5, 1, 1))
    lin = ((0.5 + 0.055) / 1.055) ** 2.4
    assert L.item() == pytest.approx(116 * lin ** (1 / 3) - 16, abs=1e-9)
    assert L.item() == pytest.approx(53.3889, abs=1e-3)
    assert abs(a.item()) < 1e-9 and abs(b.item()) < 1e-9


def test_uciqe_examples(rng):
    assert m.uciqe(const(0.5)) == pytest.approx(0.0, abs=1e-12)
    hb = np.zeros((3, 16, 16))
    hb[:, :, 8:] = 1.0
    assert m.uciqe(hb) == pytest.approx(0.2745, abs=1e-6)
    f = rng.random((3, 16, 16))
    assert abs(m.uciqe(f) - oracles.uciqe(f)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 6, 6), elements=st.floats(0, 1)), st.randoms(use_true_random=False))
def test_global_metrics_permutation_invariant(frame, r):
    perm = list(range(36))
    r.shuffle(perm)
    shuffled = frame.reshape(3, 36)[:, perm].reshape(3, 6, 6)
    assert m.uicm(shuffled) == pytest.approx(m.uicm(frame), abs=1e-12)
    assert m.uciqe(shuffled) == pytest.approx(m.uciqe(frame), abs=1e-12)


# ---------------------------------------------------------------- video metrics


def test_mabd_examples(rng):
    static = np.repeat(rng.random((1, 3, 8, 8)), 4, axis=0)
    assert m.mse_mabd(static, static.copy()) == 0.0
    vid = np.zeros((3, 3, 4, 5))
    vid[1, :, 2, 3] = 1.0
    gt = np.zeros_like(vid)
    mp = m.mabd_map(vid)
    assert mp[2, 3] == pytest.approx(1.0) and mp.sum() == pytest.approx(1.0)
    assert m.mse_mabd(vid, gt) == pytest.approx(1e4 / 20)
    a, b = rng.random((4, 3, 8, 8)), rng.random((4, 3, 8, 8))
    assert abs(m.mse_mabd(a, b) - oracles.mse_mabd(a, b)) <= 1e-6
    with pytest.raises(ValueError):
        m.mse_mabd(a[:1], b[:1])
    with pytest.raises(ValueError):
        m.mse_mabd(a, b[:3])


def test_cdc_examples(rng):
    assert m.cdc(np.repeat(rng.random((1, 3, 8, 8)), 5, axis=0)) == 0.0
    two = np.stack([const(0.0, 4, 4), const(1.0, 4, 4)])
    assert m.cdc(two) == pytest.approx(math.log(2), abs=1e-12)
    v = rng.random((8, 3, 8, 8))
    assert abs(m.cdc(v) - oracles.cdc(v)) <= 1e-9
    with pytest.raises(ValueError):
        m.cdc(v[:1])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(0.0, 1.0)))
def test_jsd_properties(raw):
    p = (raw[0] + 1e-3) / (raw[0] + 1e-3).sum()
    q = (raw[1] + 1e-3) / (raw[1] + 1e-3).sum()
    assert m.jsd(p, q) == pytest.approx(m.jsd(q, p), abs=1e-15)
    assert m.jsd(p, q) >= -1e-15
    assert m.jsd(p, p) == 0.0
    assert m.jsd(p, q) <= math.log(2) + 1e-12


# ---------------------------------------------------------------- evaluate_video


def test_evaluate_identical_video(rng):
    v = rng.random((3, 3, 16, 16))
    s = m.evaluate_video(v, v.copy()).summary()
    assert s["psnr"] == 100.0 and s["ssim"] == pytest.approx(1.0) and s["mse_mabd"] == 0.0


def test_evaluate_without_reference(rng):
    vm = m.evaluate_video(rng.random((3, 3, 16, 16)))
    assert set(vm.summary()) == {"uiqm", "uciqe", "cdc"}


def test_evaluate_means(rng):
    enh, gt = rng.random((3, 3, 16, 16)), rng.random((3, 3, 16, 16))
    vm = m.evaluate_video(enh, gt)
    for key in ("psnr", "ssim", "uiqm", "uciqe"):
        fn = getattr(m, key)
        vals = [fn(enh[i], gt[i]) if key in ("psnr", "ssim") else fn(enh[i]) for i in range(3)]
        assert vm.means()[key] == pytest.approx(sum(vals) / 3, abs=1e-12)
    assert vm.to_dict()["per_frame"][0]["psnr"] == vm.frames[0].psnr


def test_evaluate_single_frame_omits_video_metrics(rng):
    s = m.evaluate_video(rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))).summary()
    assert "cdc" not in s and "mse_mabd" not in s
