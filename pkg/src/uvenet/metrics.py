"""Frame-level (PSNR, SSIM, UIQM, UCIQE) and video-level (MSE of MABD, CDC) quality metrics.

Frames are (3, H, W) float arrays in [0, 1]; videos are (N, 3, H, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PSNR_CAP = 100.0
LUMA = (0.299, 0.587, 0.114)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

UICM_ALPHA = 0.1
BLOCK = 8
UIQM_WEIGHTS = (0.0282, 0.2953, 3.5753)
UCIQE_WEIGHTS = (0.4680, 0.2745, 0.2576)
MABD_SCALE = 1e4
CDC_STRIDES = (1, 2, 4)
CDC_BINS = 256

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = _SRGB_TO_XYZ.sum(axis=1)


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def luma(frame) -> np.ndarray:
    f = _f64(frame)
    return LUMA[0] * f[0] + LUMA[1] * f[1] + LUMA[2] * f[2]


# ---------------------------------------------------------------- full reference


def psnr(pred, ref) -> float:
    """10 log10(1 / MSE) over all channels, capped at 100 dB."""
    mse = float(np.mean((_f64(pred) - _f64(ref)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim(pred, ref) -> float:
    """Single-scale SSIM on luma with an 11x11 Gaussian window and symmetric padding."""
    x, y = luma(pred), luma(ref)
    g = gaussian_window()

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="reflect")
        return ndimage.correlate1d(a, g, axis=1, mode="reflect")

    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


# ---------------------------------------------------------------- UIQM


def _trimmed_mean(values: np.ndarray, alpha: float = UICM_ALPHA) -> float:
    v = np.sort(values.ravel())
    k = int(alpha * v.size)
    return float(v[k : v.size - k].mean())


def uicm(frame) -> float:
    f = _f64(frame)
    rg = f[0] - f[1]
    yb = (f[0] + f[1]) / 2.0 - f[2]
    mu_rg, mu_yb = _trimmed_mean(rg), _trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))
    return -0.0268 * np.sqrt(mu_rg**2 + mu_yb**2) + 0.1586 * np.sqrt(var_rg + var_yb)


def _blocks(a: np.ndarray, size: int = BLOCK) -> np.ndarray:
    """(k1*k2, size*size) view of the full blocks; trailing partial blocks dropped."""
    k1, k2 = a.shape[0] // size, a.shape[1] // size
    a = a[: k1 * size, : k2 * size]
    return a.reshape(k1, size, k2, size).transpose(0, 2, 1, 3).reshape(k1 * k2, size * size)


def eme(channel: np.ndarray, size: int = BLOCK) -> float:
    b = _blocks(channel, size)
    if b.shape[0] == 0:
        return 0.0
    mx, mn = b.max(axis=1), b.min(axis=1)
    ok = (mn > 0) & (mx != mn)
    terms = np.zeros_like(mx)
    terms[ok] = np.log(mx[ok] / mn[ok])
    return float(2.0 / b.shape[0] * terms.sum())


def sobel_magnitude(channel: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(channel, axis=1, mode="reflect")
    gy = ndimage.sobel(channel, axis=0, mode="reflect")
    return np.hypot(gx, gy)


def uism(frame) -> float:
    f = _f64(frame)
    return float(sum(w * eme(sobel_magnitude(f[c]) * f[c]) for c, w in enumerate(LUMA)))


def uiconm(frame) -> float:
    b = _blocks(luma(frame))
    if b.shape[0] == 0:
        return 0.0
    mx, mn = b.max(axis=1), b.min(axis=1)
    tot = mx + mn
    m = np.where(tot > 0, (mx - mn) / np.where(tot > 0, tot, 1.0), 0.0)
    terms = np.zeros_like(m)
    pos = m > 0
    terms[pos] = m[pos] * np.log(m[pos])
    return float(terms.mean())


def uiqm(frame) -> float:
    c1, c2, c3 = UIQM_WEIGHTS
    return c1 * uicm(frame) + c2 * uism(frame) + c3 * uiconm(frame)


# ---------------------------------------------------------------- UCIQE


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = _f64(c)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(frame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """sRGB (D65) to CIELab; returns L in [0, 100], a, b."""
    lin = srgb_to_linear(frame)
    xyz = np.tensordot(_SRGB_TO_XYZ, lin, axes=1) / _WHITE[:, None, None]
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[1] - 16.0
    a = 500.0 * (f[0] - f[1])
    b = 200.0 * (f[1] - f[2])
    return L, a, b


def uciqe(frame) -> float:
    L, a, b = rgb_to_lab(frame)
    chroma = np.sqrt(a * a + b * b)
    sigma_c = float(chroma.std()) / 100.0
    con_l = float(np.percentile(L, 99) - np.percentile(L, 1)) / 100.0
    denom = np.sqrt(chroma * chroma + L * L)
    sat = np.where(denom > 0, chroma / np.where(denom > 0, denom, 1.0), 0.0)
    w1, w2, w3 = UCIQE_WEIGHTS
    return w1 * sigma_c + w2 * con_l + w3 * float(sat.mean())


# ---------------------------------------------------------------- video level


def mabd_map(video) -> np.ndarray:
    v = _f64(video)
    if v.shape[0] < 2:
        raise ValueError("MABD needs at least two frames")
    y = LUMA[0] * v[:, 0] + LUMA[1] * v[:, 1] + LUMA[2] * v[:, 2]
    return np.abs(np.diff(y, axis=0)).sum(axis=0) / (v.shape[0] - 1)


def mse_mabd(enh, gt) -> float:
    e, g = _f64(enh), _f64(gt)
    if e.shape != g.shape:
        raise ValueError(f"video shapes differ: {e.shape} vs {g.shape}")
    return MABD_SCALE * float(np.mean((mabd_map(e) - mabd_map(g)) ** 2))


def color_histograms(frame) -> np.ndarray:
    """(3, 256) normalised per-channel histograms of 8-bit-quantised values."""
    q = np.clip(np.rint(_f64(frame) * 255.0), 0, 255).astype(np.int64)
    out = np.empty((3, CDC_BINS))
    for c in range(3):
        h = np.bincount(q[c].ravel(), minlength=CDC_BINS).astype(np.float64)
        out[c] = h / h.sum()
    return out


def _kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    mask = p > 0
    return np.where(mask, p * np.log(np.where(mask, p, 1.0) / np.where(mask, q, 1.0)), 0.0).sum(axis=-1)


def jsd(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Jensen-Shannon divergence (natural log) along the last axis."""
    m = 0.5 * (p + q)
    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def cdc(video) -> float:
    v = _f64(video)
    n = v.shape[0]
    if n < 2:
        raise ValueError("CDC needs at least two frames")
    hists = np.stack([color_histograms(f) for f in v])
    per_stride = []
    for tau in CDC_STRIDES:
        if tau >= n:
            continue
        per_stride.append(float(jsd(hists[:-tau], hists[tau:]).mean()))
    return float(np.mean(per_stride))


# ---------------------------------------------------------------- reports


@dataclass
class FrameMetrics:
    uiqm: float
    uciqe: float
    psnr: float | None = None
    ssim: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in (("psnr", self.psnr), ("ssim", self.ssim), ("uiqm", self.uiqm), ("uciqe", self.uciqe)) if v is not None}


@dataclass
class VideoMetrics:
    frames: list[FrameMetrics] = field(default_factory=list)
    mse_mabd: float | None = None
    cdc: float | None = None

    def means(self) -> dict[str, float]:
        keys = self.frames[0].to_dict().keys() if self.frames else ()
        return {k: float(np.mean([f.to_dict()[k] for f in self.frames])) for k in keys}

    def summary(self) -> dict[str, float]:
        out = self.means()
        if self.mse_mabd is not None:
            out["mse_mabd"] = self.mse_mabd
        if self.cdc is not None:
            out["cdc"] = self.cdc
        return out

    def to_dict(self) -> dict:
        return {"per_frame": [f.to_dict() for f in self.frames], "summary": self.summary()}


def evaluate_video(enh, gt=None) -> VideoMetrics:
    """All applicable metrics; reference metrics only when ``gt`` is given."""
    e = _f64(enh)
    g = _f64(gt) if gt is not None else None
    if g is not None and g.shape != e.shape:
        raise ValueError(f"enhanced {e.shape} and reference {g.shape} differ")
    frames = []
    for i, f in enumerate(e):
        fm = FrameMetrics(uiqm=uiqm(f), uciqe=uciqe(f))
        if g is not None:
            fm.psnr = psnr(f, g[i])
            fm.ssim = ssim(f, g[i])
        frames.append(fm)
    vm = VideoMetrics(frames)
    if e.shape[0] >= 2:
        vm.cdc = cdc(e)
        if g is not None:
            vm.mse_mabd = mse_mabd(e, g)
    return vm
