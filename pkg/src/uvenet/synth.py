"""Paired underwater/clean video synthesis with per-clip-constant water parameters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import frames as fio

# Per-channel (R, G, B) ranges: attenuation in 1/m, background light in [0, 1].
# Plausibility ranges only; red attenuates fastest in clear water.
PRESETS: dict[str, dict[str, tuple[tuple[float, float], ...]]] = {
    "blue-ocean": {
        "beta": ((0.35, 0.55), (0.05, 0.12), (0.03, 0.08)),
        "background": ((0.00, 0.15), (0.25, 0.45), (0.45, 0.70)),
    },
    "green-coastal": {
        "beta": ((0.30, 0.45), (0.08, 0.15), (0.12, 0.25)),
        "background": ((0.05, 0.20), (0.40, 0.60), (0.25, 0.45)),
    },
    "turbid": {
        "beta": ((0.25, 0.60), (0.25, 0.60), (0.25, 0.60)),
        "background": ((0.30, 0.50), (0.35, 0.55), (0.25, 0.45)),
    },
}

DEPTH_RANGE = (0.5, 10.0)


@dataclass(frozen=True)
class WaterParams:
    beta: tuple[float, float, float]
    background: tuple[float, float, float]
    preset: str = "custom"

    def __post_init__(self):
        if len(self.beta) != 3 or len(self.background) != 3:
            raise ValueError("beta and background need three channels")
        if any(b < 0 for b in self.beta):
            raise ValueError(f"attenuation must be non-negative, got {self.beta}")
        if any(not 0.0 <= b <= 1.0 for b in self.background):
            raise ValueError(f"background light must lie in [0, 1], got {self.background}")

    def to_dict(self) -> dict:
        return {"beta": list(self.beta), "background": list(self.background), "preset": self.preset}

    @classmethod
    def from_dict(cls, d) -> "WaterParams":
        return cls(tuple(d["beta"]), tuple(d["background"]), d.get("preset", "custom"))


@dataclass
class DepthMap:
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise ValueError("validity mask must match depth shape")


@dataclass
class CleanClip:
    frames: np.ndarray  # (N, 3, H, W) in [0, 1]
    depths: np.ndarray  # (N, H, W) metres
    id: str = "clip"

    def __post_init__(self):
        if self.frames.ndim != 4 or self.depths.ndim != 3:
            raise ValueError("frames must be (N, 3, H, W) and depths (N, H, W)")
        if self.frames.shape[0] != self.depths.shape[0] or self.frames.shape[2:] != self.depths.shape[1:]:
            raise ValueError("frames and depths must agree in length and size")


# ---------------------------------------------------------------- depth preprocessing


def _bilateral_pass(values, valid, guide, radius, sigma_s, sigma_r):
    """Guide-weighted average of valid neighbours; returns (estimate, has_support)."""
    h, w = values.shape
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    pad = radius
    vp = np.pad(np.where(valid, values, 0.0), pad)
    mp = np.pad(valid.astype(np.float64), pad)
    gp = np.pad(guide, ((0, 0), (pad, pad), (pad, pad)))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(pad + dy, pad + dy + h)
            xs = slice(pad + dx, pad + dx + w)
            m = mp[ys, xs]
            diff = gp[:, ys, xs] - guide
            wgt = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_s**2) - (diff * diff).sum(axis=0) / (2.0 * sigma_r**2)) * m
            num += wgt * vp[ys, xs]
            den += wgt
    support = den > 0
    est = np.where(support, num / np.where(support, den, 1.0), 0.0)
    return est, support


def _block_reduce(arr: np.ndarray, f: int, weights: np.ndarray | None = None):
    """Mean over f x f blocks (edge blocks partial) of the trailing two axes."""
    h, w = arr.shape[-2:]
    hb, wb = -(-h // f), -(-w // f)
    lead = arr.shape[:-2]
    wt = np.ones((h, w)) if weights is None else weights.astype(np.float64)
    s = np.zeros(lead + (hb * f, wb * f))
    c = np.zeros((hb * f, wb * f))
    s[..., :h, :w] = arr * wt
    c[:h, :w] = wt
    s = s.reshape(lead + (hb, f, wb, f)).sum(axis=(-3, -1))
    c = c.reshape(hb, f, wb, f).sum(axis=(1, 3))
    return np.where(c > 0, s / np.where(c > 0, c, 1.0), 0.0), c > 0


def fill_depth(depth: DepthMap, guide: np.ndarray, radius: int = 5, sigma_s: float | None = None,
               sigma_r: float = 0.1, scales: int = 3) -> DepthMap:
    """Fill invalid depths with a multi-scale cross-bilateral filter guided by an RGB frame.

    Each scale halves the resolution. Holes take the finest-scale estimate that
    has valid support; anything unresolved even at the coarsest scale is grown
    iteratively there. Valid pixels are never modified.
    """
    values, valid = depth.values, depth.valid
    if not valid.any():
        raise ValueError("depth map has no valid pixels to propagate")
    if valid.all():
        return DepthMap(values.copy(), valid.copy())
    guide = np.asarray(guide, dtype=np.float64)
    sigma_s = radius / 2.0 if sigma_s is None else sigma_s
    h, w = values.shape
    out = values.copy()
    todo = ~valid
    for level in range(scales):
        f = 2**level
        if f == 1:
            v, m, g = values, valid, guide
        else:
            v, m = _block_reduce(values, f, valid)
            g, _ = _block_reduce(guide, f)
        est, sup = _bilateral_pass(v, m, g, radius, sigma_s, sigma_r)
        if level == scales - 1:
            # grow the coarsest level until every cell has an estimate
            cur, cur_valid = np.where(m, v, est), m | sup
            while not cur_valid.all():
                e2, s2 = _bilateral_pass(cur, cur_valid, g, radius, sigma_s, sigma_r)
                cur = np.where(cur_valid, cur, e2)
                cur_valid = cur_valid | s2
            est, sup = cur, cur_valid
        up_est = np.repeat(np.repeat(est, f, axis=0), f, axis=1)[:h, :w]
        up_sup = np.repeat(np.repeat(sup, f, axis=0), f, axis=1)[:h, :w]
        take = todo & up_sup
        out[take] = up_est[take]
        todo &= ~take
        if not todo.any():
            break
    return DepthMap(out, np.ones_like(valid))


def center_crop(frame: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Symmetric crop of the trailing (H, W) axes; an odd margin loses its extra pixel at bottom/right."""
    h, w = frame.shape[-2:]
    if target_h > h or target_w > w or target_h < 1 or target_w < 1:
        raise ValueError(f"cannot crop {h}x{w} to {target_h}x{target_w}")
    top = (h - target_h) // 2
    left = (w - target_w) // 2
    return frame[..., top : top + target_h, left : left + target_w]


# ---------------------------------------------------------------- formation model


def degrade_frame(clean: np.ndarray, depth, water: WaterParams) -> np.ndarray:
    """I_c = J_c * t_c + B_c * (1 - t_c) with t_c = exp(-beta_c * d)."""
    d = depth.values if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    beta = np.asarray(water.beta, dtype=np.float64)[:, None, None]
    bg = np.asarray(water.background, dtype=np.float64)[:, None, None]
    t = np.exp(-beta * d[None])
    out = np.asarray(clean, dtype=np.float64) * t + bg * (1.0 - t)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synth_clip(clean: CleanClip, water: WaterParams) -> np.ndarray:
    """Degrade every frame with one shared set of water parameters."""
    return np.stack([degrade_frame(f, d, water) for f, d in zip(clean.frames, clean.depths)])


def sample_water(seed, preset_pool: Sequence[str] | None = None) -> WaterParams:
    rng = np.random.default_rng(seed)
    pool = list(preset_pool or PRESETS)
    for name in pool:
        if name not in PRESETS:
            raise KeyError(f"unknown water preset {name!r}")
    name = pool[int(rng.integers(len(pool)))]
    spec = PRESETS[name]
    beta = [float(rng.uniform(lo, hi)) for lo, hi in spec["beta"]]
    background = [float(rng.uniform(lo, hi)) for lo, hi in spec["background"]]
    if name == "blue-ocean" and beta[2] > beta[1]:
        # the G/B ranges overlap; swapping keeps both inside their ranges
        beta[1], beta[2] = beta[2], beta[1]
    return WaterParams(tuple(beta), tuple(background), name)


# ---------------------------------------------------------------- procedural clips


def gen_procedural_clip(seed: int, n_frames: int, h: int, w: int, motion: int = 1, clip_id: str | None = None) -> CleanClip:
    """Checkerboard plus smooth colour field translating left by ``motion`` px/frame over a depth ramp."""
    rng = np.random.default_rng(seed)
    cell = int(rng.integers(6, 13))
    color_a = rng.uniform(0.1, 0.9, size=3)
    color_b = rng.uniform(0.1, 0.9, size=3)
    freq = rng.uniform(0.02, 0.08, size=(3, 2))
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    amp = rng.uniform(0.05, 0.15, size=3)
    near = float(rng.uniform(0.5, 2.0))
    far = float(rng.uniform(4.0, 10.0))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = []
    for t in range(n_frames):
        X = xx + motion * t
        checker = ((np.floor(X / cell) + np.floor(yy / cell)) % 2)[None]
        base = checker * color_a[:, None, None] + (1 - checker) * color_b[:, None, None]
        smooth = amp[:, None, None] * np.sin(freq[:, 0, None, None] * X[None] + freq[:, 1, None, None] * yy[None] + phase[:, None, None])
        frames.append(np.clip(base + smooth, 0.0, 1.0))
    ramp = near + (far - near) * (yy / max(h - 1, 1))
    depths = np.repeat(ramp[None], n_frames, axis=0)
    return CleanClip(np.stack(frames).astype(np.float32), depths, clip_id or f"proc{seed:06d}")


# ---------------------------------------------------------------- dataset assembly


@dataclass
class ManifestEntry:
    clip_id: str
    clean: str
    depth: str
    underwater: str
    water: WaterParams
    split: str
    style: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["water"] = self.water.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "ManifestEntry":
        return cls(d["clip_id"], d["clean"], d["depth"], d["underwater"], WaterParams.from_dict(d["water"]), d["split"], int(d["style"]))


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0
    styles_per_clip: int = 3
    root: Path | None = None

    def to_json(self) -> str:
        doc = {
            "format": "uvenet-paired-video",
            "version": 1,
            "seed": self.seed,
            "styles_per_clip": self.styles_per_clip,
            "entries": [e.to_dict() for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        entries = [ManifestEntry.from_dict(e) for e in doc["entries"]]
        return cls(entries, doc.get("seed", 0), doc.get("styles_per_clip", 3), path.parent)

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]


def parse_split(split, n_clips: int) -> int:
    """Number of training clips from a fraction, an (a, b) ratio, or an "a:b" string."""
    if isinstance(split, str):
        split = tuple(float(x) for x in split.split(":")) if ":" in split else float(split)
    if isinstance(split, (tuple, list)):
        a, b = split
        frac = a / (a + b)
    else:
        frac = float(split)
    if not 0.0 <= frac <= 1.0:
        raise ValueError(f"split fraction {frac} outside [0, 1]")
    return int(round(n_clips * frac))


def _style_seed(seed: int, clip_index: int, style: int) -> int:
    return int(np.random.SeedSequence([seed, clip_index, style]).generate_state(1)[0])


def build_dataset(clips: Sequence[CleanClip], out_dir, styles_per_clip: int = 3, split_ratio=(220, 60),
                  seed: int = 0, preset_pool: Sequence[str] | None = None) -> DatasetManifest:
    """Write clean, depth and styled underwater clips plus ``manifest.json``.

    Splits are assigned per clean clip before styling, so no clip id appears
    in both train and test. Degradation is computed from the stored 8-bit
    clean frames and millimetre depths, making every underwater frame exactly
    reproducible from the files and the manifest.
    """
    out = Path(out_dir)
    ids = [c.id for c in clips]
    if len(set(ids)) != len(ids):
        raise ValueError("clip ids must be unique")
    n_train = parse_split(split_ratio, len(clips))
    order = np.random.default_rng(seed).permutation(len(clips))
    train_idx = set(int(i) for i in order[:n_train])
    entries = []
    for i, clip in enumerate(clips):
        tag = "train" if i in train_idx else "test"
        clean_rel = f"clean/{clip.id}"
        depth_rel = f"depth/{clip.id}"
        fio.write_frames(clip.frames, out / clean_rel)
        fio.write_depths(clip.depths, out / depth_rel)
        stored = CleanClip(np.stack([fio.quantize(f) for f in clip.frames]), fio.depth_to_mm(clip.depths) / 1000.0, clip.id)
        for style in range(1, styles_per_clip + 1):
            water = sample_water(_style_seed(seed, i, style), preset_pool)
            uw_rel = f"underwater/{clip.id}_s{style}"
            fio.write_frames(synth_clip(stored, water), out / uw_rel)
            entries.append(ManifestEntry(clip.id, clean_rel, depth_rel, uw_rel, water, tag, style))
    manifest = DatasetManifest(entries, seed, styles_per_clip, out)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest
