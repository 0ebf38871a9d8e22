"""Training, sliding-window inference, evaluation and dataset synthesis drivers."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from . import engine as E
from . import frames as fio
from . import metrics
from . import model as M
from . import synth
from .optim import AdamState, CosineSchedule, adam_step, cosine_lr

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    lr0: float = 4e-4
    total_iters: int = 2000
    batch_size: int = 4
    crop_size: int = 64
    hflip: bool = True
    rot90: bool = True
    seed: int = 0
    manifest: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.crop_size < 1 or self.crop_size % M.PAD_MULTIPLE:
            raise ValueError(f"crop_size must be a positive multiple of {M.PAD_MULTIPLE}")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if "model" in d and not isinstance(d["model"], M.ModelConfig):
            d["model"] = M.ModelConfig.from_dict(d["model"])
        return cls(**d)


TINY_MODEL = M.ModelConfig(T=5, dims=(16, 32, 64, 128), depths=(1, 1, 2, 1), shift_len=3, decoder_dim=16, grm_dim=16)

PRESETS: dict[str, TrainConfig] = {
    "tiny": TrainConfig(model=TINY_MODEL, lr0=4e-4, total_iters=2000, batch_size=4, crop_size=64),
    "paper": TrainConfig(model=M.ModelConfig(), lr0=4e-4, total_iters=80000, batch_size=16, crop_size=256),
}


def load_train_config(path=None, preset: str = "tiny", **overrides) -> TrainConfig:
    """Preset, then JSON file fields, then explicit overrides (``None`` values ignored)."""
    base = PRESETS[preset].to_dict()
    if path is not None:
        doc = json.loads(Path(path).read_text())
        model = {**base["model"], **doc.pop("model", {})}
        base.update(doc)
        base["model"] = model
    model_over = overrides.pop("model", None) or {}
    base.update({k: v for k, v in overrides.items() if v is not None})
    base["model"] = {**base["model"], **{k: v for k, v in model_over.items() if v is not None}}
    return TrainConfig.from_dict(base)


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("UVE_THREADS", default)))
    except ValueError:
        return default


# ---------------------------------------------------------------- windows


def window_indices(t: int, n: int, T: int) -> list[int]:
    """Indices of the T-frame window centred at t, replicating the clip boundaries."""
    k = T // 2
    return [min(max(i, 0), n - 1) for i in range(t - k, t + k + 1)]


def _augment(img: np.ndarray, flip: bool, k: int) -> np.ndarray:
    if flip:
        img = img[..., ::-1]
    if k:
        img = np.rot90(img, k, axes=(-2, -1))
    return img


def sample_window(pair: tuple[np.ndarray, np.ndarray], T: int, crop_size: int, augment: tuple[bool, bool],
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random T-frame training window and its centre ground truth.

    One crop position and one augmentation draw are shared by all T frames and
    the ground truth. Returns ((T, 3, c, c), (3, c, c)) float32 arrays.
    """
    raw, gt = pair
    n, _, h, w = raw.shape
    if crop_size > h or crop_size > w:
        raise TrainingError(f"crop {crop_size} larger than frames {h}x{w}")
    if n >= T:
        start = int(rng.integers(0, n - T + 1))
        idx = list(range(start, start + T))
    else:
        idx = window_indices(int(rng.integers(0, n)), n, T)
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    hflip, rot = augment
    flip = bool(rng.integers(0, 2)) if hflip else False
    k = int(rng.integers(0, 4)) if rot else 0
    sl = (slice(top, top + crop_size), slice(left, left + crop_size))
    frames = _augment(raw[idx][:, :, sl[0], sl[1]], flip, k)
    target = _augment(gt[idx[T // 2]][:, sl[0], sl[1]], flip, k)
    return np.ascontiguousarray(frames, dtype=np.float32), np.ascontiguousarray(target, dtype=np.float32)


def load_pairs(manifest_path, split: str = "train") -> list[tuple[np.ndarray, np.ndarray]]:
    manifest = synth.DatasetManifest.load(manifest_path)
    entries = manifest.split(split)
    cache: dict[str, np.ndarray] = {}
    pairs = []
    for e in entries:
        if e.clean not in cache:
            cache[e.clean] = fio.read_frames(manifest.root / e.clean)
        pairs.append((fio.read_frames(manifest.root / e.underwater), cache[e.clean]))
    return pairs


# ---------------------------------------------------------------- training


def train(config: TrainConfig, pairs: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
          holdout: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[dict[str, E.Tensor], dict]:
    """Train with L1 loss, Adam and cosine annealing; returns (params, run report)."""
    if pairs is None:
        if not config.manifest:
            raise TrainingError("no training data: give a manifest or pairs")
        pairs = load_pairs(config.manifest, "train")
        if holdout is None:
            test = load_pairs(config.manifest, "test")
            holdout = test[0] if test else None
    if not pairs:
        raise TrainingError("training manifest has no pairs")
    mcfg = config.model
    rng = np.random.default_rng(config.seed)
    params = M.init_params(mcfg, config.seed)
    state = AdamState(lr=config.lr0)
    sched = CosineSchedule(lr0=config.lr0, t_max=config.total_iters)
    losses: list[dict] = []
    t0 = time.perf_counter()
    for it in range(config.total_iters):
        lr = cosine_lr(sched, it)
        wins, tgts = [], []
        for _ in range(config.batch_size):
            pair = pairs[int(rng.integers(len(pairs)))]
            w, g = sample_window(pair, mcfg.T, config.crop_size, (config.hflip, config.rot90), rng)
            wins.append(w)
            tgts.append(g)
        batch = np.stack(wins)
        target = E.Tensor(np.stack(tgts))
        try:
            with E.Tape() as tape:
                pred = M.forward(batch, params, mcfg)
                loss = E.l1_loss(pred, target)
            tape.backward(loss)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite value at iteration {it}: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at iteration {it}")
        adam_step(params, state, lr)
        E.zero_grads(params.values())
        if it % config.log_every == 0 or it == config.total_iters - 1:
            losses.append({"iter": it, "loss": value, "lr": lr})
            log.info("iter %d loss %.5f lr %.2e", it, value, lr)
        if config.checkpoint and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            M.save_checkpoint(params, mcfg, config.checkpoint)
    if config.checkpoint:
        M.save_checkpoint(params, mcfg, config.checkpoint)
    report = {
        "version": __version__,
        "config": config.to_dict(),
        "loss_log": losses,
        "wall_time_s": time.perf_counter() - t0,
    }
    if holdout is not None:
        raw, gt = holdout
        enhanced = enhance_frames(raw, params, mcfg)
        vm = metrics.evaluate_video(enhanced, gt)
        report["holdout"] = {"enhanced": vm.means(), "raw_psnr": metrics.evaluate_video(raw, gt).means()["psnr"]}
    return params, report


# ---------------------------------------------------------------- inference


def enhance_frames(frames: np.ndarray, params: Mapping[str, E.Tensor], config: M.ModelConfig,
                   workers: int = 1) -> np.ndarray:
    """Sliding-window enhancement of an (N, 3, H, W) clip, one window per output frame."""
    n = frames.shape[0]
    if n == 0:
        raise ValueError("empty clip")

    def one(t: int) -> np.ndarray:
        win = frames[window_indices(t, n, config.T)]
        return M.forward(win, params, config).data[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, range(n)))
    else:
        outs = [one(t) for t in range(n)]
    return np.stack(outs)


def enhance_video(checkpoint_path, in_dir, out_dir, workers: int | None = None) -> list[Path]:
    params, config = M.load_checkpoint(checkpoint_path)
    clip = fio.read_frames(in_dir)
    out = enhance_frames(clip, params, config, workers or worker_count())
    return fio.write_frames(out, out_dir)


# ---------------------------------------------------------------- evaluation


CSV_COLUMNS = ("psnr", "ssim", "uiqm", "uciqe", "mse_mabd", "cdc")


def evaluate_dirs(enh_dir, gt_dir=None) -> metrics.VideoMetrics:
    enh = fio.read_frames(enh_dir)
    gt = fio.read_frames(gt_dir) if gt_dir is not None else None
    return metrics.evaluate_video(enh, gt)


def write_report(vm: metrics.VideoMetrics, out_prefix, video_name: str = "video") -> tuple[Path, Path]:
    """Write ``<prefix>.json`` (per-frame detail) and ``<prefix>.csv`` (one row)."""
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    summary = vm.summary()
    json_path = prefix.with_suffix(".json")
    json_path.write_text(json.dumps({"video": video_name, **vm.to_dict()}, indent=2, sort_keys=True) + "\n")
    cols = [c for c in CSV_COLUMNS if c in summary]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video", *cols])
    writer.writerow([video_name, *(repr(summary[c]) for c in cols)])
    csv_path = prefix.with_suffix(".csv")
    csv_path.write_text(buf.getvalue())
    return json_path, csv_path


# ---------------------------------------------------------------- synthesis


def load_clean_root(root, crop: tuple[int, int] | None = None) -> list[synth.CleanClip]:
    """Clean clips from ``root/<id>/frame_*.png`` with depths in ``root/<id>/depth/``.

    Zero depths are treated as missing and filled with the cross-bilateral filter.
    """
    clips = []
    for d in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        frames = fio.read_frames(d)
        depths = fio.read_depths(d / "depth")
        filled = []
        for f, dep in zip(frames, depths):
            dm = synth.DepthMap(dep)
            filled.append(synth.fill_depth(dm, f).values if not dm.valid.all() else dep)
        depths = np.stack(filled)
        if crop is not None:
            frames = synth.center_crop(frames, *crop)
            depths = synth.center_crop(depths, *crop)
        clips.append(synth.CleanClip(np.ascontiguousarray(frames), np.ascontiguousarray(depths), d.name))
    return clips


def synth_procedural(out_dir, n_clips: int, styles: int = 3, split="220:60", seed: int = 0,
                     n_frames: int = 16, size: tuple[int, int] = (64, 64), motion: int = 1) -> synth.DatasetManifest:
    clips = [synth.gen_procedural_clip(seed * 100003 + i, n_frames, size[0], size[1], motion, f"proc{i:04d}")
             for i in range(n_clips)]
    return synth.build_dataset(clips, out_dir, styles, split, seed)


def replace_model(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, model=replace(config.model, **changes))
