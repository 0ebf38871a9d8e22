"""Frame-directory I/O: 8-bit RGB PNGs and 16-bit millimetre depth PNGs."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

FRAME_PATTERN = "frame_{:06d}.png"


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    return np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32).transpose(2, 0, 1) / np.float32(255.0)


def quantize(frame: np.ndarray) -> np.ndarray:
    """Round-trip a float frame through its 8-bit storage representation."""
    return from_uint8(to_uint8(frame))


def write_frames(frames: Iterable[np.ndarray], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = out / FRAME_PATTERN.format(i)
        Image.fromarray(to_uint8(f)).save(p, format="PNG")
        paths.append(p)
    return paths


def list_frames(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("frame_*.png"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    return paths


def read_frames(directory) -> np.ndarray:
    """Load a frame directory as (N, 3, H, W) float32 in [0, 1]."""
    frames = []
    for p in list_frames(directory):
        with Image.open(p) as im:
            frames.append(from_uint8(np.asarray(im.convert("RGB"))))
    return np.stack(frames)


def depth_to_mm(depth: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(depth, dtype=np.float64) * 1000.0), 0, 65535).astype(np.uint16)


def write_depths(depths: Iterable[np.ndarray], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, d in enumerate(depths):
        Image.fromarray(depth_to_mm(d)).save(out / FRAME_PATTERN.format(i), format="PNG")


def read_depths(directory) -> np.ndarray:
    """Load 16-bit depth PNGs as (N, H, W) metres."""
    out = []
    for p in list_frames(directory):
        with Image.open(p) as im:
            out.append(np.asarray(im, dtype=np.uint16).astype(np.float64) / 1000.0)
    return np.stack(out)
