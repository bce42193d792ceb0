"""Image-directory sequences, ground-truth / result text files and synthetic clips."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import BBox
from .exceptions import InputError
from .tensor import DTYPE

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm"}


def list_frames(seq_dir) -> list[Path]:
    """Image files in ``seq_dir`` ordered by the number in their name."""
    root = Path(seq_dir)
    if not root.is_dir():
        raise InputError(f"sequence directory {root} does not exist")
    files = [p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    numbered = []
    for p in files:
        m = re.findall(r"\d+", p.stem)
        if m:
            numbered.append((int(m[-1]), p.name, p))
    if not numbered:
        raise InputError(f"no numbered image files in {root}")
    return [p for _, _, p in sorted(numbered)]


def read_frame(path) -> np.ndarray:
    """Load an image as a ``3 x H x W`` float32 array scaled to [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1) / DTYPE(255.0))


def write_frame(path, frame: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def read_gt(path) -> BBox:
    """Parse a one-line ``x,y,w,h`` pixel box (top-left corner + size)."""
    try:
        text = Path(path).read_text().strip().splitlines()[0]
    except (OSError, IndexError) as exc:
        raise InputError(f"cannot read ground truth from {path}") from exc
    parts = [p for p in re.split(r"[,\s]+", text) if p]
    if len(parts) != 4:
        raise InputError(f"ground truth must be x,y,w,h; got {text!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise InputError(f"ground truth must be numeric; got {text!r}") from exc
    return BBox.from_xywh(x, y, w, h)


def format_result(frame_index: int, box: BBox, score: float) -> str:
    x, y, w, h = box.to_xywh()
    return f"{frame_index},{x:.4f},{y:.4f},{w:.4f},{h:.4f},{score:.6f}"


def write_results(path, rows) -> None:
    """``rows`` are ``(frame_index, BBox, score)`` triples."""
    Path(path).write_text("".join(format_result(*r) + "\n" for r in rows))


def read_results(path) -> list[tuple[int, float, float, float, float, float]]:
    out = []
    for line in Path(path).read_text().splitlines():
        idx, *vals = line.split(",")
        out.append((int(idx), *map(float, vals)))
    return out


def synthetic_frames(n_frames: int, size: int = 128, box_side: int = 16, seed: int = 0,
                     step: float = 1.5, static: bool = False) -> tuple[list[np.ndarray], BBox]:
    """A bright textured square drifting over a noisy background.

    Returns the frames (``3 x size x size`` float32) and the first-frame box.
    """
    rng = np.random.default_rng(seed)
    background = rng.uniform(0.0, 0.4, size=(3, size, size))
    patch = rng.uniform(0.6, 1.0, size=(3, box_side, box_side))
    x, y = (size - box_side) / 2.0, (size - box_side) / 2.0
    angle = rng.uniform(0, 2 * np.pi)
    frames, first = [], None
    for t in range(n_frames):
        if not static and t:
            angle += rng.normal(0, 0.3)
            x = float(np.clip(x + step * np.cos(angle), 0, size - box_side))
            y = float(np.clip(y + step * np.sin(angle), 0, size - box_side))
        img = background.copy()
        xi, yi = int(round(x)), int(round(y))
        img[:, yi:yi + box_side, xi:xi + box_side] = patch
        frames.append(img.astype(DTYPE))
        if first is None:
            first = BBox.from_xywh(xi, yi, box_side, box_side)
    return frames, first


def write_synthetic_sequence(seq_dir, n_frames: int, size: int = 128, box_side: int = 16,
                             seed: int = 0) -> Path:
    """Write a synthetic clip as ``00000001.png``... plus ``groundtruth.txt``."""
    root = Path(seq_dir)
    root.mkdir(parents=True, exist_ok=True)
    frames, box = synthetic_frames(n_frames, size, box_side, seed)
    for i, frame in enumerate(frames, 1):
        write_frame(root / f"{i:08d}.png", frame)
    x, y, w, h = box.to_xywh()
    (root / "groundtruth.txt").write_text(f"{x:g},{y:g},{w:g},{h:g}\n")
    return root
