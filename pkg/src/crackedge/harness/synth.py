"""Seeded synthetic crack dataset: dark jagged polylines over textured noise.

Every image gets its own generator derived from (seed, class, index), so the
dataset is byte-reproducible and independent of generation order. Background
luminance never drops below ~115 and crack strokes never exceed 60, which
keeps the two classes separable by construction while the value noise and
jagged geometry still make the task non-trivial at higher amplitudes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..errors import IoError
from ..model_io import image_from_array, write_image
from ..runtime.pre_post import resize_bilinear

BG_BASE_RANGE = (160.0, 185.0)
BG_CHANNEL_JITTER = 5
CRACK_DARKNESS_RANGE = (15.0, 55.0)
CRACK_DARKNESS_MAX = 60.0


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int
    width: int = 227
    height: int = 227
    seed: int = 0
    crack_width_px: tuple[int, int] = (1, 4)
    crack_count: tuple[int, int] = (1, 3)
    noise_amplitude: int = 40

    def __post_init__(self):
        if self.n_per_class < 0:
            raise ValueError("n_per_class must be >= 0")
        if self.width < 8 or self.height < 8:
            raise ValueError("images must be at least 8x8")
        if not 0 <= self.noise_amplitude <= 255:
            raise ValueError("noise_amplitude must be in [0, 255]")
        for lo, hi in (self.crack_width_px, self.crack_count):
            if not 1 <= lo <= hi:
                raise ValueError("ranges must satisfy 1 <= lo <= hi")


def _image_rng(cfg: SynthConfig, class_idx: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(class_idx, index))
    return np.random.Generator(np.random.PCG64(ss))


def _value_noise(rng, h, w, cell):
    """Smooth [-1, 1] noise: a coarse random grid upsampled bilinearly."""
    gh = max(h // cell + 2, 2)
    gw = max(w // cell + 2, 2)
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw, 1))
    return resize_bilinear(grid, h, w)[:, :, 0]


def _background(rng, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    base = rng.uniform(*BG_BASE_RANGE)
    amp = float(cfg.noise_amplitude)
    field = (
        base
        + 0.6 * amp * _value_noise(rng, h, w, 32)
        + 0.3 * amp * _value_noise(rng, h, w, 8)
        + 0.1 * amp * rng.uniform(-1.0, 1.0, size=(h, w))
    )
    offsets = rng.integers(-BG_CHANNEL_JITTER, BG_CHANNEL_JITTER + 1, size=3)
    img = field[:, :, None] + offsets[None, None, :]
    return np.clip(img, 0, 255)


def _draw_crack(rng, img: np.ndarray, cfg: SynthConfig) -> None:
    """One jagged dark polyline spanning the full image, drawn in place."""
    h, w, _ = img.shape
    darkness = rng.uniform(*CRACK_DARKNESS_RANGE)
    width = int(rng.integers(cfg.crack_width_px[0], cfg.crack_width_px[1] + 1))
    vertical = rng.random() < 0.5
    span, extent = (h, w) if vertical else (w, h)
    pos = rng.uniform(0.15, 0.85) * extent
    slope = rng.uniform(-0.4, 0.4)
    for t in range(span):
        pos += slope + rng.normal(0.0, 0.7)
        if rng.random() < 0.04:  # occasional jag
            pos += rng.uniform(-4.0, 4.0)
        pos = float(np.clip(pos, 0, extent - 1))
        d = float(np.clip(darkness + rng.normal(0.0, 3.0), 5.0, CRACK_DARKNESS_MAX))
        lo = max(0, int(round(pos)) - width // 2)
        hi = min(extent, lo + width)
        if vertical:
            img[t, lo:hi, :] = d
        else:
            img[lo:hi, t, :] = d


def render_image(cfg: SynthConfig, class_idx: int, index: int) -> np.ndarray:
    """(H, W, 3) uint8 sample; class 0 = negative, 1 = positive."""
    rng = _image_rng(cfg, class_idx, index)
    img = _background(rng, cfg)
    if class_idx == 1:
        n_cracks = int(rng.integers(cfg.crack_count[0], cfg.crack_count[1] + 1))
        for _ in range(n_cracks):
            _draw_crack(rng, img, cfg)
    return img.astype(np.uint8)


def gen_synthetic_dataset(cfg: SynthConfig, out_dir) -> list[dict]:
    """Write negative/ and positive/ PPM trees plus a manifest; returns manifest."""
    root = os.fspath(out_dir)
    manifest = []
    try:
        for class_idx, class_name in ((0, "negative"), (1, "positive")):
            class_dir = os.path.join(root, class_name)
            os.makedirs(class_dir, exist_ok=True)
            for i in range(cfg.n_per_class):
                arr = render_image(cfg, class_idx, i)
                rel = os.path.join(class_name, f"{class_name[:3]}_{i:05d}.ppm")
                write_image(image_from_array(arr), os.path.join(root, rel))
                manifest.append({"path": rel, "label": class_name})
        with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write dataset under {root}: {e}") from e
    return manifest
