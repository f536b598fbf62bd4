"""Procedural datasets echoing the four target domains at desk scale.

Families: "blobs" (smooth polyp-like regions), "ribs" (thin parallel bands),
"cracks" (thin dark random walks), "patches" (irregular texture regions).
Every example carries an exact ground-truth mask; generation is
deterministic per (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from vplab.errors import DatasetSpecError
from vplab.segcore.types import BinaryMask, ImageRGB

FAMILIES = ("blobs", "ribs", "cracks", "patches")


@dataclass(frozen=True)
class DatasetSpec:
    family: str
    n: int
    image_size: int = 64


@dataclass
class LabeledExample:
    image: ImageRGB
    gt_mask: BinaryMask
    origin: str = "synthetic"


def _coords(size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return xs, ys


def _shade(rng, size, strength=0.15):
    gx, gy = rng.uniform(-1, 1, 2)
    xs, ys = _coords(size)
    ramp = (gx * xs + gy * ys) / size
    return 1.0 + strength * (ramp - ramp.mean())


def _finish(img, rng, noise=0.03):
    img = img * 1.0
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _blobs(rng, size):
    xs, ys = _coords(size)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        cx = rng.uniform(0.25 * size, 0.75 * size)
        cy = rng.uniform(0.25 * size, 0.75 * size)
        r0 = rng.uniform(0.14 * size, 0.24 * size)
        amps = rng.uniform(0.0, 0.22, 3)
        phases = rng.uniform(0, 2 * np.pi, 3)
        theta = np.arctan2(ys - cy, xs - cx)
        r = r0 * (1.0 + sum(a * np.sin((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases))))
        mask |= np.hypot(xs - cx, ys - cy) < r
    bg = np.array([rng.uniform(0.30, 0.42), rng.uniform(0.12, 0.20), rng.uniform(0.16, 0.26)])
    fg = np.array([rng.uniform(0.78, 0.92), rng.uniform(0.48, 0.60), rng.uniform(0.52, 0.66)])
    alpha = gaussian_filter(mask.astype(np.float64), 1.0)[..., None]
    img = (1 - alpha) * bg + alpha * fg
    img *= _shade(rng, size)[..., None]
    return _finish(img, rng), mask


def _ribs(rng, size):
    xs, ys = _coords(size)
    angle = rng.uniform(-0.25, 0.25)
    u = np.cos(angle) * xs + np.sin(angle) * ys
    v = -np.sin(angle) * xs + np.cos(angle) * ys
    spacing = rng.uniform(0.13 * size, 0.2 * size)
    thickness = rng.uniform(0.05 * size, 0.08 * size)
    amp = rng.uniform(0.01 * size, 0.05 * size)
    wavelength = rng.uniform(0.7 * size, 1.6 * size)
    phase = rng.uniform(0, 2 * np.pi)
    offset = rng.uniform(0, spacing)
    curve = amp * np.sin(2 * np.pi * u / wavelength + phase)
    band_pos = np.mod(v + curve + offset, spacing)
    mask = band_pos < thickness
    base = rng.uniform(0.06, 0.14)
    bright = rng.uniform(0.66, 0.82)
    gray = np.where(mask, bright, base)
    img = np.stack([gray * 0.92, gray * 0.97, gray], axis=-1)
    img *= _shade(rng, size, 0.2)[..., None]
    return _finish(img, rng, noise=0.035), mask


def _stamp_disk(mask, cx, cy, radius, size):
    r0, r1 = max(0, int(cy - radius - 1)), min(size, int(cy + radius + 2))
    c0, c1 = max(0, int(cx - radius - 1)), min(size, int(cx + radius + 2))
    if r0 >= r1 or c0 >= c1:
        return
    ys, xs = np.mgrid[r0:r1, c0:c1]
    mask[r0:r1, c0:c1] |= (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2


def _walk(rng, mask, size, start, direction, base_width, steps):
    x, y = start
    d = direction
    for _ in range(steps):
        width = base_width * rng.uniform(0.6, 1.6)
        _stamp_disk(mask, x, y, width / 2.0, size)
        d += rng.uniform(-0.35, 0.35)
        x += 2.0 * np.cos(d)
        y += 2.0 * np.sin(d)
        if not (-2 < x < size + 2 and -2 < y < size + 2):
            break


def _cracks(rng, size):
    mask = np.zeros((size, size), dtype=bool)
    n_walks = int(rng.integers(1, 3))
    for _ in range(n_walks):
        edge = rng.integers(4)
        t = rng.uniform(0.1, 0.9) * size
        if edge == 0:
            start, d = (t, 0.0), np.pi / 2
        elif edge == 1:
            start, d = (t, float(size - 1)), -np.pi / 2
        elif edge == 2:
            start, d = (0.0, t), 0.0
        else:
            start, d = (float(size - 1), t), np.pi
        d += rng.uniform(-0.4, 0.4)
        base_width = rng.uniform(2.5, 4.5)
        _walk(rng, mask, size, start, d, base_width, steps=int(size * 0.9))
        if rng.random() < 0.5:
            bstart = (rng.uniform(0.3, 0.7) * size, rng.uniform(0.3, 0.7) * size)
            _walk(rng, mask, size, bstart, rng.uniform(0, 2 * np.pi), base_width * 0.7, steps=size // 3)
    texture = gaussian_filter(rng.normal(0, 1, (size, size)), 2.0) * 0.05
    base = rng.uniform(0.60, 0.74)
    gray = base + texture
    dark = rng.uniform(0.08, 0.2)
    alpha = gaussian_filter(mask.astype(np.float64), 0.6)
    gray = (1 - alpha) * gray + alpha * dark
    img = np.stack([gray, gray * rng.uniform(0.96, 1.0), gray * rng.uniform(0.9, 0.98)], axis=-1)
    return _finish(img, rng, noise=0.025), mask


def _patches(rng, size):
    field = gaussian_filter(rng.normal(0, 1, (size, size)), rng.uniform(0.09, 0.14) * size)
    q = rng.uniform(0.72, 0.86)
    mask = field > np.quantile(field, q)
    bg = np.array([rng.uniform(0.42, 0.52), rng.uniform(0.48, 0.58), rng.uniform(0.58, 0.68)])
    fg = np.array([rng.uniform(0.55, 0.68), rng.uniform(0.28, 0.38), rng.uniform(0.10, 0.20)])
    mottle = gaussian_filter(rng.normal(0, 1, (size, size)), 1.2) * 0.06
    alpha = gaussian_filter(mask.astype(np.float64), 0.8)[..., None]
    img = (1 - alpha) * bg + alpha * (fg + mottle[..., None])
    img *= _shade(rng, size)[..., None]
    return _finish(img, rng), mask


_GENERATORS = {"blobs": _blobs, "ribs": _ribs, "cracks": _cracks, "patches": _patches}


def make_synthetic_dataset(spec: DatasetSpec, seed: int) -> list[LabeledExample]:
    """Generate spec.n labeled examples; every mask is non-empty and < 60% of area."""
    if spec.family not in _GENERATORS:
        raise DatasetSpecError(f"unknown family {spec.family!r}; choose from {FAMILIES}")
    gen = _GENERATORS[spec.family]
    rng = np.random.default_rng(seed)
    out = []
    size = spec.image_size
    for i in range(spec.n):
        for _attempt in range(20):
            img, mask = gen(rng, size)
            frac = mask.mean()
            if 0.0 < frac < 0.6:
                break
        out.append(
            LabeledExample(
                image=ImageRGB(pixels=img, id=f"{spec.family}-{seed}-{i}"),
                gt_mask=BinaryMask(bits=mask),
                origin="synthetic",
            )
        )
    return out
