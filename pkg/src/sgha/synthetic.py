"""Procedural test images: smooth seeded noise plus random geometric motifs.

These stand in for generated reference images. Output is already 8-bit
quantized (values k/255) so a PPM round trip is lossless.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .io import dequantize, quantize


def _smooth_noise(rng, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1, 3))
    t = np.linspace(0.0, cells, size, endpoint=False)
    i0 = np.floor(t).astype(int)
    f = t - i0
    f = f * f * (3 - 2 * f)
    a = coarse[i0][:, i0] * (1 - f)[None, :, None] + coarse[i0][:, i0 + 1] * f[None, :, None]
    b = coarse[i0 + 1][:, i0] * (1 - f)[None, :, None] + coarse[i0 + 1][:, i0 + 1] * f[None, :, None]
    return a * (1 - f)[:, None, None] + b * f[:, None, None]


def synthetic_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.6 * _smooth_noise(rng, size, int(rng.integers(2, 6))) + 0.2
    for _ in range(int(rng.integers(1, 4))):
        color = rng.uniform(0, 1, size=3)
        kind = rng.integers(0, 3)
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.08, 0.3)
        if kind == 0:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        elif kind == 1:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * rng.uniform(0.4, 1.0))
        else:
            freq = rng.uniform(3, 10)
            ang = rng.uniform(0, np.pi)
            mask = np.sin(2 * np.pi * freq * (xx * np.cos(ang) + yy * np.sin(ang))) > 0.3
        img[mask] = 0.3 * img[mask] + 0.7 * color
    img += rng.normal(0.0, 0.03, size=img.shape)
    return dequantize(quantize(np.clip(img, 0.0, 1.0)))


def synthetic_images(count: int, seed: int, size: int = 64) -> list[np.ndarray]:
    if count < 1:
        raise ParameterError(f"image count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return [synthetic_image(rng, size) for _ in range(count)]


TARGET_TEXTS = (
    "a photo of a dog playing in the snow",
    "a red sports car parked on a street",
    "a bowl of fresh fruit on a wooden table",
    "an astronaut riding a horse on the moon",
    "a lighthouse on a rocky coast at sunset",
    "a cat sleeping on a laptop keyboard",
    "a group of people hiking in the mountains",
    "a plate of spaghetti with tomato sauce",
    "a yellow school bus in the rain",
    "a colorful parrot sitting on a branch",
    "a city skyline at night with lights",
    "a child flying a kite on the beach",
    "a vase of sunflowers by a window",
    "a snowy cabin in a pine forest",
    "a man surfing a large ocean wave",
    "a stack of old books on a shelf",
    "a hot air balloon over green fields",
    "a black and white photo of a train",
    "a cup of coffee with latte art",
    "a robot standing in an empty room",
)
