"""Deterministic synthetic digit images for environments without MNIST files.

Renders a 5x7 glyph per class into a 28x28 grid with per-sample affine
jitter, stroke intensity, blur and pixel noise, then quantizes to byte
precision so IDX round-trips are exact. Statistically much simpler than
MNIST, but class-structured enough to train the classifier and the
autoencoders at desk scale.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledDataset

_GLYPHS = [
    ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),  # 0
    ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),  # 1
    ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),  # 2
    ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),  # 3
    ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),  # 4
    ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),  # 5
    ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),  # 6
    ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),  # 7
    ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),  # 8
    ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),  # 9
]

SIZE = 28


def _glyph_bank() -> np.ndarray:
    bank = np.zeros((10, 9, 7), dtype=np.float32)  # zero border for clean sampling
    for k, rows in enumerate(_GLYPHS):
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                bank[k, r + 1, c + 1] = float(ch == "1")
    return bank


def _blur3(x: np.ndarray) -> np.ndarray:
    # separable [1, 2, 1]/4 kernel with zero padding
    p = np.pad(x, ((0, 0), (1, 1), (0, 0)))
    x = (p[:, :-2] + 2.0 * x + p[:, 2:]) / 4.0
    p = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    return (p[:, :, :-2] + 2.0 * x + p[:, :, 2:]) / 4.0


def render_digits(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Render one jittered digit image per label; returns (n, 28, 28) in [0, 1]."""
    n = len(labels)
    bank = _glyph_bank()
    scale_y = rng.uniform(2.3, 3.1, size=n).astype(np.float32)
    scale_x = scale_y * rng.uniform(0.85, 1.15, size=n).astype(np.float32)
    theta = rng.uniform(-0.18, 0.18, size=n).astype(np.float32)
    off_y = rng.uniform(-2.0, 2.0, size=n).astype(np.float32)
    off_x = rng.uniform(-2.0, 2.0, size=n).astype(np.float32)
    intensity = rng.uniform(0.65, 1.0, size=n).astype(np.float32)

    yy, xx = np.meshgrid(
        np.arange(SIZE, dtype=np.float32), np.arange(SIZE, dtype=np.float32), indexing="ij"
    )
    dy = yy[None] - (13.5 + off_y)[:, None, None]
    dx = xx[None] - (13.5 + off_x)[:, None, None]
    cos = np.cos(theta)[:, None, None]
    sin = np.sin(theta)[:, None, None]
    # inverse affine into padded-glyph coordinates (glyph center at (4, 3))
    gy = (cos * dy + sin * dx) / scale_y[:, None, None] + 4.0
    gx = (-sin * dy + cos * dx) / scale_x[:, None, None] + 3.0

    gy = np.clip(gy, 0.0, bank.shape[1] - 1.001)
    gx = np.clip(gx, 0.0, bank.shape[2] - 1.001)
    y0 = gy.astype(np.int64)
    x0 = gx.astype(np.int64)
    fy = gy - y0
    fx = gx - x0
    lab = labels[:, None, None]
    v00 = bank[lab, y0, x0]
    v01 = bank[lab, y0, x0 + 1]
    v10 = bank[lab, y0 + 1, x0]
    v11 = bank[lab, y0 + 1, x0 + 1]
    img = (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )
    img = _blur3(img * intensity[:, None, None])
    img = img + rng.normal(0.0, 0.02, size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    # byte quantization keeps IDX serialization exact
    return (np.rint(img * 255.0) / 255.0).astype(np.float32)


def make_digits(n_train: int, n_test: int, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Build balanced train/test splits of synthetic digits."""
    rng = np.random.default_rng(seed)
    splits = []
    for n, tag in ((n_train, "train"), (n_test, "test")):
        labels = rng.permutation(np.arange(n, dtype=np.int64) % 10)
        images = render_digits(labels, rng)
        splits.append(LabeledDataset(images=images, labels=labels, split_tag=tag))
    return splits[0], splits[1]
