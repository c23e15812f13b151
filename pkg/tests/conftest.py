from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

ACCEPTANCE_RESULTS: list[str] = []


def smooth_rgb(seed: int, height: int, width: int | None = None) -> np.ndarray:
    """Smooth, in-gamut colour pattern built from low-frequency sinusoids."""
    width = height if width is None else width
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    yy, xx = yy / max(height, width), xx / max(height, width)
    img = np.empty((height, width, 3))
    for c in range(3):
        fx, fy = rng.uniform(0.5, 2.5, 2)
        px, py = rng.uniform(0, 2 * np.pi, 2)
        img[..., c] = 0.5 + 0.35 * np.sin(2 * np.pi * fx * xx + px) * np.cos(2 * np.pi * fy * yy + py)
    return np.rint(img * 255).astype(np.uint8)


def scene_rgb(seed: int, size: int) -> np.ndarray:
    """Landscape-like fixture: blue sky over green ground with a sun and a red patch.

    Colour follows position and brightness consistently across seeds, so a
    model trained on some scenes has something to transfer to others.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    horizon = rng.uniform(0.35, 0.65) + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * xx + rng.uniform(0, 6))
    sky = np.stack([90 + 60 * yy, 150 + 50 * yy, np.full_like(yy, 235)], axis=-1)
    ground = np.stack([40 + 30 * yy, 110 + 60 * (1 - yy), 40 + 10 * yy], axis=-1)
    img = np.where((yy < horizon)[..., None], sky, ground)
    cy, cx, r = rng.uniform(0.1, 0.3), rng.uniform(0.15, 0.85), rng.uniform(0.06, 0.12)
    img[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = (250, 200, 60)
    py, px, pr = rng.uniform(0.75, 0.9), rng.uniform(0.15, 0.85), rng.uniform(0.05, 0.1)
    img[(yy - py) ** 2 + (xx - px) ** 2 < pr * pr] = (200, 40, 50)
    img += rng.normal(0, 4, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_png(path: Path, pixels: np.ndarray) -> Path:
    Image.fromarray(pixels).save(path)
    return path


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def image_dir(tmp_path: Path):
    """Factory writing smooth colour PNGs; returns their paths."""

    def make(count: int, height: int = 32, width: int | None = None, seed: int = 0) -> list[Path]:
        return [write_png(tmp_path / f"img_{seed}_{i:03d}.png", smooth_rgb(seed * 1000 + i, height, width))
                for i in range(count)]

    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
