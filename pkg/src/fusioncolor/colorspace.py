"""sRGB <-> CIE L*a*b* (D65), [-1, 1] scaling, and image geometry helpers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import Tensor

# linear sRGB -> XYZ, D65
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# white derived from the matrix so that r=g=b maps to a=b=0 exactly
D65_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
CHROMA_SCALE = 128.0
WHITE = (255, 255, 255)


@dataclass(frozen=True)
class RgbImage:
    """8-bit sRGB image, ``pixels`` shaped ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {px.shape}")
        object.__setattr__(self, "pixels", px.astype(np.uint8, copy=False))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LabImage:
    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        if not (self.L.shape == self.a.shape == self.b.shape):
            raise ValueError("L, a and b planes must share a shape")

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]


@dataclass(frozen=True)
class NormalizedPlanes:
    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def ab(self) -> np.ndarray:
        return np.stack([self.a, self.b])


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(f: np.ndarray) -> np.ndarray:
    return np.where(f > _DELTA, f ** 3, 3 * _DELTA ** 2 * (f - 4.0 / 29.0))


def srgb_to_lab(img: RgbImage) -> LabImage:
    c = img.pixels.astype(np.float64) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T / D65_WHITE
    fx, fy, fz = (_f(xyz[..., i]) for i in range(3))
    L = 116.0 * fy - 16.0
    return LabImage(L=np.clip(L, 0.0, 100.0), a=500.0 * (fx - fy), b=200.0 * (fy - fz))


def lab_to_srgb(img: LabImage) -> RgbImage:
    """Inverse of :func:`srgb_to_lab`; out-of-gamut results are clamped."""
    fy = (np.asarray(img.L, dtype=np.float64) + 16.0) / 116.0
    fx = fy + np.asarray(img.a, dtype=np.float64) / 500.0
    fz = fy - np.asarray(img.b, dtype=np.float64) / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * D65_WHITE
    linear = np.clip(xyz @ _XYZ_TO_RGB.T, 0.0, 1.0)
    c = np.where(linear <= 0.0031308, 12.92 * linear,
                 1.055 * linear ** (1 / 2.4) - 0.055)
    return RgbImage(np.clip(np.rint(c * 255.0), 0, 255).astype(np.uint8))


def normalize(img: LabImage) -> NormalizedPlanes:
    return NormalizedPlanes(L=img.L / 50.0 - 1.0, a=img.a / CHROMA_SCALE,
                            b=img.b / CHROMA_SCALE)


def denormalize(p: NormalizedPlanes) -> LabImage:
    return LabImage(L=(p.L + 1.0) * 50.0, a=p.a * CHROMA_SCALE, b=p.b * CHROMA_SCALE)


def fitted_size(width: int, height: int, side: int) -> tuple[int, int]:
    """Size of the content after scaling the longest edge to ``side``."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image has zero size ({width}x{height})")
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    scale = side / max(width, height)
    return (max(1, min(side, int(width * scale + 0.5))),
            max(1, min(side, int(height * scale + 0.5))))


def resize_with_padding(img: RgbImage, side: int) -> RgbImage:
    """Fit ``img`` into a ``side`` x ``side`` white canvas, aspect ratio kept.

    The longest edge is resampled bilinearly to ``side`` and the content is
    centred; leftover rows or columns stay pure white.
    """
    w, h = fitted_size(img.width, img.height, side)
    src = Image.fromarray(img.pixels, mode="RGB")
    if (w, h) != src.size:
        src = src.resize((w, h), Image.Resampling.BILINEAR)
    canvas = Image.new("RGB", (side, side), WHITE)
    canvas.paste(src, ((side - w) // 2, (side - h) // 2))
    return RgbImage(np.asarray(canvas))


def resize_plane_with_padding(plane: np.ndarray, side: int, fill: float) -> np.ndarray:
    """Same geometry as :func:`resize_with_padding` for one real-valued plane."""
    h, w = plane.shape
    nw, nh = fitted_size(w, h, side)
    content = plane.astype(np.float32)
    if (nw, nh) != (w, h):
        resized = Image.fromarray(content, mode="F").resize(
            (nw, nh), Image.Resampling.BILINEAR)
        content = np.asarray(resized, dtype=np.float32)
    out = np.full((side, side), fill, dtype=np.float32)
    top, left = (side - nh) // 2, (side - nw) // 2
    out[top:top + nh, left:left + nw] = content
    return out


def stack_luminance3(L_n: np.ndarray) -> Tensor:
    plane = np.asarray(L_n)
    return Tensor(np.stack([plane, plane, plane]))


def load_rgb(path: str | Path) -> RgbImage:
    with Image.open(path) as im:
        return RgbImage(np.asarray(im.convert("RGB")))


def save_rgb(img: RgbImage, path: str | Path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


def load_luminance(path: str | Path) -> np.ndarray:
    """L* plane (0..100) of an image file.

    Grayscale files are read directly as L* scaled from 0..255; colour files
    are converted through Lab.
    """
    with Image.open(path) as im:
        if im.mode in ("1", "L", "LA"):
            gray = np.asarray(im.convert("L"), dtype=np.float64)
            return gray * (100.0 / 255.0)
        if im.mode in ("I", "I;16", "F"):
            raise ValueError(f"{path}: only 8-bit images are supported (mode {im.mode})")
        return srgb_to_lab(RgbImage(np.asarray(im.convert("RGB")))).L


def luminance_to_gray8(L: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(L) * 2.55), 0, 255).astype(np.uint8)
