"""Global image embeddings fed to the fusion layer.

The pre-trained feature extractor runs outside this package.  What lives here
is the input it expects (a 299 x 299 luminance image stacked into three
channels), the KEMB file format its outputs are exchanged in, and a
deterministic stand-in used when no precomputed embedding exists.

KEMB layout, little-endian: ``b"KEMB"``, ``u32`` version (1), ``u32`` dim
(1001), then ``dim`` float32 values.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np
from PIL import Image

from .colorspace import (RgbImage, luminance_to_gray8, resize_plane_with_padding,
                         srgb_to_lab)

EMBEDDING_DIM = 1001
EXTRACTOR_SIDE = 299
KEMB_MAGIC = b"KEMB"
KEMB_VERSION = 1
_HEADER = struct.Struct("<4sII")


class EmbeddingFormatError(ValueError):
    pass


def extractor_plane(L: np.ndarray, side: int = EXTRACTOR_SIDE) -> np.ndarray:
    """Luminance (L* units) fitted into the extractor's square input, padded white."""
    return resize_plane_with_padding(np.asarray(L), side, fill=100.0)


def _grid_statistics(plane: np.ndarray, cells: int = 8) -> np.ndarray:
    stats = []
    for band in np.array_split(plane, cells, axis=0):
        for block in np.array_split(band, cells, axis=1):
            if block.size:
                stats.extend((block.mean(), block.var()))
            else:
                stats.extend((0.0, 0.0))
    return np.asarray(stats, dtype=np.float64)


def stub_embedding(L_plane: np.ndarray) -> np.ndarray:
    """Deterministic stand-in embedding in [-1, 1].

    Mean and variance over an 8x8 grid of the normalized luminance plane are
    rounded, hashed, and used to seed a generator, so equal planes give equal
    vectors and differing content gives unrelated ones.
    """
    stats = np.round(_grid_statistics(np.asarray(L_plane, dtype=np.float64)), 4) + 0.0
    digest = hashlib.sha256(stats.tobytes()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-1.0, 1.0, EMBEDDING_DIM).astype(np.float32)


def save_embedding(values: np.ndarray, path: str | Path) -> None:
    vec = np.asarray(values, dtype="<f4").reshape(-1)
    if vec.size != EMBEDDING_DIM:
        raise EmbeddingFormatError(
            f"wrong dimension: embedding has {vec.size} values, expected {EMBEDDING_DIM}")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingFormatError("embedding contains non-finite values")
    Path(path).write_bytes(_HEADER.pack(KEMB_MAGIC, KEMB_VERSION, vec.size) + vec.tobytes())


def load_embedding(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, version, dim = _HEADER.unpack_from(raw)
    if magic != KEMB_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != KEMB_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    if dim != EMBEDDING_DIM:
        raise EmbeddingFormatError(
            f"{path}: wrong dimension {dim}, expected {EMBEDDING_DIM}")
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * dim:
        raise EmbeddingFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {4 * dim})")
    vec = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(vec)):
        raise EmbeddingFormatError(f"{path}: non-finite values")
    return vec


class EmbeddingProvider(Protocol):
    def embed(self, image_id: str, luminance: np.ndarray) -> np.ndarray:
        """Embedding for an image given its L* plane (0..100, original size)."""
        ...


class StubProvider:
    """Stand-in for the real extractor; sees the same 299x299 input it would."""

    def embed(self, image_id: str, luminance: np.ndarray) -> np.ndarray:
        plane = extractor_plane(luminance)
        return stub_embedding(plane / 50.0 - 1.0)


class FileProvider:
    """Precomputed KEMB embeddings keyed by image id, with a fallback provider."""

    def __init__(self, paths: Mapping[str, str | Path],
                 fallback: EmbeddingProvider | None = None) -> None:
        self.paths = {k: Path(v) for k, v in paths.items()}
        self.fallback = fallback if fallback is not None else StubProvider()
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, image_id: str, luminance: np.ndarray) -> np.ndarray:
        path = self.paths.get(image_id)
        if path is None:
            return self.fallback.embed(image_id, luminance)
        if image_id not in self._cache:
            self._cache[image_id] = load_embedding(path)
        return self._cache[image_id]


def export_extractor_input(img: RgbImage, path: str | Path) -> None:
    """Write the 299x299 three-channel luminance PNG the extractor consumes.

    Channel values are L* scaled to 0..255, identical across the channels.
    """
    plane = extractor_plane(srgb_to_lab(img).L)
    gray = luminance_to_gray8(plane)
    Image.fromarray(np.stack([gray, gray, gray], axis=-1), mode="RGB").save(
        path, format="PNG")
