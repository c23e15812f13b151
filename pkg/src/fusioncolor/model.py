"""Encoder / fusion / decoder colorization network and its checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"KOAL"  u32 version=1  u32 tensor_count
    per tensor: u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims,
                prod(dims) x float32
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .embedding import EMBEDDING_DIM
from .tensor import (ShapeError, Tensor, concat_depth, conv2d, relu, tanh_act,
                     tile_spatial, upsample_nearest2x)

ModelParameters = Dict[str, Tensor]

# (kernels, kernel size, stride); every layer is followed by ReLU
ENCODER_LAYERS = [
    (64, 3, 2), (128, 3, 1), (128, 3, 2), (256, 3, 1),
    (256, 3, 2), (512, 3, 1), (512, 3, 1), (256, 3, 1),
]
ENCODER_DEPTH = ENCODER_LAYERS[-1][0]
FUSED_DEPTH = ENCODER_DEPTH + EMBEDDING_DIM
FUSION_KERNELS = 256
# "up" marks a 2x nearest-neighbour upsampling; the final conv uses tanh
DECODER_LAYERS = [128, "up", 64, 64, "up", 32, 2, "up"]
DOWNSCALE = 8


def parameter_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for i, (c_out, k, _) in enumerate(ENCODER_LAYERS):
        shapes[f"encoder.{i}.kernel"] = (c_out, c_in, k, k)
        shapes[f"encoder.{i}.bias"] = (c_out,)
        c_in = c_out
    shapes["fusion.kernel"] = (FUSION_KERNELS, FUSED_DEPTH, 1, 1)
    shapes["fusion.bias"] = (FUSION_KERNELS,)
    c_in = FUSION_KERNELS
    convs = [c for c in DECODER_LAYERS if c != "up"]
    for i, c_out in enumerate(convs):
        shapes[f"decoder.{i}.kernel"] = (c_out, c_in, 3, 3)
        shapes[f"decoder.{i}.bias"] = (c_out,)
        c_in = c_out
    return shapes


PARAMETER_SHAPES = parameter_shapes()
PARAMETER_COUNT = sum(int(np.prod(s)) for s in PARAMETER_SHAPES.values())


def init_parameters(seed: int, dtype=np.float32) -> ModelParameters:
    """He-uniform kernels (bound sqrt(6 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    params: ModelParameters = {}
    for name, shape in PARAMETER_SHAPES.items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True)
    total = sum(p.data.size for p in params.values())
    assert total == PARAMETER_COUNT, (total, PARAMETER_COUNT)
    return params


def cast_parameters(params: ModelParameters, dtype) -> ModelParameters:
    return {k: Tensor(p.data.astype(dtype), requires_grad=True) for k, p in params.items()}


def _check_input(L: Tensor) -> None:
    if L.ndim not in (3, 4) or L.shape[-3] != 1:
        raise ShapeError(f"luminance must be [1,H,W] or [N,1,H,W], got {L.shape}")
    h, w = L.shape[-2:]
    if h % DOWNSCALE or w % DOWNSCALE or h == 0 or w == 0:
        raise ShapeError(f"height and width must be positive multiples of "
                         f"{DOWNSCALE}, got {h}x{w}")


def encoder_forward(L: Tensor, p: ModelParameters) -> Tensor:
    L = L if isinstance(L, Tensor) else Tensor(L)
    _check_input(L)
    x = L
    for i, (_, _, stride) in enumerate(ENCODER_LAYERS):
        x = relu(conv2d(x, p[f"encoder.{i}.kernel"], p[f"encoder.{i}.bias"], stride))
    return x


def _embedding_tensor(emb, like: Tensor) -> Tensor:
    if not isinstance(emb, Tensor):
        emb = Tensor(np.asarray(emb, dtype=like.dtype))
    if emb.shape[-1] != EMBEDDING_DIM:
        raise ShapeError(f"embedding must have {EMBEDDING_DIM} values, got {emb.shape}")
    batched = like.ndim == 4
    if batched and emb.shape != (like.shape[0], EMBEDDING_DIM):
        raise ShapeError(f"batch of {like.shape[0]} needs embeddings shaped "
                         f"({like.shape[0]}, {EMBEDDING_DIM}), got {emb.shape}")
    if not batched and emb.shape != (EMBEDDING_DIM,):
        raise ShapeError(f"single image needs a ({EMBEDDING_DIM},) embedding, got {emb.shape}")
    return emb


def fuse(enc: Tensor, emb) -> Tensor:
    """Tile the embedding over the encoder grid and append it as channels."""
    emb = _embedding_tensor(emb, enc)
    h, w = enc.shape[-2:]
    return concat_depth(enc, tile_spatial(emb, h, w))


def fusion_forward(enc: Tensor, emb, p: ModelParameters) -> Tensor:
    fused = fuse(enc, emb)
    return relu(conv2d(fused, p["fusion.kernel"], p["fusion.bias"]))


def decoder_forward(fused: Tensor, p: ModelParameters) -> Tensor:
    x = fused
    conv_index = 0
    last = sum(1 for c in DECODER_LAYERS if c != "up") - 1
    for layer in DECODER_LAYERS:
        if layer == "up":
            x = upsample_nearest2x(x)
            continue
        x = conv2d(x, p[f"decoder.{conv_index}.kernel"], p[f"decoder.{conv_index}.bias"])
        x = tanh_act(x) if conv_index == last else relu(x)
        conv_index += 1
    return x


def model_forward(L: Tensor, emb, p: ModelParameters) -> Tensor:
    """Predict normalized a*b* planes ``[2, H, W]`` from luminance ``[1, H, W]``.

    Batches (``[N, 1, H, W]`` with ``[N, 1001]`` embeddings) are also accepted.
    """
    return decoder_forward(fusion_forward(encoder_forward(L, p), emb, p), p)


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"KOAL"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(p: ModelParameters, path: str | Path) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(p))]
    for name, t in p.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes, path) -> None:
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def load_checkpoint(path: str | Path) -> ModelParameters:
    """Read a checkpoint, checking names and shapes against the architecture."""
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    version, count = r.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: tensor name is not utf-8") from exc
        if name not in PARAMETER_SHAPES:
            raise CheckpointError(f"{path}: unknown tensor '{name}'")
        if name in loaded:
            raise CheckpointError(f"{path}: duplicate tensor '{name}'")
        (ndim,) = r.unpack("<B", f"ndim of '{name}'")
        dims = r.unpack(f"<{ndim}I", f"dims of '{name}'")
        expected = PARAMETER_SHAPES[name]
        if tuple(dims) != expected:
            raise CheckpointError(
                f"{path}: shape mismatch for '{name}': {tuple(dims)} != {expected}")
        size = int(np.prod(dims))
        payload = r.take(4 * size, f"data of '{name}'")
        loaded[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)

    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    missing = [n for n in PARAMETER_SHAPES if n not in loaded]
    if missing:
        raise CheckpointError(f"{path}: missing tensor(s): {', '.join(missing)}")
    return {name: Tensor(loaded[name], requires_grad=True) for name in PARAMETER_SHAPES}
