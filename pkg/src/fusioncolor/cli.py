"""Command-line interface for training and running the colorization network.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .colorspace import (LabImage, NormalizedPlanes, denormalize, lab_to_srgb,
                         load_luminance, load_rgb, save_rgb)
from .embedding import (EmbeddingFormatError, StubProvider, export_extractor_input,
                        load_embedding)
from .model import (DOWNSCALE, PARAMETER_COUNT, CheckpointError, ModelParameters,
                    load_checkpoint, model_forward)
from .tensor import Tensor, no_grad
from .training import (DatasetManifest, ManifestError, TrainConfig, TrainingError,
                       evaluate, train)

log = logging.getLogger("fusioncolor")


class UsageError(Exception):
    pass


def pad_to_multiple(plane: np.ndarray, multiple: int = DOWNSCALE) -> np.ndarray:
    """Reflect-pad bottom/right so both dims are multiples of ``multiple``."""
    h, w = plane.shape
    pad_h, pad_w = -h % multiple, -w % multiple
    if not pad_h and not pad_w:
        return plane
    # reflect needs at least 2 samples along an axis
    mode = "reflect" if min(h, w) > 1 else "edge"
    return np.pad(plane, ((0, pad_h), (0, pad_w)), mode=mode)


def predict_ab(L: np.ndarray, params: ModelParameters, embedding: np.ndarray) -> np.ndarray:
    """Normalized a*b* planes ``[2, H, W]`` for an L* plane of any size."""
    h, w = L.shape
    padded = pad_to_multiple(np.asarray(L, dtype=np.float64) / 50.0 - 1.0)
    with no_grad():
        out = model_forward(Tensor(padded[None].astype(np.float32)),
                            np.asarray(embedding, dtype=np.float32), params)
    return out.data[:, :h, :w]


def colorize_luminance(L: np.ndarray, params: ModelParameters, embedding: np.ndarray):
    """Combine the input luminance with predicted chroma into an sRGB image."""
    ab = predict_ab(L, params, embedding).astype(np.float64)
    lab = denormalize(NormalizedPlanes(L=np.asarray(L) / 50.0 - 1.0, a=ab[0], b=ab[1]))
    # keep the exact input luminance rather than its normalized round trip
    return lab_to_srgb(LabImage(L=np.asarray(L, dtype=np.float64), a=lab.a, b=lab.b))


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train the network on a manifest of images")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--side", type=int, default=224, help="training image side in pixels")
    p.add_argument("--out", type=Path, default=Path("checkpoints"),
                   help="directory for last.koal / best.koal")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)


def _add_colorize(sub) -> None:
    p = sub.add_parser("colorize", help="colorize grayscale or color PNGs")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--embedding", type=Path,
                   help="KEMB embedding to use (single input only); stub otherwise")
    p.add_argument("--output", "-o", required=True, type=Path,
                   help="output PNG, or a directory when several inputs are given")
    p.set_defaults(func=cmd_colorize)


def _add_export(sub) -> None:
    p = sub.add_parser("export-inception-inputs",
                       help="write 299x299 stacked-luminance PNGs for an external extractor")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    p.set_defaults(func=cmd_export_inception_inputs)


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="mean chroma loss of a checkpoint over a manifest")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--side", type=int, default=224)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=cmd_eval)


def _add_inspect(sub) -> None:
    p = sub.add_parser("inspect-checkpoint", help="list the tensors in a checkpoint")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_inspect_checkpoint)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusioncolor", description=__doc__.splitlines()[0],
                                     epilog="exit codes: 0 success, 1 runtime failure, 2 usage error")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_train, _add_colorize, _add_export, _add_eval, _add_inspect):
        add(sub)
    return parser


def _manifest(path: Path) -> DatasetManifest:
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    try:
        return DatasetManifest.load(path)
    except ManifestError as exc:
        raise UsageError(str(exc)) from exc


def _fmt(x: float | None) -> str:
    return "nan" if x is None else f"{x:.6f}"


def cmd_train(args) -> int:
    manifest = _manifest(args.manifest)
    try:
        cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                          epochs=args.epochs, seed=args.seed,
                          validation_fraction=args.val_fraction, train_side=args.side,
                          checkpoint_dir=args.out, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    def show(rec) -> None:
        print(f"epoch {rec.epoch} train={_fmt(rec.train_loss)} val={_fmt(rec.val_loss)}",
              flush=True)

    report = train(manifest, cfg, on_epoch=show)
    if report.skipped:
        print(f"skipped {len(report.skipped)} unreadable image(s)", file=sys.stderr)
    if report.checkpoint is not None:
        print(f"checkpoint {report.checkpoint}")
    return 0


def cmd_colorize(args) -> int:
    if args.embedding is not None and len(args.inputs) > 1:
        raise UsageError("--embedding can only be used with a single input")
    params = load_checkpoint(args.checkpoint)
    if len(args.inputs) > 1:
        args.output.mkdir(parents=True, exist_ok=True)
        targets = [args.output / (src.stem + ".png") for src in args.inputs]
    else:
        targets = [args.output]
    stub = StubProvider()
    for src, dst in zip(args.inputs, targets):
        L = load_luminance(src)
        if args.embedding is not None:
            embedding = load_embedding(args.embedding)
        else:
            embedding = stub.embed(str(src), L)
        save_rgb(colorize_luminance(L, params, embedding), dst)
        print(f"wrote {dst}")
    return 0


def cmd_export_inception_inputs(args) -> int:
    manifest = _manifest(args.manifest)
    if not manifest.entries:
        print("warning: manifest is empty, nothing exported", file=sys.stderr)
        return 0
    args.out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for i, entry in enumerate(manifest.entries):
        dst = args.out_dir / f"{i:05d}_{entry.image.stem}.png"
        try:
            export_extractor_input(load_rgb(entry.image), dst)
        except (OSError, ValueError) as exc:
            print(f"warning: {entry.image}: {exc}", file=sys.stderr)
            continue
        written += 1
        print(f"{entry.image}\t{dst}")
    return 0 if written else 1


def cmd_eval(args) -> int:
    manifest = _manifest(args.manifest)
    if not manifest.entries:
        raise UsageError("manifest is empty")
    params = load_checkpoint(args.checkpoint)
    loss = evaluate(manifest.entries, params, manifest.provider(), side=args.side,
                    batch_size=args.batch_size)
    print(f"val_loss={loss:.6f}")
    return 0


def cmd_inspect_checkpoint(args) -> int:
    params = load_checkpoint(args.path)
    for name, t in params.items():
        print(f"{name}\t{'x'.join(map(str, t.shape))}")
    print(f"total {sum(t.data.size for t in params.values())} (expected {PARAMETER_COUNT})")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, EmbeddingFormatError, TrainingError, ManifestError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
