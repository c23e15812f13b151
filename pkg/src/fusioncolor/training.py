"""Dataset manifests, example preparation, the training loop and evaluation."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .adam import AdamState, adam_step
from .colorspace import load_rgb, normalize, resize_with_padding, srgb_to_lab
from .embedding import EmbeddingProvider, FileProvider, StubProvider
from .model import ModelParameters, init_parameters, model_forward, save_checkpoint
from .tensor import Tensor, mse_loss, no_grad

log = logging.getLogger(__name__)

LAST_CHECKPOINT = "last.koal"
BEST_CHECKPOINT = "best.koal"


class ManifestError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    embedding: Path | None = None

    @property
    def image_id(self) -> str:
        return str(self.image)


@dataclass
class DatasetManifest:
    """Image paths (with optional precomputed embeddings) under a root directory.

    On disk this is UTF-8 text, one entry per line:
    ``image_path[TAB]embedding_path``; relative paths resolve against the
    manifest's directory and blank lines are ignored.
    """

    entries: list[ManifestEntry]
    root: Path = Path(".")

    def __post_init__(self) -> None:
        seen: set[Path] = set()
        for e in self.entries:
            if e.image in seen:
                raise ManifestError(f"duplicate image path: {e.image}")
            seen.add(e.image)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"manifest not found: {path}")
        root = path.parent
        entries = []
        text = path.read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\r").split("\t")
            if len(fields) > 2 or not fields[0]:
                raise ManifestError(f"{path}:{lineno}: expected image_path[TAB]embedding_path")
            image = _resolve(root, fields[0])
            embedding = _resolve(root, fields[1]) if len(fields) == 2 and fields[1] else None
            for p in (image, embedding):
                if p is not None and not p.exists():
                    raise ManifestError(f"{path}:{lineno}: file not found: {p}")
            entries.append(ManifestEntry(image, embedding))
        return cls(entries, root)

    def save(self, path: str | Path) -> None:
        lines = []
        for e in self.entries:
            lines.append(str(e.image) if e.embedding is None else f"{e.image}\t{e.embedding}")
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    def provider(self) -> EmbeddingProvider:
        """File-backed embeddings where listed, the stub elsewhere."""
        paths = {e.image_id: e.embedding for e in self.entries if e.embedding is not None}
        return FileProvider(paths, fallback=StubProvider())


def _resolve(root: Path, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else root / p


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    validation_fraction: float = 0.10
    train_side: int = 224
    checkpoint_dir: Path | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")
        if self.train_side < 8 or self.train_side % 8:
            raise ValueError(f"train_side must be a positive multiple of 8, got {self.train_side}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    skipped: list[str] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)
    params: ModelParameters = field(default_factory=dict, repr=False)


class Example(NamedTuple):
    image_id: str
    L: Tensor  # [1, side, side], normalized luminance
    target_ab: Tensor  # [2, side, side], normalized chroma
    embedding: np.ndarray  # [1001]


def split_dataset(entries: Sequence[ManifestEntry], fraction: float, seed: int
                  ) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Seeded shuffle, then hold out ``round(n * fraction)`` entries (at least 1)."""
    n = len(entries)
    if n < 2:
        raise ValueError(f"need at least 2 entries to split, got {n}")
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie strictly between 0 and 1, got {fraction}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(n * fraction + 0.5)), n - 1)
    val = [entries[i] for i in order[:n_val]]
    train = [entries[i] for i in order[n_val:]]
    return train, val


def prepare_example(path: str | Path, side: int, provider: EmbeddingProvider,
                    image_id: str | None = None) -> Example:
    img = load_rgb(path)
    if img.width == 0 or img.height == 0:
        raise ValueError(f"{path}: zero-sized image")
    image_id = str(path) if image_id is None else image_id
    embedding = np.asarray(provider.embed(image_id, srgb_to_lab(img).L), dtype=np.float32)
    planes = normalize(srgb_to_lab(resize_with_padding(img, side)))
    return Example(
        image_id=image_id,
        L=Tensor(planes.L[None].astype(np.float32)),
        target_ab=Tensor(planes.ab.astype(np.float32)),
        embedding=embedding,
    )


def prepare_examples(entries: Sequence[ManifestEntry], side: int,
                     provider: EmbeddingProvider, workers: int = 1
                     ) -> tuple[list[Example], list[str]]:
    """Prepare entries in order; unreadable ones are logged and skipped."""

    def one(entry: ManifestEntry) -> Example | str:
        try:
            return prepare_example(entry.image, side, provider, entry.image_id)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", entry.image, exc)
            return entry.image_id

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    examples = [r for r in results if isinstance(r, Example)]
    skipped = [r for r in results if isinstance(r, str)]
    return examples, skipped


def _stack(batch: Sequence[Example]) -> tuple[Tensor, Tensor, np.ndarray]:
    L = Tensor(np.stack([ex.L.data for ex in batch]))
    ab = Tensor(np.stack([ex.target_ab.data for ex in batch]))
    emb = np.stack([ex.embedding for ex in batch])
    return L, ab, emb


def evaluate_examples(examples: Sequence[Example], params: ModelParameters,
                      batch_size: int = 8) -> float:
    """Mean per-image loss over prepared examples, without recording gradients."""
    if not examples:
        raise ValueError("cannot evaluate an empty set")
    total = 0.0
    with no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start:start + batch_size]
            L, ab, emb = _stack(batch)
            loss = mse_loss(model_forward(L, emb, params), ab)
            total += loss.item() * len(batch)
    return total / len(examples)


def evaluate(entries: Sequence[ManifestEntry], params: ModelParameters,
             provider: EmbeddingProvider, side: int = 224, batch_size: int = 8) -> float:
    if not entries:
        raise ValueError("cannot evaluate an empty set")
    examples, _ = prepare_examples(entries, side, provider)
    if not examples:
        raise TrainingError("no readable images to evaluate")
    return evaluate_examples(examples, params, batch_size)


def train(manifest: DatasetManifest, cfg: TrainConfig,
          provider: EmbeddingProvider | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainReport:
    """Minimise the chroma loss with Adam; returns per-epoch losses.

    A single-entry manifest trains without a validation split.  When
    ``cfg.checkpoint_dir`` is set, ``last.koal`` is written every epoch and
    ``best.koal`` whenever the validation loss (training loss if there is no
    validation split) improves.
    """
    provider = provider if provider is not None else manifest.provider()
    entries = list(manifest.entries)
    if not entries:
        raise TrainingError("manifest is empty")
    if len(entries) >= 2:
        train_entries, val_entries = split_dataset(entries, cfg.validation_fraction, cfg.seed)
    else:
        log.warning("only one image: training without a validation split")
        train_entries, val_entries = entries, []

    train_set, skipped = prepare_examples(train_entries, cfg.train_side, provider, cfg.workers)
    val_set, val_skipped = prepare_examples(val_entries, cfg.train_side, provider, cfg.workers)
    if not train_set:
        raise TrainingError("no readable training images")

    report = train_examples(train_set, val_set, cfg, on_epoch)
    report.skipped = skipped + val_skipped
    return report


def train_examples(train_set: Sequence[Example], val_set: Sequence[Example], cfg: TrainConfig,
                   on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainReport:
    """Training loop over already prepared examples."""
    if not train_set:
        raise TrainingError("no training examples")
    params = init_parameters(cfg.seed)
    state = AdamState(learning_rate=cfg.learning_rate)
    report = TrainReport(train_ids=[ex.image_id for ex in train_set],
                         val_ids=[ex.image_id for ex in val_set], params=params)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    shuffler = np.random.default_rng([cfg.seed, 1])
    best = np.inf
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = shuffler.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            L, ab, emb = _stack(batch)
            for p in params.values():
                p.grad = None
            loss = mse_loss(model_forward(L, emb, params), ab)
            loss.backward()
            adam_step(params, state)
            total += loss.item() * len(batch)
        train_loss = total / len(train_set)
        val_loss = evaluate_examples(val_set, params, cfg.batch_size) if val_set else None
        if not np.isfinite(train_loss) or (val_loss is not None and not np.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")

        if ckpt_dir is not None:
            report.checkpoint = ckpt_dir / LAST_CHECKPOINT
            save_checkpoint(params, report.checkpoint)
            score = val_loss if val_loss is not None else train_loss
            if score < best:
                best = score
                report.best_checkpoint = ckpt_dir / BEST_CHECKPOINT
                save_checkpoint(params, report.best_checkpoint)
        record = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - started)
        report.epochs.append(record)
        log.info("epoch %d train=%.6f val=%s", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(record)
    return report
