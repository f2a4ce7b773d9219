"""Training loop: sample pairs, encode, project, contrastive loss, SGD.

Each epoch visits every training pair group exactly once, in a seeded
shuffle, drawing one (image variant, caption variant) combination per group.
Short trailing batches are dropped entirely, so every step sees a full
complement of in-batch negatives. Validation loss is computed on the groups'
origin pairs only (variant 0, caption 0), making the series comparable across
epochs and between augmented and non-augmented runs.

Images are loaded once, expanded into their five variants, block-mean
downsampled to the encoder's input side, and cached flat in float32.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment
from . import autodiff as ad
from . import encoders as enc
from . import loss as L
from .synthdata import Corpus, PatientRecord


class DataError(ValueError):
    """The requested split has no usable records."""


class TrainingError(RuntimeError):
    """Training diverged; message carries epoch/batch context."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    temperature: float = 1.0
    n: int = 64
    m: int = 128
    d: int = 32
    seed: int = 0
    augmentation: bool = True
    embed_dim: int = 32
    seq_len: int = 24
    hw: int = 56
    channels: tuple[int, int, int] = (8, 12, 16)
    pooling: str = "gap"

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "temperature",
                     "n", "m", "d", "embed_dim", "seq_len", "hw"):
            if getattr(self, name) <= 0:
                raise L.ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise L.ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 2:
            raise L.ConfigError("batch_size must be >= 2: the loss needs in-batch negatives")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small-corpus preset: embedding dimensions scaled down, with the
        batch size, step size, and target temperature set so plain SGD
        converges within the short epoch budget. Cosine logits live in
        [-1, 1], which caps the best per-pair softmax probability; the small
        batch keeps that cap (and so the loss floor) low."""
        base = dict(
            learning_rate=0.5,
            temperature=0.01,
            epochs=30,
            batch_size=4,
            n=64,
            m=128,
            d=32,
            seed=7,
            pooling="flatten",
        )
        base.update(overrides)
        return cls(**base)

    def encoder_config(self) -> enc.EncoderConfig:
        return enc.EncoderConfig(
            n=self.n, m=self.m, d=self.d, embed_dim=self.embed_dim,
            seq_len=self.seq_len, hw=self.hw, channels=self.channels,
            pooling=self.pooling,
        )


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int | None
    wall_seconds: float
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None


def make_batches(
    records: list[PatientRecord],
    batch_size: int,
    seed: int,
    epoch: int,
    augmentation: bool = True,
    captions: dict[int, list[str]] | None = None,
) -> list[list[tuple[PatientRecord, int, int]]]:
    """Seeded per-epoch pair sampling: one (variant, caption) draw per group,
    shuffled, chunked; the trailing short batch is dropped.

    When caption texts are supplied, colliding caption draws are redrawn so
    a batch never scores two different images against the same string. Such
    a pair is a false negative the loss cannot resolve, and the short
    templates repeat often across records of one stage. Redraw keeps the
    one-caption-per-occurrence rule and stays seed-deterministic; a record
    whose six captions are all taken keeps its original draw.
    """
    if not records:
        raise DataError("no records in the requested split")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(records))
    drawn = []
    for idx in order:
        if augmentation:
            vi = int(rng.integers(0, 5))
            ci = int(rng.integers(0, 6))
        else:
            vi, ci = 0, 0
        drawn.append((records[idx], vi, ci))
    batches = [
        drawn[i : i + batch_size]
        for i in range(0, len(drawn) - batch_size + 1, batch_size)
    ]
    if captions is None or not augmentation:
        return batches
    for batch in batches:
        taken: set[str] = set()
        for slot, (rec, vi, ci) in enumerate(batch):
            texts = captions[rec.image_id]
            if texts[ci] in taken:
                for alt in rng.permutation(6):
                    if texts[alt] not in taken:
                        ci = int(alt)
                        batch[slot] = (rec, vi, ci)
                        break
            taken.add(texts[ci])
    return batches


class _PairCache:
    """Flattened image variants and caption token counts, resident in RAM."""

    def __init__(self, corpus: Corpus, records: list[PatientRecord],
                 vocab: enc.Vocabulary, config: TrainConfig, variants: bool):
        if 224 % config.hw:
            raise L.ConfigError(f"encoder side {config.hw} must divide 224")
        factor = 224 // config.hw
        self.images: dict[int, np.ndarray] = {}
        self.counts: dict[int, np.ndarray] = {}
        for rec in records:
            full = corpus.load_image(rec)
            imgs = augment.augment_image(full) if variants else [full]
            flat = [
                augment.downsample_mean(v, factor).reshape(-1).astype(np.float32)
                for v in imgs
            ]
            self.images[rec.image_id] = np.stack(flat)
            caps = corpus.captions[rec.image_id]
            tokens = np.stack([enc.tokenize(c, vocab, config.seq_len) for c in caps])
            self.counts[rec.image_id] = enc.token_counts(tokens, vocab.size).astype(np.float32)

    def batch_arrays(self, batch) -> tuple[np.ndarray, np.ndarray]:
        imgs = np.stack([self.images[r.image_id][vi] for r, vi, _ in batch])
        txts = np.stack([self.counts[r.image_id][ci] for r, _, ci in batch])
        return txts.astype(np.float64), imgs.astype(np.float64)


def _forward_loss(model: enc.DualEncoder, txts, imgs, temperature: float) -> L.LossBreakdown:
    et = model.text_head.forward(model.text.forward(ad.constant(txts)))
    ei = model.image_head.forward(model.image.forward(ad.constant(imgs)))
    return L.batch_loss(L.BatchEmbeddings(et, ei), temperature)


def build_vocab(corpus: Corpus, records: list[PatientRecord]) -> enc.Vocabulary:
    caps = []
    for rec in records:
        caps.extend(corpus.captions[rec.image_id])
    return enc.Vocabulary.build(caps)


def train(config: TrainConfig, corpus: Corpus, out_dir=None) -> tuple[TrainReport, enc.DualEncoder]:
    """Full loop over the corpus's train split, validating on val each epoch.

    Returns the report and the model restored to its best-validation state.
    Never touches the test split (check corpus.access_log).
    """
    started = time.monotonic()
    train_records = corpus.manifest.split("train")
    val_records = corpus.manifest.split("val")
    if not train_records or not val_records:
        raise DataError("corpus needs nonempty train and val splits")

    vocab = build_vocab(corpus, train_records)
    model = enc.DualEncoder(vocab, config.encoder_config(), seed=config.seed)
    train_cache = _PairCache(corpus, train_records, vocab, config, variants=config.augmentation)
    val_cache = _PairCache(corpus, val_records, vocab, config, variants=False)
    val_batches = [
        [(r, 0, 0) for r in val_records[i : i + config.batch_size]]
        for i in range(0, len(val_records), config.batch_size)
    ]
    val_batches = [b for b in val_batches if len(b) >= 2]

    def val_loss() -> float:
        total, count = 0.0, 0
        for batch in val_batches:
            txts, imgs = val_cache.batch_arrays(batch)
            total += _forward_loss(model, txts, imgs, config.temperature).total_value * len(batch)
            count += len(batch)
        return total / max(count, 1)

    params = model.parameters()
    train_losses: list[float] = []
    val_losses: list[float] = []
    best: tuple[float, int, dict[str, np.ndarray]] | None = None
    epoch_times: list[float] = []

    for epoch in range(1, config.epochs + 1):
        tick = time.monotonic()
        epoch_total, epoch_pairs = 0.0, 0
        batches = make_batches(train_records, config.batch_size, config.seed,
                               epoch, config.augmentation, corpus.captions)
        for bi, batch in enumerate(batches):
            txts, imgs = train_cache.batch_arrays(batch)
            breakdown = _forward_loss(model, txts, imgs, config.temperature)
            value = breakdown.total_value
            if not np.isfinite(value):
                raise TrainingError(f"loss became non-finite at epoch {epoch}, batch {bi}")
            grads = ad.backward(breakdown.total)
            for p in params.values():
                g = grads.get(p)
                if g is not None:
                    p.value = (p.value - config.learning_rate * g).astype(np.float32)
            epoch_total += value * len(batch)
            epoch_pairs += len(batch)
        train_losses.append(epoch_total / max(epoch_pairs, 1))
        vl = val_loss()
        val_losses.append(vl)
        if best is None or vl < best[0]:
            best = (vl, epoch, {k: p.value.copy() for k, p in params.items()})
        epoch_times.append(time.monotonic() - tick)

    if best is not None:
        for k, p in params.items():
            p.value = best[2][k]
    report = TrainReport(
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=None if best is None else best[1],
        wall_seconds=time.monotonic() - started,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.checkpoint_path = out / "model.ckpt"
        enc.save_checkpoint(model, report.checkpoint_path)
        report.metrics_path = out / "metrics.log"
        lines = ["# epoch,train_loss,val_loss,seconds"]
        for i, (tl, vl) in enumerate(zip(train_losses, val_losses)):
            lines.append(f"{i + 1},{tl:.6f},{vl:.6f},{epoch_times[i]:.3f}")
        report.metrics_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report, model


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    untouched: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def grad_check(config: TrainConfig, sample_batch, float64: bool = False) -> GradCheckReport:
    """Analytic vs central-difference gradients of the full pipeline loss.

    sample_batch is (images, captions): an array of images matching the
    configured input side and one caption string per image. Parameters that
    receive no gradient at all are reported in `untouched` instead of being
    scored.
    """
    images, captions = sample_batch
    vocab = enc.Vocabulary.build(captions)
    model = enc.DualEncoder(vocab, config.encoder_config(), seed=config.seed)
    params = model.parameters()
    if float64:
        for p in params.values():
            p.value = p.value.astype(np.float64)
    flat = enc.flatten_images(np.asarray(images, dtype=np.float64), config.hw)
    tokens = np.stack([enc.tokenize(c, vocab, config.seq_len) for c in captions])
    counts = enc.token_counts(tokens, vocab.size)

    def build():
        return _forward_loss(model, counts, flat, config.temperature).total

    analytic = ad.backward(build())
    live, untouched = {}, []
    for name, p in params.items():
        g = analytic.get(p)
        if g is None or not np.any(g):
            untouched.append(name)
        else:
            live[name] = p
    # one step size serves both precisions: the extrapolated secant has no
    # quadratic truncation term, and smaller steps only add roundoff on the
    # parameters whose gradients sit many decades below the loss scale
    errors = ad.check_gradients(build, live, h=2e-3)
    return GradCheckReport(errors=errors, untouched=sorted(untouched))
