"""Symmetric contrastive objective over aligned text/image embedding batches.

Pipeline per batch: pairwise cosine similarities (cross-modal ETS, plus
intra-modal TS and IS), soft targets softmax(((TS+IS)/2)/temperature), then
cross-entropy between row-softmaxed ETS and the targets, applied to both the
rows (text side) and the transpose (image side). The label "binary cross
entropy" sometimes attached to this construction does not type-check against
row-stochastic targets; plain cross-entropy is what is computed here.

All functions accept and return autodiff tensors so gradients flow through
predictions and targets alike.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad


class ConfigError(ValueError):
    """A hyperparameter is outside its valid range."""


@dataclass
class BatchEmbeddings:
    """Aligned projections: row i of et describes the same pair as row i of ei."""

    et: ad.Tensor
    ei: ad.Tensor

    def __post_init__(self):
        if not isinstance(self.et, ad.Tensor):
            self.et = ad.constant(self.et)
        if not isinstance(self.ei, ad.Tensor):
            self.ei = ad.constant(self.ei)
        if self.et.shape[0] != self.ei.shape[0]:
            raise ad.ShapeError(
                f"batch rows differ: {self.et.shape[0]} text vs {self.ei.shape[0]} image"
            )
        if self.et.shape[1] != self.ei.shape[1]:
            raise ad.ShapeError(
                f"embedding widths differ: {self.et.shape[1]} vs {self.ei.shape[1]}"
            )

    @property
    def batch_size(self) -> int:
        return self.et.shape[0]


@dataclass
class LossBreakdown:
    text_loss: ad.Tensor
    image_loss: ad.Tensor
    total: ad.Tensor

    @property
    def text_value(self) -> float:
        return float(self.text_loss.value[0, 0])

    @property
    def image_value(self) -> float:
        return float(self.image_loss.value[0, 0])

    @property
    def total_value(self) -> float:
        return float(self.total.value[0, 0])


def similarity_matrices(batch: BatchEmbeddings) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Cross-modal and intra-modal pairwise cosines: (ETS, TS, IS)."""
    ets = ad.cosine_rows(batch.et, batch.ei)
    ts = ad.cosine_rows(batch.et, batch.et)
    is_ = ad.cosine_rows(batch.ei, batch.ei)
    return ets, ts, is_


def soft_targets(ts, is_, temperature: float = 1.0) -> ad.Tensor:
    """Row-stochastic targets softmax(((TS+IS)/2)/temperature)."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    ts = ts if isinstance(ts, ad.Tensor) else ad.constant(ts)
    is_ = is_ if isinstance(is_, ad.Tensor) else ad.constant(is_)
    if ts.shape != is_.shape:
        raise ad.ShapeError(f"TS and IS shapes differ: {ts.shape} vs {is_.shape}")
    mean = ad.scale(ad.add(ts, is_), 0.5)
    return ad.softmax_rows(ad.scale(mean, 1.0 / temperature))


def contrastive_loss(ets, targets) -> LossBreakdown:
    """Cross-entropy of row-softmaxed ETS against targets, both directions.

    text side reads rows (each caption against all images); image side reads
    the transposes (each image against all captions); total is their mean.
    """
    ets = ets if isinstance(ets, ad.Tensor) else ad.constant(ets)
    targets = targets if isinstance(targets, ad.Tensor) else ad.constant(targets)
    if ets.shape != targets.shape or ets.shape[0] != ets.shape[1]:
        raise ad.ContractError(
            f"need matching square matrices, got ETS {ets.shape} and targets {targets.shape}"
        )
    batch = ets.shape[0]

    def cross_entropy(logits: ad.Tensor, t: ad.Tensor) -> ad.Tensor:
        logp = ad.log(ad.softmax_rows(logits))
        return ad.scale(ad.sum_all(ad.mul(t, logp)), -1.0 / batch)

    text_loss = cross_entropy(ets, targets)
    image_loss = cross_entropy(ad.transpose(ets), ad.transpose(targets))
    total = ad.scale(ad.add(text_loss, image_loss), 0.5)
    return LossBreakdown(text_loss, image_loss, total)


def batch_loss(batch: BatchEmbeddings, temperature: float = 1.0) -> LossBreakdown:
    """The full objective for one aligned batch."""
    ets, ts, is_ = similarity_matrices(batch)
    targets = soft_targets(ts, is_, temperature)
    return contrastive_loss(ets, targets)
