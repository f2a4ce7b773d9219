"""
Inside the contrastive objective
================================

The model is two encoders projected into one shared space. Training pulls
each image toward its own caption and pushes it from the other captions in
the batch, with soft targets derived from the model's own intra-modality
similarities. Everything differentiates through a small reverse-mode
engine; this demo checks its gradients and then fits a tiny model.
"""

import tempfile
from pathlib import Path

import numpy as np

from periosearch import loss as L
from periosearch import synthdata as sd
from periosearch import training as tr

# --- the loss, on a hand-made batch of 3 aligned embedding pairs ---------

rng = np.random.default_rng(0)
et = rng.normal(size=(3, 4))  # text projections, one row per pair
ei = et + 0.1 * rng.normal(size=(3, 4))  # image projections, nearly aligned

batch = L.BatchEmbeddings(et, ei)
ets, ts, is_ = L.similarity_matrices(batch)
print("cross-modal cosine matrix (diagonal should dominate):")
print(np.round(ets.value, 3))

targets = L.soft_targets(ts, is_, temperature=0.1)
print("\nsoft targets (rows sum to 1):")
print(np.round(targets.value, 3))
print("row sums:", targets.value.sum(axis=1))

breakdown = L.batch_loss(batch, temperature=0.1)
print(f"\ntext loss {breakdown.text_value:.4f}, image loss "
      f"{breakdown.image_value:.4f}, total {breakdown.total_value:.4f}")

# --- gradient check: analytic vs central finite differences --------------

config = tr.TrainConfig(n=8, m=8, d=8, embed_dim=4, seq_len=8,
                        channels=(1, 1, 1), batch_size=4, epochs=1, seed=1)
images = np.random.default_rng(1).uniform(0, 1, size=(4, config.hw, config.hw, 3))
captions = [
    "stage one bone loss upper molar",
    "stage two bone loss lower incisor",
    "stage three bone loss upper premolar",
    "stage two bone loss lower canine",
]
report = tr.grad_check(config, (images, captions))
print(f"\ngradient check over {len(report.errors)} parameter tensors: "
      f"max relative error {report.max_error:.2e}")

# --- a short real run on a small corpus ----------------------------------
# contrastive ignition needs enough SGD steps; the desk preset's dimensions
# and step size get a 12-patient corpus moving within 30 epochs

data = Path(tempfile.mkdtemp(prefix="periosearch_train_"))
sd.generate_corpus(data, n_patients=12, images_per_patient=(3, 4), seed=4)

out = data / "run"
config = tr.TrainConfig.desk(epochs=30)
train_report, model = tr.train(config, sd.Corpus(data), out_dir=out)

print(f"\ntrained {config.epochs} epochs in {train_report.wall_seconds:.1f}s")
for epoch, (t, v) in enumerate(zip(train_report.train_losses,
                                   train_report.val_losses), start=1):
    if epoch % 5 == 0 or epoch == 1:
        print(f"  epoch {epoch:>2}: train {t:.4f}  val {v:.4f}")
print(f"best epoch {train_report.best_epoch} "
      f"(val {min(train_report.val_losses):.4f})")
print(f"checkpoint: {train_report.checkpoint_path}")
print(f"metrics log: {train_report.metrics_path}")
