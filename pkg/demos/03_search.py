"""
Indexing and the three searchers
================================

An index is every train-split image pushed through the image tower into the
shared space, persisted as an embedding binary plus a metadata sidecar. The
main searcher ranks it against a projected text query; two ablation
searchers skip the shared space (text-only ranks captions in the text
encoder's native space, image-only compares raw image-encoder vectors).
"""

import tempfile
from pathlib import Path

from periosearch import retrieval as rt
from periosearch import synthdata as sd
from periosearch import training as tr

work = Path(tempfile.mkdtemp(prefix="periosearch_search_"))
sd.generate_corpus(work, n_patients=12, images_per_patient=(3, 4), seed=4)
corpus = sd.Corpus(work)

config = tr.TrainConfig.desk(epochs=30)
tr.train(config, corpus, out_dir=work / "run")
checkpoint = work / "run" / "model.ckpt"

# persist and reload: rankings over a loaded index are bit-identical
index = rt.build_index(checkpoint, corpus, "train", base=work / "index")
index = rt.EmbeddingIndex.load(work / "index")
model, fingerprint = rt.load_model(checkpoint)
print(f"index: {index.size} images, {index.dim}-dim rows, "
      f"fingerprint {index.fingerprint[:12]}...")

text = "An image with Periodontal Stage Two."
result = rt.query(text, 3, index, model, fingerprint=fingerprint)
print(f"\nquery: {text}")
for rank, (rid, score) in enumerate(result.items, start=1):
    r = index.records[rid]
    print(f"  {rank}. image {rid}  score {score:.4f}  stage {r.stage}  {r.region}")

# text-only ablation: best cosine against any of an image's six captions
captions = rt.build_caption_store(checkpoint, corpus, "train")
print("\ntext-only ranking (native text space):")
for rank, (rid, score) in enumerate(rt.text_only_query(text, 3, captions, model).items, 1):
    print(f"  {rank}. image {rid}  score {score:.4f}")

# image-only ablation: query by pixels instead of words
images = rt.build_image_store(checkpoint, corpus, "train")
probe_record = corpus.manifest.split("val")[0]
probe = corpus.load_image(probe_record)
print(f"\nimage-only ranking (probe: image {probe_record.image_id}, "
      f"stage {probe_record.stage}):")
for rank, (rid, score) in enumerate(rt.image_only_query(probe, 3, images, model).items, 1):
    r = images.records[rid]
    print(f"  {rank}. image {rid}  score {score:.4f}  stage {r.stage}")
