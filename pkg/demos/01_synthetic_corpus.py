"""
Generating a labeled radiograph corpus
======================================

Every image in the corpus is rendered from a PatientRecord: bone-loss
percentage fixes the periodontal stage, the stage fixes how far the bright
bone field sits below the crest line, and a corner fiducial encodes the
mouth region. Demographics ride along as metadata and appear in captions.
"""

import tempfile
from pathlib import Path

from periosearch import augment as ag
from periosearch import synthdata as sd

out = Path(tempfile.mkdtemp(prefix="periosearch_corpus_"))

# 8 patients, 2-3 images each, split patient-wise 80/10/10
manifest = sd.generate_corpus(out, n_patients=8, images_per_patient=(2, 3), seed=4)
print(f"corpus at {out}")
print(f"{len(manifest.records)} images, split counts {manifest.counts}")

# a record is ground truth for one image
record = manifest.records[0]
print(f"\npatient {record.patient_id}, image {record.image_id} ({record.split} split)")
print(f"  {record.age}-year-old {record.ethnicity} {record.gender}")
print(f"  bone loss {record.rbl_percent}% -> stage {record.stage} ({record.region})")

# stage thresholds are exact: <15% -> 1, 15-33% -> 2, >33% -> 3
for rbl in (14.99, 15.0, 33.0, 33.01):
    print(f"  rbl {rbl:>5}% -> stage {sd.stage_from_rbl(rbl)}")

# each image gets six captions, from fully specific down to stage-only
corpus = sd.Corpus(out)
print("\ncaption ladder for that record:")
for i, caption in enumerate(corpus.captions[record.image_id], start=1):
    print(f"  {i}. {caption}")

# three simulated annotators re-stage each image with given reliabilities;
# majority voting recovers most of the truth
ann = sd.simulate_annotators(record, reliabilities=(0.6, 0.7, 0.9), seed=0)
print(f"\nannotators said {ann.labels}, majority {sd.majority_vote(ann.labels)}, "
      f"truth {record.stage}")

# the lexicon that captions draw their region synonyms from
lexicon = ag.SynonymLexicon.default()
print(f"\n'lower molar left' is also written: {lexicon.synonyms('lower molar left')}")
