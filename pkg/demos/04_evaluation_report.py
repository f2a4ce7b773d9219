"""
Scoring the engine: tiers, ablations, agreement
===============================================

Evaluation turns the test split into a three-tier query suite (Low names
just the stage, Medium adds a region, Hard adds demographics), judges every
searcher's rankings against attribute-conjunction relevance, and crosses
simulated annotators with the model's top-1 staging for a kappa table.
"""

import tempfile
from pathlib import Path

from periosearch import evaluation as ev
from periosearch import synthdata as sd
from periosearch import training as tr

work = Path(tempfile.mkdtemp(prefix="periosearch_eval_"))
sd.generate_corpus(work, n_patients=12, images_per_patient=(3, 4), seed=4)
corpus = sd.Corpus(work)

config = tr.TrainConfig.desk(epochs=30)
tr.train(config, corpus, out_dir=work / "run")

# how a query decomposes into judgeable attributes
for text in (
    "An image with Periodontal Stage Two.",
    "An image with Periodontal Stage Two at the Left Lower Molar region.",
    "A 49-year-old White Female with Periodontal Stage Two at Lower Molar Left region.",
):
    q = ev.parse_query(text, corpus.lexicon)
    print(f"{q.tier:<6} {text}")
    print(f"       -> stage={q.stage} region={q.region} age={q.age} "
          f"gender={q.gender} ethnicity={q.ethnicity}")

# bundle = main model + every ablation store over the train split
bundle = ev.build_bundle(corpus, work / "run" / "model.ckpt")
suite = ev.generate_query_suite(corpus.manifest.split("test"), corpus.lexicon,
                                per_tier=5, seed=0)
report = ev.run_evaluation(bundle, suite, k=3, kappa_images=200, seed=0,
                           out_dir=work / "reports")

print()
print(ev.format_comparison(report))
print(ev.format_tiers(report))
print(ev.format_kappa(report))
print(f"report files under {work / 'reports'}")
