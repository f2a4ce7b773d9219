"""Session-scoped corpora and models shared across test modules so the
expensive builds happen once."""

import numpy as np
import pytest

from periosearch import augment as ag
from periosearch import encoders as enc
from periosearch import evaluation as ev
from periosearch import synthdata as sd
from periosearch import training as tr


def build_separable_corpus(root, per_stage: int = 96) -> sd.Corpus:
    """Corpus where every record is a true negative of every other: balanced
    stages, bone-loss percentages spread across each stage band, and no two
    records sharing age, so captions and pixels are pairwise distinct. The
    test split draws its attributes independently of the training cycles."""
    (root / "images").mkdir(parents=True)
    records = []

    def add(split: str, stage: int, frac: float, **attrs) -> None:
        iid = len(records)
        lo, hi = sd.STAGE_RBL_RANGES[stage]
        records.append(
            sd.PatientRecord(
                image_id=iid,
                patient_id=iid,
                age=attrs.get("age", 20 + (iid % 60)),
                gender=attrs.get("gender", sd.GENDERS[iid % 2]),
                ethnicity=attrs.get("ethnicity", sd.ETHNICITIES[iid % 5]),
                stage=stage,
                region=attrs.get("region", ag.REGIONS[iid % len(ag.REGIONS)]),
                rbl_percent=round(lo + frac * (hi - lo), 1),
                split=split,
                image_path=f"images/{iid:05d}.png",
            )
        )

    for copy in range(per_stage):
        for stage in (1, 2, 3):
            add("train", stage, (copy + 0.5) / per_stage)
    for stage in (1, 2, 3):
        add("val", stage, 0.4)
    rng = np.random.default_rng(17)
    for _ in range(4):
        for stage in (1, 2, 3):
            add(
                "test", stage, float(rng.uniform(0.1, 0.9)),
                age=int(rng.integers(20, 80)),
                gender=str(rng.choice(sd.GENDERS)),
                ethnicity=str(rng.choice(sd.ETHNICITIES)),
                region=str(rng.choice(ag.REGIONS)),
            )
    lexicon = ag.SynonymLexicon.default()
    for rec in records:
        sd.save_image(sd.render_image(rec, seed=rec.image_id), root / rec.image_path)
    manifest = sd.DatasetManifest(records, 0, len(records), (1, 1))
    sd.write_manifest(manifest, root / "manifest.jsonl", lexicon)
    (root / "lexicon.txt").write_text(lexicon.dump())
    return sd.Corpus(root)


@pytest.fixture(scope="session")
def desk_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_corpus")
    sd.generate_corpus(root, n_patients=60, seed=7)
    return root


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    sd.generate_corpus(root, n_patients=8, images_per_patient=(4, 6), seed=3)
    return sd.Corpus(root)


@pytest.fixture(scope="session")
def tiny_checkpoint(small_corpus, tmp_path_factory):
    """Untrained small-dims checkpoint over the small corpus vocabulary."""
    cfg = tr.TrainConfig(
        n=8, m=8, d=4, embed_dim=4, seq_len=12, channels=(2, 2, 2),
        batch_size=4, epochs=0, seed=1, augmentation=False, pooling="flatten",
    )
    _, model = tr.train(cfg, small_corpus)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    enc.save_checkpoint(model, path)
    return path


@pytest.fixture(scope="session")
def desk_corpus(desk_corpus_dir):
    return sd.Corpus(desk_corpus_dir)


@pytest.fixture(scope="session")
def desk_train(desk_corpus, tmp_path_factory):
    """(report, model, out_dir) for the full desk preset, trained once."""
    out = tmp_path_factory.mktemp("desk_train")
    report, model = tr.train(tr.TrainConfig.desk(), desk_corpus, out_dir=out)
    return report, model, out


@pytest.fixture(scope="session")
def desk_noaug_train(desk_corpus, tmp_path_factory):
    """Desk preset with the caption/image variant ladder disabled."""
    out = tmp_path_factory.mktemp("desk_noaug")
    report, model = tr.train(
        tr.TrainConfig.desk(augmentation=False), desk_corpus, out_dir=out
    )
    return report, model, out


@pytest.fixture(scope="session")
def desk_bundle(desk_corpus, desk_train, desk_noaug_train):
    _, _, full_out = desk_train
    _, _, noaug_out = desk_noaug_train
    return ev.build_bundle(
        desk_corpus, full_out / "model.ckpt", noaug_out / "model.ckpt"
    )


@pytest.fixture(scope="session")
def desk_suite(desk_corpus):
    return ev.generate_query_suite(
        desk_corpus.manifest.split("test"), desk_corpus.lexicon, per_tier=60, seed=0
    )


@pytest.fixture(scope="session")
def desk_report(desk_bundle, desk_suite, tmp_path_factory):
    """(EvaluationReport, report dir) for the desk bundle on the 180-query suite."""
    out = tmp_path_factory.mktemp("desk_report")
    report = ev.run_evaluation(
        desk_bundle, desk_suite, k=3, kappa_images=2000, seed=0, out_dir=out
    )
    return report, out


@pytest.fixture(scope="session")
def separable_corpus(tmp_path_factory):
    return build_separable_corpus(tmp_path_factory.mktemp("separable"))


@pytest.fixture(scope="session")
def separable_train(separable_corpus, tmp_path_factory):
    """(report, model, out_dir) for the desk-dims run on the separable corpus.

    Batch size 2 minimizes the loss floor (a cosine-capped two-way softmax),
    and the sharp target temperature keeps the soft targets near one-hot for
    as long as the towers keep same-stage records apart."""
    out = tmp_path_factory.mktemp("separable_train")
    config = tr.TrainConfig.desk(learning_rate=0.5, batch_size=2, temperature=0.001)
    report, model = tr.train(config, separable_corpus, out_dir=out)
    return report, model, out
