import numpy as np
import pytest

from periosearch import augment as ag
from periosearch.synthdata import PatientRecord

RECORD_A = PatientRecord(
    image_id=1, patient_id=1, age=72, gender="Female", ethnicity="White",
    rbl_percent=40.0, stage=3, region="upper molar right", split="train",
)
RECORD_B = PatientRecord(
    image_id=2, patient_id=2, age=29, gender="Male", ethnicity="Black",
    rbl_percent=20.0, stage=2, region="lower molar left", split="test",
)


# ---------------------------------------------------------------------------
# lexicon


def test_default_lexicon_covers_jaws_and_regions():
    lex = ag.SynonymLexicon.default()
    assert lex.synonyms("maxilla") == ["upper jaw"]
    assert lex.synonyms("MANDIBLE") == ["lower jaw"]  # case-insensitive
    for region in ag.REGIONS:
        assert lex.synonyms(region), region


def test_lexicon_rejects_self_only_mapping():
    with pytest.raises(ValueError):
        ag.SynonymLexicon({"molar": ["molar"]})


def test_lexicon_file_round_trip(tmp_path):
    lex = ag.SynonymLexicon.default()
    path = tmp_path / "lexicon.txt"
    path.write_text(lex.dump(), encoding="utf-8")
    again = ag.SynonymLexicon.load(path)
    for term in lex.terms():
        assert again.synonyms(term) == lex.synonyms(term)


def test_lexicon_parse_format():
    lex = ag.SynonymLexicon.parse("# comment\nmaxilla: upper jaw | top jaw\n\n")
    assert lex.synonyms("maxilla") == ["upper jaw", "top jaw"]
    with pytest.raises(ValueError):
        ag.SynonymLexicon.parse("maxilla upper jaw")


def test_lexicon_fold_maps_synonyms_to_canonical():
    lex = ag.SynonymLexicon.default()
    assert lex.fold("Left Lower Molar") == "lower molar left"
    assert lex.fold("upper jaw") == "maxilla"
    assert lex.fold("maxilla") == "maxilla"
    assert lex.fold("elbow") is None


def test_missing_synonym_error_names_the_region():
    lex = ag.SynonymLexicon({"maxilla": ["upper jaw"]})  # no mandible entry
    with pytest.raises(ag.LexiconError) as exc:
        ag.caption_variants(RECORD_B, lex)
    assert "lower molar left" in str(exc.value)


# ---------------------------------------------------------------------------
# captions


def test_caption_six_exact_for_table_record():
    caps = ag.caption_variants(RECORD_A, ag.SynonymLexicon.default())
    assert caps[5] == "An Image with Periodontal Stage Three."


def test_caption_two_uses_jaw_synonym():
    caps = ag.caption_variants(RECORD_B, ag.SynonymLexicon.default())
    assert "Lower Jaw" in caps[1]


def test_caption_ladder_structure():
    for record, jaw in ((RECORD_A, "Maxilla"), (RECORD_B, "Mandible")):
        caps = ag.caption_variants(record, ag.SynonymLexicon.default())
        assert len(caps) == 6
        age = f"{record.age}-year-old"
        position = " ".join(w.capitalize() for w in record.region.split())
        # captions 1-3: full demographics, site at three granularities
        for cap in caps[:3]:
            assert age in cap and record.ethnicity in cap and record.gender in cap
        assert jaw in caps[0]
        assert caps[1] != caps[0]
        assert position in caps[2]
        # caption 4 drops the age, keeps the rest
        assert age not in caps[3] and record.ethnicity in caps[3]
        # caption 5 drops all demographics, keeps the position
        assert record.ethnicity not in caps[4] and position in caps[4]
        # caption 6 is stage-only
        assert caps[5].endswith(f"Periodontal Stage {ag.STAGE_WORDS[record.stage]}.")


def test_caption_six_has_no_demographic_or_region_tokens():
    for record in (RECORD_A, RECORD_B):
        cap = ag.caption_variants(record, ag.SynonymLexicon.default())[5].lower()
        for banned in ("year", "male", "female", record.ethnicity.lower(),
                       "molar", "jaw", "anterior", "maxilla", "mandible",
                       "upper", "lower", "left", "right", "region"):
            assert banned not in cap, (banned, cap)


def test_all_captions_under_200_chars():
    long_record = PatientRecord(
        image_id=3, patient_id=3, age=108, gender="Female", ethnicity="Hispanic",
        rbl_percent=33.0, stage=2, region="lower molar right", split="val",
    )
    for cap in ag.caption_variants(long_record, ag.SynonymLexicon.default()):
        assert len(cap) <= 200


# ---------------------------------------------------------------------------
# image variants


def test_rotation_of_uniform_image_is_unchanged():
    img = np.full((32, 32, 3), 0.5)
    out = ag.rotate_image(img, ag.ROTATION_DEGREES)
    np.testing.assert_allclose(out, 0.5, atol=1e-12)


def test_rotation_moves_an_off_center_dot():
    img = np.zeros((64, 64, 3))
    img[10, 50] = 1.0
    out = ag.rotate_image(img, 10.0)
    assert out[10, 50, 0] < 0.9
    assert out.sum() > 0.1  # mass moved, not erased


def test_contrast_law_per_pixel():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(16, 16, 3))
    for c in ag.CONTRAST_FACTORS:
        out = ag.adjust_contrast(img, c)
        expected = np.clip(0.5 + c * (img - 0.5), 0.0, 1.0)
        np.testing.assert_array_equal(out, expected)


def test_augment_returns_exactly_five_variants():
    img = np.random.default_rng(1).uniform(0, 1, size=(24, 24, 3))
    variants = ag.augment_image(img, seed=5)
    assert len(variants) == 5
    np.testing.assert_array_equal(variants[0], img)
    for v in variants:
        assert v.shape == img.shape
        assert v.min() >= 0.0 and v.max() <= 1.0


def test_augment_deterministic():
    img = np.random.default_rng(2).uniform(0, 1, size=(24, 24, 3))
    a = ag.augment_image(img, seed=9)
    b = ag.augment_image(img, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_downsample_mean_blocks():
    img = np.zeros((4, 4, 3))
    img[:2, :2] = 1.0
    out = ag.downsample_mean(img, 2)
    np.testing.assert_allclose(out[0, 0], 1.0)
    np.testing.assert_allclose(out[1, 1], 0.0)
    with pytest.raises(ValueError):
        ag.downsample_mean(np.zeros((5, 4, 3)), 2)


# ---------------------------------------------------------------------------
# pair groups


def test_expand_pair_yields_thirty_pairs():
    img = np.random.default_rng(3).uniform(0, 1, size=(16, 16, 3))
    group = ag.expand_pair(img, RECORD_B, ag.SynonymLexicon.default(), seed=1)
    assert len(group.pairs) == 30
    assert group.origin_id == RECORD_B.image_id
    assert group.split == RECORD_B.split
    assert len(group.variants) == 5 and len(group.captions) == 6
    seen = {(id(i), c) for i, c in group.pairs}
    assert len(seen) == 30  # full cartesian product, no repeats


def test_expand_pair_deterministic_bytes():
    img = np.random.default_rng(4).uniform(0, 1, size=(16, 16, 3))
    g1 = ag.expand_pair(img, RECORD_A, ag.SynonymLexicon.default(), seed=2)
    g2 = ag.expand_pair(img, RECORD_A, ag.SynonymLexicon.default(), seed=2)
    for (i1, c1), (i2, c2) in zip(g1.pairs, g2.pairs):
        assert c1 == c2
        np.testing.assert_array_equal(i1, i2)
