"""Synthetic labeled corpus: records, rendered images, captions, and splits.

Rendered images are crude radiograph stand-ins, but every label is machine
recoverable: the dark band's pixel depth encodes the bone-loss percentage and
a corner grid cell encodes the region. That recoverability is what makes the
desk-scale retrieval experiments falsifiable.

Images are grayscale computed once and replicated to 3 channels; files are
8-bit PNG. All randomness flows from numpy Generators seeded by (seed, image
id), so corpus regeneration is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment

IMAGE_SIDE = 224

GENDERS = ("Male", "Female")
ETHNICITIES = ("White", "Black", "Hispanic", "Asian", "Other")

# interior sampling ranges per stage keep rendered labels away from the
# 15 / 33 boundaries, so band-depth quantization cannot flip a stage
STAGE_RBL_RANGES = {1: (2.0, 14.0), 2: (15.5, 32.5), 3: (34.0, 70.0)}

BAND_TOP = 70
BAND_MAX_PX = 130  # rows spanned at rbl = 100
FIDUCIAL_CELL = 32
FIDUCIAL_ORIGIN = 4  # top-left corner of the 2x3 region grid


class RangeError(ValueError):
    """A numeric argument is outside its documented domain."""


class DataConfigError(ValueError):
    """Corpus configuration cannot be satisfied."""


def stage_from_rbl(rbl_percent: float) -> int:
    """Periodontal stage from radiographic bone loss percentage."""
    if not 0.0 <= rbl_percent <= 100.0:
        raise RangeError(f"rbl_percent must be in [0, 100], got {rbl_percent}")
    if rbl_percent < 15.0:
        return 1
    if rbl_percent <= 33.0:
        return 2
    return 3


@dataclass
class PatientRecord:
    """One image's ground truth. Demographics repeat across a patient's images."""

    image_id: int
    patient_id: int
    age: int
    gender: str
    ethnicity: str
    rbl_percent: float
    stage: int
    region: str
    split: str = ""
    image_path: str = ""

    def __post_init__(self):
        if self.age < 18:
            raise RangeError(f"age must be >= 18, got {self.age}")
        if self.stage != stage_from_rbl(self.rbl_percent):
            raise RangeError(
                f"stage {self.stage} inconsistent with rbl {self.rbl_percent}"
            )
        if self.region not in augment.REGIONS:
            raise RangeError(f"unknown region {self.region!r}")


# ---------------------------------------------------------------------------
# rendering


def render_image(record: PatientRecord, seed: int = 0) -> np.ndarray:
    """A 224x224x3 float image in [0,1] encoding the record's labels.

    Radiograph-style layout on a dark background: a bright bone field whose
    crest starts rbl_percent * 1.3 pixels below row 70 (the dark gap between
    row 70 and the crest is the stage signal), four bright vertical roots
    running through it, and a 2x3 corner grid whose first k+1 cells light up
    for region index k. Encoding region as a lit-cell count keeps it
    recoverable from spatially pooled statistics, not just from exact pixel
    positions. Exposure scale and pixel noise are drawn before any geometry
    so that records differing only in a label field get identical noise.
    """
    rng = np.random.default_rng([seed, record.image_id])
    exposure = rng.uniform(0.78, 1.12)
    noise = rng.normal(0.0, 0.02, size=(IMAGE_SIDE, IMAGE_SIDE))

    img = np.full((IMAGE_SIDE, IMAGE_SIDE), 0.05)
    depth = int(round(record.rbl_percent / 100.0 * BAND_MAX_PX))
    img[BAND_TOP + depth :, :] = 0.72
    for cx in (40, 90, 140, 190):
        img[30:210, cx - 9 : cx + 9] = 0.92

    img[
        FIDUCIAL_ORIGIN : FIDUCIAL_ORIGIN + 2 * FIDUCIAL_CELL,
        FIDUCIAL_ORIGIN : FIDUCIAL_ORIGIN + 3 * FIDUCIAL_CELL,
    ] = 0.12
    for cell in range(augment.REGIONS.index(record.region) + 1):
        gy, gx = divmod(cell, 3)
        y0 = FIDUCIAL_ORIGIN + gy * FIDUCIAL_CELL
        x0 = FIDUCIAL_ORIGIN + gx * FIDUCIAL_CELL
        img[y0 : y0 + FIDUCIAL_CELL, x0 : x0 + FIDUCIAL_CELL] = 0.98

    img = np.clip(img * exposure + noise, 0.0, 1.0)
    return np.repeat(img[:, :, None], 3, axis=2)


def save_image(img: np.ndarray, path) -> None:
    u8 = np.round(img * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# annotators


@dataclass
class AnnotationSet:
    image_id: int
    labels: tuple[int, int, int]
    resolved: int


def majority_vote(labels) -> int:
    """Majority of three; all-distinct ties go to the last (most experienced)."""
    a, b, c = labels
    if a == b or a == c:
        return a
    if b == c:
        return b
    return c


def simulate_annotators(record: PatientRecord, reliabilities, seed: int = 0) -> AnnotationSet:
    """Each annotator reports the true stage with its reliability, else a
    uniformly chosen wrong stage."""
    rels = tuple(reliabilities)
    for r in rels:
        if not (1.0 / 3.0 < r <= 1.0):
            raise RangeError(f"reliability must be in (1/3, 1], got {r}")
    rng = np.random.default_rng([seed, record.image_id])
    labels = []
    for r in rels:
        if rng.uniform() < r:
            labels.append(record.stage)
        else:
            wrong = [s for s in (1, 2, 3) if s != record.stage]
            labels.append(wrong[rng.integers(0, 2)])
    labels = tuple(labels)
    return AnnotationSet(record.image_id, labels, majority_vote(labels))


# ---------------------------------------------------------------------------
# corpus generation


@dataclass
class DatasetManifest:
    records: list[PatientRecord]
    seed: int
    n_patients: int
    images_per_patient: tuple[int, int]

    def split(self, tag: str) -> list[PatientRecord]:
        return [r for r in self.records if r.split == tag]

    @property
    def counts(self) -> dict[str, int]:
        out = {"train": 0, "val": 0, "test": 0}
        for r in self.records:
            out[r.split] += 1
        return out


def _split_quotas(n: int) -> dict[str, int]:
    """Largest-remainder 80/10/10 with at least one patient per split."""
    fracs = {"train": 0.8, "val": 0.1, "test": 0.1}
    floors = {k: int(n * v) for k, v in fracs.items()}
    remainders = sorted(fracs, key=lambda k: (n * fracs[k]) % 1.0, reverse=True)
    short = n - sum(floors.values())
    for k in remainders[:short]:
        floors[k] += 1
    for k in floors:
        if floors[k] == 0:
            donor = max(floors, key=floors.get)
            floors[donor] -= 1
            floors[k] = 1
    return floors


def generate_manifest(
    n_patients: int,
    images_per_patient: tuple[int, int] = (10, 16),
    seed: int = 0,
    stage_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
) -> DatasetManifest:
    """Sample records and patient-level splits; no pixels are rendered here."""
    if n_patients < 3:
        raise DataConfigError(f"need at least 3 patients for 3 splits, got {n_patients}")
    lo, hi = images_per_patient
    if lo < 1 or hi < lo:
        raise DataConfigError(f"bad images_per_patient range {images_per_patient}")

    rng = np.random.default_rng(seed)
    quotas = _split_quotas(n_patients)
    tags = ["train"] * quotas["train"] + ["val"] * quotas["val"] + ["test"] * quotas["test"]
    tags = [tags[i] for i in rng.permutation(n_patients)]

    weights = np.asarray(stage_weights, dtype=np.float64)
    weights = weights / weights.sum()

    records: list[PatientRecord] = []
    image_id = 0
    for pid in range(n_patients):
        age = int(rng.integers(18, 90))
        gender = GENDERS[rng.integers(0, len(GENDERS))]
        ethnicity = ETHNICITIES[rng.integers(0, len(ETHNICITIES))]
        for _ in range(int(rng.integers(lo, hi + 1))):
            stage = int(rng.choice([1, 2, 3], p=weights))
            r_lo, r_hi = STAGE_RBL_RANGES[stage]
            rbl = float(np.round(rng.uniform(r_lo, r_hi), 2))
            region = augment.REGIONS[rng.integers(0, len(augment.REGIONS))]
            records.append(
                PatientRecord(
                    image_id=image_id,
                    patient_id=pid,
                    age=age,
                    gender=gender,
                    ethnicity=ethnicity,
                    rbl_percent=rbl,
                    stage=stage,
                    region=region,
                    split=tags[pid],
                    image_path=f"images/{image_id:05d}.png",
                )
            )
            image_id += 1
    return DatasetManifest(records, seed, n_patients, (lo, hi))


# ---------------------------------------------------------------------------
# manifest and corpus files


def write_manifest(manifest: DatasetManifest, path, lexicon: augment.SynonymLexicon) -> None:
    """Line-delimited JSON: a header line, then one record per line with its
    six captions."""
    header = {
        "format": "periosearch-manifest",
        "version": 1,
        "seed": manifest.seed,
        "n_patients": manifest.n_patients,
        "images_per_patient": list(manifest.images_per_patient),
        "counts": manifest.counts,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for rec in manifest.records:
        row = asdict(rec)
        row["captions"] = augment.caption_variants(rec, lexicon)
        lines.append(json.dumps(row, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[DatasetManifest, dict[int, list[str]]]:
    """Returns the manifest plus the per-image caption lists."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ValueError(f"manifest {path} is empty")
    header = json.loads(text[0])
    if header.get("format") != "periosearch-manifest" or header.get("version") != 1:
        raise ValueError(f"{path} is not a version-1 manifest")
    records, captions = [], {}
    for line in text[1:]:
        if not line.strip():
            continue
        row = json.loads(line)
        caps = row.pop("captions")
        records.append(PatientRecord(**row))
        captions[records[-1].image_id] = caps
    manifest = DatasetManifest(
        records,
        header["seed"],
        header["n_patients"],
        tuple(header["images_per_patient"]),
    )
    return manifest, captions


def generate_corpus(
    out_dir,
    n_patients: int = 60,
    images_per_patient: tuple[int, int] = (10, 16),
    seed: int = 0,
    lexicon: augment.SynonymLexicon | None = None,
) -> DatasetManifest:
    """Manifest plus rendered PNGs plus the lexicon file, all under out_dir."""
    lexicon = lexicon or augment.SynonymLexicon.default()
    manifest = generate_manifest(n_patients, images_per_patient, seed)
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        save_image(render_image(rec, seed), root / rec.image_path)
    write_manifest(manifest, root / "manifest.jsonl", lexicon)
    (root / "lexicon.txt").write_text(lexicon.dump(), encoding="utf-8")
    return manifest


class Corpus:
    """Read access to a generated corpus, with an access log for split-hygiene
    checks: every image read is recorded as (image_id, split)."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest, self.captions = read_manifest(self.root / "manifest.jsonl")
        self.lexicon = augment.SynonymLexicon.load(self.root / "lexicon.txt")
        self.by_id = {r.image_id: r for r in self.manifest.records}
        self.access_log: list[tuple[int, str]] = []

    def load_image(self, record: PatientRecord) -> np.ndarray:
        self.access_log.append((record.image_id, record.split))
        return load_image(self.root / record.image_path)

    def image_bytes(self, record: PatientRecord) -> bytes:
        self.access_log.append((record.image_id, record.split))
        return (self.root / record.image_path).read_bytes()
