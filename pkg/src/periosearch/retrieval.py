"""Exact-scan search over stored embeddings.

Three searchers share one ranking core. The main searcher compares a
projected text query against projected image vectors (the shared d-space).
The two ablation searchers work in the encoders' native spaces instead:
text-only ranks an image by the best cosine between the query's text-encoder
vector and any of that image's caption vectors, and image-only compares raw
image-encoder vectors. Scores are computed in float64 and rounded to float32
before ranking, so a persisted index reproduces in-memory results bit for
bit. Ties break toward the smaller image id.

An index is two files: the embedding binary (ids plus float32 vectors) and a
text sidecar carrying the checkpoint fingerprint, the vector space tag, and
one metadata line per id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment
from . import encoders as enc
from .synthdata import Corpus, PatientRecord

MAX_QUERY_CHARS = 200

# caption rows get composite ids: image_id * CAPTION_SLOT + caption index
CAPTION_SLOT = 8


class ArgumentError(ValueError):
    """A query argument is outside its documented range."""


class StateError(RuntimeError):
    """The index is missing or empty."""


class FingerprintError(ValueError):
    """Index and model disagree about their origin or dimensions."""


def checkpoint_fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_model(path) -> tuple[enc.DualEncoder, str]:
    """Checkpoint plus the fingerprint that ties indexes back to it."""
    return enc.load_checkpoint(path), checkpoint_fingerprint(path)


# ---------------------------------------------------------------------------
# the index


@dataclass
class EmbeddingIndex:
    ids: np.ndarray
    matrix: np.ndarray
    records: dict[int, PatientRecord]
    fingerprint: str
    space: str = "d"

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.ids.shape[0]:
            raise FingerprintError(
                f"{self.ids.shape[0]} ids do not match matrix {self.matrix.shape}"
            )
        if len(set(self.ids.tolist())) != self.ids.shape[0]:
            raise FingerprintError("duplicate ids in index")
        if self.space not in ("d", "n", "m"):
            raise FingerprintError(f"unknown vector space {self.space!r}")

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1]) if self.matrix.size else 0

    def save(self, base) -> tuple[Path, Path]:
        """Write `<base>.bin` and `<base>.tsv`, sorted by id."""
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        order = np.argsort(self.ids)
        bin_path = base.with_suffix(".bin")
        enc.export_embeddings(bin_path, self.ids[order], self.matrix[order])
        lines = [f"# fingerprint={self.fingerprint} space={self.space}"]
        for rid in self.ids[order].tolist():
            r = self.records[rid]
            lines.append(
                f"{rid}\t{r.patient_id}\t{r.stage}\t{r.region}\t{r.age}"
                f"\t{r.gender}\t{r.ethnicity}\t{r.image_path}"
            )
        tsv_path = base.with_suffix(".tsv")
        tsv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return bin_path, tsv_path

    @classmethod
    def load(cls, base) -> "EmbeddingIndex":
        base = Path(base)
        vectors = enc.import_embeddings(base.with_suffix(".bin"))
        lines = base.with_suffix(".tsv").read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# fingerprint="):
            raise FingerprintError(f"sidecar {base.with_suffix('.tsv')} lacks a fingerprint header")
        head = dict(part.split("=", 1) for part in lines[0][2:].split())
        records: dict[int, PatientRecord] = {}
        for line in lines[1:]:
            rid, patient_id, stage, region, age, gender, ethnicity, image_path = (
                line.split("\t")
            )
            rid = int(rid)
            rbl = _RBL_BY_STAGE[int(stage)]
            records[rid] = PatientRecord(
                image_id=rid, patient_id=int(patient_id), age=int(age),
                gender=gender, ethnicity=ethnicity, rbl_percent=rbl,
                stage=int(stage), region=region, split="", image_path=image_path,
            )
        if set(records) != set(vectors):
            raise FingerprintError("sidecar ids do not match embedding ids")
        ids = np.fromiter(vectors.keys(), dtype=np.uint64, count=len(vectors))
        matrix = (
            np.stack(list(vectors.values()))
            if vectors
            else np.zeros((0, 0), dtype=np.float32)
        )
        return cls(
            ids=ids, matrix=matrix, records=records,
            fingerprint=head["fingerprint"], space=head["space"],
        )


# sidecars carry the stage but not the raw measurement; any in-range value
# keeps the record constructor's stage consistency check satisfied
_RBL_BY_STAGE = {1: 5.0, 2: 20.0, 3: 50.0}


@dataclass
class RankedResult:
    query: str
    k: int
    items: list[tuple[int, float]]

    def __post_init__(self):
        scores = [s for _, s in self.items]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ArgumentError("scores must be non-increasing")
        if any(s < -1.0 - 1e-6 or s > 1.0 + 1e-6 for s in scores):
            raise ArgumentError("cosine scores must lie in [-1, 1]")

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.items]


# ---------------------------------------------------------------------------
# building


def _encoder_input(corpus: Corpus, record: PatientRecord, hw: int) -> np.ndarray:
    return augment.downsample_mean(corpus.load_image(record), 224 // hw)


def image_vector(model: enc.DualEncoder, corpus: Corpus, record: PatientRecord) -> np.ndarray:
    """One image all the way into the shared space (the index row)."""
    return model.embed_image(_encoder_input(corpus, record, model.config.hw))[0]


def build_index(checkpoint, corpus: Corpus, split: str, base=None) -> EmbeddingIndex:
    """Encode every image of the split into the shared d-space, one at a
    time so rows never depend on batch composition; persist when asked."""
    model, fingerprint = load_model(checkpoint)
    records = corpus.manifest.split(split)
    rows = [image_vector(model, corpus, r) for r in records]
    index = EmbeddingIndex(
        ids=np.array([r.image_id for r in records], dtype=np.uint64),
        matrix=np.stack(rows).astype(np.float32) if rows else np.zeros((0, 0), np.float32),
        records={r.image_id: r for r in records},
        fingerprint=fingerprint,
        space="d",
    )
    if base is not None:
        index.save(base)
    return index


def build_caption_store(checkpoint, corpus: Corpus, split: str, base=None) -> EmbeddingIndex:
    """Text-encoder vectors (pre-projection, size n) of every caption."""
    model, fingerprint = load_model(checkpoint)
    ids, rows, records = [], [], {}
    for r in corpus.manifest.split(split):
        for ci, caption in enumerate(corpus.captions[r.image_id]):
            tokens = enc.tokenize(caption, model.vocab, model.config.seq_len)
            counts = enc.token_counts(tokens[None], model.vocab.size)
            cid = r.image_id * CAPTION_SLOT + ci
            ids.append(cid)
            rows.append(model.text.forward(counts).value[0])
            records[cid] = r
    index = EmbeddingIndex(
        ids=np.array(ids, dtype=np.uint64),
        matrix=np.stack(rows).astype(np.float32) if rows else np.zeros((0, 0), np.float32),
        records=records,
        fingerprint=fingerprint,
        space="n",
    )
    if base is not None:
        index.save(base)
    return index


def build_image_store(checkpoint, corpus: Corpus, split: str, base=None) -> EmbeddingIndex:
    """Image-encoder vectors (pre-projection, size m) of every image."""
    model, fingerprint = load_model(checkpoint)
    records = corpus.manifest.split(split)
    rows = [
        model.image.forward(
            enc.flatten_images(_encoder_input(corpus, r, model.config.hw), model.config.hw)
        ).value[0]
        for r in records
    ]
    index = EmbeddingIndex(
        ids=np.array([r.image_id for r in records], dtype=np.uint64),
        matrix=np.stack(rows).astype(np.float32) if rows else np.zeros((0, 0), np.float32),
        records={r.image_id: r for r in records},
        fingerprint=fingerprint,
        space="m",
    )
    if base is not None:
        index.save(base)
    return index


# ---------------------------------------------------------------------------
# ranking


def _cosine_scores(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    rows = matrix.astype(np.float64)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    denom = np.linalg.norm(rows, axis=1) * np.linalg.norm(q)
    return (rows @ q / np.maximum(denom, 1e-30)).astype(np.float32)


def _validate_k(k, size: int) -> int:
    if size == 0:
        raise StateError("index is empty")
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)):
        raise ArgumentError(f"k must be an integer, got {k!r}")
    if not 1 <= int(k) <= size:
        raise ArgumentError(f"k must be in [1, {size}], got {int(k)}")
    return int(k)


def _validate_text(text: str) -> str:
    if not isinstance(text, str):
        raise ArgumentError(f"query text must be a string, got {type(text).__name__}")
    if len(text) > MAX_QUERY_CHARS:
        raise ArgumentError(f"query text exceeds {MAX_QUERY_CHARS} chars ({len(text)})")
    return text


def _check_space(index: EmbeddingIndex, space: str, dim: int) -> None:
    if index.space != space:
        raise FingerprintError(f"index holds {index.space!r}-space vectors, need {space!r}")
    if index.dim != dim:
        raise FingerprintError(f"index dim {index.dim} does not match model dim {dim}")


def _top(ids: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    order = np.lexsort((ids, -scores))
    return [(int(ids[i]), float(scores[i])) for i in order[:k]]


def query(
    text: str,
    k,
    index: EmbeddingIndex,
    model: enc.DualEncoder,
    fingerprint: str | None = None,
) -> RankedResult:
    """Rank the whole index by cosine to the projected query text."""
    text = _validate_text(text)
    k = _validate_k(k, index.size)
    _check_space(index, "d", model.config.d)
    if fingerprint is not None and fingerprint != index.fingerprint:
        raise FingerprintError("index was built from a different checkpoint")
    tokens = enc.tokenize(text, model.vocab, model.config.seq_len)
    q = model.embed_text(tokens[None])[0]
    scores = _cosine_scores(index.matrix, q)
    return RankedResult(query=text, k=k, items=_top(index.ids, scores, k))


def text_only_query(
    text: str, k, caption_store: EmbeddingIndex, model: enc.DualEncoder
) -> RankedResult:
    """Rank images by the best cosine between the raw text-encoder query
    vector and any of the image's stored caption vectors."""
    text = _validate_text(text)
    origins = np.unique(np.asarray(caption_store.ids) // CAPTION_SLOT).astype(np.uint64)
    k = _validate_k(k, int(origins.shape[0]))
    _check_space(caption_store, "n", model.config.n)
    tokens = enc.tokenize(text, model.vocab, model.config.seq_len)
    counts = enc.token_counts(tokens[None], model.vocab.size)
    q = model.text.forward(counts).value[0]
    scores = _cosine_scores(caption_store.matrix, q)
    best: dict[int, np.float32] = {}
    for cid, s in zip(caption_store.ids.tolist(), scores):
        origin = cid // CAPTION_SLOT
        if origin not in best or s > best[origin]:
            best[origin] = s
    image_ids = np.array(sorted(best), dtype=np.uint64)
    image_scores = np.array([best[i] for i in image_ids.tolist()], dtype=np.float32)
    return RankedResult(query=text, k=k, items=_top(image_ids, image_scores, k))


def image_only_query(
    image: np.ndarray, k, image_store: EmbeddingIndex, model: enc.DualEncoder
) -> RankedResult:
    """Rank images by cosine between raw image-encoder vectors."""
    k = _validate_k(k, image_store.size)
    _check_space(image_store, "m", model.config.m)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ArgumentError(f"expected one image of shape (side, side, 3), got {arr.shape}")
    if arr.shape[0] != model.config.hw:
        arr = augment.downsample_mean(arr, arr.shape[0] // model.config.hw)
    q = model.image.forward(enc.flatten_images(arr, model.config.hw)).value[0]
    scores = _cosine_scores(image_store.matrix, q)
    return RankedResult(query="(image query)", k=k, items=_top(image_store.ids, scores, k))
