"""Retrieval quality metrics, query parsing, and agreement tables.

The metric functions take ranked id lists plus per-query relevant-id sets,
so they are independent of how results were produced. Query text is parsed
into an attribute conjunction (stage, optional region, optional
demographics) and assigned a difficulty tier by which attribute groups
appear. The report runner scores the trained searcher and its ablations on
one shared suite, breaks the full model out by tier, and crosses simulated
annotators with the model's stage predictions under Cohen's kappa.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment
from . import encoders as enc
from . import retrieval as rt
from . import synthdata as sd
from .retrieval import ArgumentError

# fresh-weights encoder seed for the image-only baseline (a stand-in for a
# generic encoder that never saw the contrastive objective)
PROBE_SEED = 101

TIERS = ("Low", "Medium", "Hard")

STAGE_NUMBERS = {w.lower(): s for s, w in augment.STAGE_WORDS.items()}

_STAGE_RE = re.compile(r"\bstage\s+(one|two|three|1|2|3)\b")
_AGE_RE = re.compile(r"\b(\d{1,3})[- ]year[- ]old\b")
_GENDER_RE = re.compile(r"\b(female|male)\b")
_ETHNICITY_RE = re.compile(r"\b(white|black|hispanic|asian|other)\b")

_JAWS = ("maxilla", "mandible")
_JAW_OF_PREFIX = {"upper": "maxilla", "lower": "mandible"}


class QueryParseError(ValueError):
    """Query text names no periodontal stage."""


def _title(words: str) -> str:
    return " ".join(w.capitalize() for w in words.split())


# ---------------------------------------------------------------------------
# query parsing and judging


@dataclass(frozen=True)
class ParsedQuery:
    """Attribute conjunction extracted from query text.

    region is one of the six site names, or a bare jaw ("maxilla" /
    "mandible") when the query names only the jaw.
    """

    stage: int
    region: str | None = None
    age: int | None = None
    gender: str | None = None
    ethnicity: str | None = None

    @property
    def tier(self) -> str:
        """Hard once any demographic appears, Medium with a region only."""
        if self.age is not None or self.gender or self.ethnicity:
            return "Hard"
        if self.region:
            return "Medium"
        return "Low"


def _safe_synonyms(lexicon: augment.SynonymLexicon, term: str) -> list[str]:
    try:
        return lexicon.synonyms(term)
    except augment.LexiconError:
        return []


def _find_region(lower: str, lexicon: augment.SynonymLexicon) -> str | None:
    # site names (and their synonyms) first: "anterior maxilla" must fold to
    # the site, not to the bare jaw its tail mentions
    for region in augment.REGIONS:
        for phrase in (region, *_safe_synonyms(lexicon, region)):
            if re.search(rf"\b{re.escape(phrase)}\b", lower):
                return region
    for jaw in _JAWS:
        for phrase in (jaw, *_safe_synonyms(lexicon, jaw)):
            if re.search(rf"\b{re.escape(phrase)}\b", lower):
                return jaw
    return None


def parse_query(text: str, lexicon: augment.SynonymLexicon | None = None) -> ParsedQuery:
    """Extract stage (word or digit), optional region with synonym folding,
    and optional demographics from free text.

    Raises QueryParseError when no stage is named; ArgumentError on
    non-string or over-length text.
    """
    if not isinstance(text, str):
        raise ArgumentError(f"query text must be a string, got {type(text).__name__}")
    if len(text) > rt.MAX_QUERY_CHARS:
        raise ArgumentError(f"query text exceeds {rt.MAX_QUERY_CHARS} characters")
    lexicon = lexicon or augment.SynonymLexicon.default()
    lower = text.lower()

    m = _STAGE_RE.search(lower)
    if m is None:
        raise QueryParseError(f"no periodontal stage named in query: {text!r}")
    token = m.group(1)
    stage = int(token) if token.isdigit() else STAGE_NUMBERS[token]

    age = None
    m = _AGE_RE.search(lower)
    if m is not None:
        age = int(m.group(1))
    gender = None
    m = _GENDER_RE.search(lower)
    if m is not None:
        gender = _title(m.group(1))
    ethnicity = None
    m = _ETHNICITY_RE.search(lower)
    if m is not None:
        ethnicity = _title(m.group(1))

    return ParsedQuery(
        stage=stage,
        region=_find_region(lower, lexicon),
        age=age,
        gender=gender,
        ethnicity=ethnicity,
    )


def _region_matches(wanted: str, actual: str) -> bool:
    if wanted in _JAWS:
        return _JAW_OF_PREFIX[actual.split()[0]] == wanted
    return wanted == actual


def judge_relevance(query: ParsedQuery, record) -> bool:
    """Conjunction match: every attribute the query names must match the
    record. Stage is always present; age matches within +-5 years; a bare
    jaw region matches any site in that jaw."""
    if record.stage != query.stage:
        return False
    if query.region is not None and not _region_matches(query.region, record.region):
        return False
    if query.age is not None and abs(record.age - query.age) > 5:
        return False
    if query.gender is not None and record.gender.lower() != query.gender.lower():
        return False
    if query.ethnicity is not None and record.ethnicity.lower() != query.ethnicity.lower():
        return False
    return True


# ---------------------------------------------------------------------------
# rank metrics


def _check_runs(results, judgments, k: int | None = None) -> None:
    if len(results) != len(judgments):
        raise ArgumentError(
            f"{len(results)} result lists vs {len(judgments)} judgment sets"
        )
    if len(results) == 0:
        raise ArgumentError("empty query set")
    if k is not None:
        if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
            raise ArgumentError(f"k must be a positive integer, got {k!r}")
        shortest = min(len(ids) for ids in results)
        if k > shortest:
            raise ArgumentError(f"k={k} exceeds shortest result list ({shortest})")


def hit_at_k(results, judgments, k: int) -> float:
    """Fraction of queries with at least one relevant id in the top k."""
    _check_runs(results, judgments, k)
    hits = sum(
        1 for ids, rel in zip(results, judgments) if any(i in rel for i in ids[:k])
    )
    return hits / len(results)


def precision_at_k(results, judgments, k: int) -> float:
    """Mean over queries of (relevant in top k) / k. The denominator stays
    k even when the corpus holds fewer than k relevant items."""
    _check_runs(results, judgments, k)
    total = sum(
        sum(1 for i in ids[:k] if i in rel) / k for ids, rel in zip(results, judgments)
    )
    return total / len(results)


def mrr(results, judgments) -> float:
    """Mean reciprocal rank of the first relevant result; a query with no
    relevant result in its returned list contributes 0."""
    _check_runs(results, judgments)
    total = 0.0
    for ids, rel in zip(results, judgments):
        for rank, i in enumerate(ids, start=1):
            if i in rel:
                total += 1.0 / rank
                break
    return total / len(results)


def cohens_kappa(labels_a, labels_b) -> float:
    """Chance-corrected agreement, with expected agreement from marginal
    products. Perfect observed agreement is 1 by definition, which also
    settles the degenerate all-one-category case."""
    a = list(labels_a)
    b = list(labels_b)
    if len(a) != len(b):
        raise ArgumentError(f"label sequences differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ArgumentError("empty label sequences")
    n = len(a)
    po = sum(x == y for x, y in zip(a, b)) / n
    if po == 1.0:
        return 1.0
    pe = sum((a.count(c) / n) * (b.count(c) / n) for c in sorted(set(a) | set(b)))
    return (po - pe) / (1.0 - pe)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    """One run's scores at cutoffs 1..k, optionally broken out by tier."""

    queries: int
    hit: dict[int, float]
    precision: dict[int, float]
    mrr: float
    tiers: dict[str, "MetricReport"] | None = None

    def __post_init__(self):
        if sorted(self.hit) != sorted(self.precision):
            raise ValueError("hit and precision cover different cutoffs")
        values = [*self.hit.values(), *self.precision.values(), self.mrr]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("metric outside [0, 1]")
        ks = sorted(self.hit)
        for lo, hi in zip(ks, ks[1:]):
            if self.hit[lo] > self.hit[hi]:
                raise ValueError("hit@k must be non-decreasing in k")
        if 1 in self.hit and self.hit[1] != self.precision[1]:
            raise ValueError("precision@1 must equal hit@1")

    @property
    def cutoffs(self) -> list[int]:
        return sorted(self.hit)


def score_run(results, judgments, k: int = 3, tiers=None) -> MetricReport:
    """All metrics at cutoffs 1..k for one batch of ranked lists."""
    return MetricReport(
        queries=len(results),
        hit={i: hit_at_k(results, judgments, i) for i in range(1, k + 1)},
        precision={i: precision_at_k(results, judgments, i) for i in range(1, k + 1)},
        mrr=mrr(results, judgments),
        tiers=tiers,
    )


# ---------------------------------------------------------------------------
# query suites


@dataclass(frozen=True)
class Query:
    text: str
    tier: str
    source_id: int | None = None  # test image the query was templated from


def low_query(stage: int) -> str:
    return f"An image with Periodontal Stage {augment.STAGE_WORDS[stage]}."


def _region_phrase(region: str, lexicon, rng) -> str:
    forms = [region, *_safe_synonyms(lexicon, region)]
    return _title(forms[int(rng.integers(0, len(forms)))])


def generate_query_suite(records, lexicon, per_tier: int = 60, seed: int = 0) -> list[Query]:
    """Templated queries, per_tier per tier, each sourced from a sampled
    record. Medium and Hard name the region in canonical or synonym form
    (seeded draw) so the suite exercises synonym folding."""
    pool = list(records)
    if not pool:
        raise ArgumentError("no records to template queries from")
    if per_tier < 1:
        raise ArgumentError(f"per_tier must be >= 1, got {per_tier}")
    rng = np.random.default_rng([seed, 23])
    suite: list[Query] = []
    for tier in TIERS:
        take = rng.choice(len(pool), size=per_tier, replace=len(pool) < per_tier)
        for idx in take:
            r = pool[int(idx)]
            word = augment.STAGE_WORDS[r.stage]
            if tier == "Low":
                text = low_query(r.stage)
            elif tier == "Medium":
                site = _region_phrase(r.region, lexicon, rng)
                text = f"An image with Periodontal Stage {word} at the {site} region."
            else:
                site = _region_phrase(r.region, lexicon, rng)
                text = (
                    f"A {r.age}-year-old {_title(r.ethnicity)} {_title(r.gender)} "
                    f"with Periodontal Stage {word} at {site} region."
                )
            suite.append(Query(text=text, tier=tier, source_id=r.image_id))
    return suite


def save_suite(suite, path) -> Path:
    """One query per line."""
    path = Path(path)
    path.write_text("".join(q.text + "\n" for q in suite), encoding="utf-8")
    return path


def load_suite(path, lexicon: augment.SynonymLexicon | None = None) -> list[Query]:
    """Read a one-query-per-line file; tiers are re-derived by parsing.
    Source images are not recoverable from text, so a loaded suite cannot
    drive the image-only ablation."""
    suite = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            suite.append(Query(text=line, tier=parse_query(line, lexicon).tier))
    return suite


# ---------------------------------------------------------------------------
# agreement harness

# mid-range bone loss for each stage keeps the synthetic records valid
_KAPPA_RBL = {1: 8.0, 2: 24.0, 3: 50.0}

KAPPA_RATERS = ("annotator1", "annotator2", "annotator3", "model", "majority")


def _virtual_records(n_images: int, seed: int) -> list[sd.PatientRecord]:
    rng = np.random.default_rng([seed, 31])
    stages = rng.integers(1, 4, size=n_images)
    return [
        sd.PatientRecord(
            image_id=i,
            patient_id=i,
            age=40,
            gender="Female",
            ethnicity="White",
            rbl_percent=_KAPPA_RBL[s],
            stage=s,
            region=augment.REGIONS[i % len(augment.REGIONS)],
            split="test",
            image_path="",
        )
        for i, s in enumerate(map(int, stages))
    ]


def kappa_table(
    index: rt.EmbeddingIndex,
    model: enc.DualEncoder,
    n_images: int = 2000,
    reliabilities: tuple[float, float, float] = (0.6, 0.7, 0.9),
    seed: int = 0,
) -> dict[str, dict[str, float]]:
    """Kappa matrix over three simulated annotators, their majority vote,
    and the model. The model's label for an image is the stage of its top-1
    result for the stage-only query built from that image's stage."""
    if n_images < 2:
        raise ArgumentError(f"n_images must be >= 2, got {n_images}")
    top_stage = {}
    for s in (1, 2, 3):
        top = rt.query(low_query(s), 1, index, model)
        top_stage[s] = index.records[top.items[0][0]].stage

    labels: dict[str, list[int]] = {name: [] for name in KAPPA_RATERS}
    for record in _virtual_records(n_images, seed):
        ann = sd.simulate_annotators(record, reliabilities, seed=seed)
        for j in range(3):
            labels[f"annotator{j + 1}"].append(ann.labels[j])
        labels["model"].append(top_stage[record.stage])
        labels["majority"].append(ann.resolved)

    return {
        a: {b: cohens_kappa(labels[a], labels[b]) for b in KAPPA_RATERS}
        for a in KAPPA_RATERS
    }


# ---------------------------------------------------------------------------
# the full run


@dataclass
class AblationBundle:
    """Everything run_evaluation can score. Only corpus, model, and index
    are required; absent ablations are left out of the report."""

    corpus: sd.Corpus
    model: enc.DualEncoder
    index: rt.EmbeddingIndex
    noaug_model: enc.DualEncoder | None = None
    noaug_index: rt.EmbeddingIndex | None = None
    caption_store: rt.EmbeddingIndex | None = None
    probe_model: enc.DualEncoder | None = None
    image_store: rt.EmbeddingIndex | None = None


def build_bundle(
    corpus: sd.Corpus,
    checkpoint,
    noaug_checkpoint=None,
    split: str = "train",
    probe_seed: int = PROBE_SEED,
) -> AblationBundle:
    """Load checkpoints and build every store over one split. The image-only
    baseline gets a fresh-weights encoder saved beside the main checkpoint
    so its store carries an honest fingerprint."""
    model, _ = rt.load_model(checkpoint)
    probe_path = Path(checkpoint).parent / "probe.ckpt"
    probe = enc.DualEncoder(model.vocab, model.config, seed=probe_seed)
    enc.save_checkpoint(probe, probe_path)
    probe_model, _ = rt.load_model(probe_path)
    noaug_model = noaug_index = None
    if noaug_checkpoint is not None:
        noaug_model, _ = rt.load_model(noaug_checkpoint)
        noaug_index = rt.build_index(noaug_checkpoint, corpus, split)
    return AblationBundle(
        corpus=corpus,
        model=model,
        index=rt.build_index(checkpoint, corpus, split),
        noaug_model=noaug_model,
        noaug_index=noaug_index,
        caption_store=rt.build_caption_store(checkpoint, corpus, split),
        probe_model=probe_model,
        image_store=rt.build_image_store(probe_path, corpus, split),
    )


@dataclass
class EvaluationReport:
    k: int
    seed: int
    kappa_images: int
    rows: dict[str, MetricReport]  # "full" first; carries the tier breakdown
    kappa: dict[str, dict[str, float]]

    @property
    def suite_size(self) -> int:
        return self.rows["full"].queries


def run_evaluation(
    bundle: AblationBundle,
    suite: list[Query],
    k: int = 3,
    kappa_images: int = 2000,
    seed: int = 0,
    out_dir=None,
) -> EvaluationReport:
    """Score every searcher the bundle carries on one suite, judged against
    the indexed records; break the full model out by tier; cross annotators
    with model predictions. Writes the report files when out_dir is given.

    Text searchers are judged by the attributes the query text names. The
    image-only searcher takes a radiograph instead of words, so its query
    attributes are the full chart of the source record (stage, region, age,
    gender, ethnicity): relevance stays a pure function of query attributes
    and candidate record, with the attributes read off the image's ground
    truth rather than off a sentence."""
    if not suite:
        raise ArgumentError("empty query suite")
    lexicon = bundle.corpus.lexicon
    parsed = [parse_query(q.text, lexicon) for q in suite]
    relevant = [
        {i for i, r in bundle.index.records.items() if judge_relevance(p, r)}
        for p in parsed
    ]
    judgments = {name: relevant for name in ("full", "no-augmentation", "text-only")}

    runs: dict[str, list[list[int]]] = {
        "full": [rt.query(q.text, k, bundle.index, bundle.model).ids for q in suite]
    }
    if bundle.noaug_index is not None:
        runs["no-augmentation"] = [
            rt.query(q.text, k, bundle.noaug_index, bundle.noaug_model).ids
            for q in suite
        ]
    if bundle.caption_store is not None:
        runs["text-only"] = [
            rt.text_only_query(q.text, k, bundle.caption_store, bundle.model).ids
            for q in suite
        ]
    if bundle.image_store is not None:
        if any(q.source_id is None for q in suite):
            raise ArgumentError("image-only ablation needs suite entries with sources")
        runs["image-only"] = [
            rt.image_only_query(
                bundle.corpus.load_image(bundle.corpus.by_id[q.source_id]),
                k,
                bundle.image_store,
                bundle.probe_model,
            ).ids
            for q in suite
        ]
        source_attrs = [
            ParsedQuery(
                stage=r.stage, region=r.region, age=r.age,
                gender=r.gender.lower(), ethnicity=r.ethnicity.lower(),
            )
            for r in (bundle.corpus.by_id[q.source_id] for q in suite)
        ]
        judgments["image-only"] = [
            {i for i, r in bundle.index.records.items() if judge_relevance(p, r)}
            for p in source_attrs
        ]

    by_tier: dict[str, list[int]] = {t: [] for t in TIERS}
    for qi, q in enumerate(suite):
        by_tier.setdefault(q.tier, []).append(qi)
    tiers = {
        t: score_run([runs["full"][i] for i in idx], [relevant[i] for i in idx], k)
        for t, idx in by_tier.items()
        if idx
    }

    rows = {
        name: score_run(res, judgments[name], k, tiers=tiers if name == "full" else None)
        for name, res in runs.items()
    }

    report = EvaluationReport(
        k=k,
        seed=seed,
        kappa_images=kappa_images,
        rows=rows,
        kappa=kappa_table(bundle.index, bundle.model, kappa_images, seed=seed),
    )
    if out_dir is not None:
        write_reports(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# report files

_ROW_TITLES = {
    "full": "Full model",
    "no-augmentation": "No augmentation",
    "text-only": "Text-only",
    "image-only": "Image-only",
}

_RATER_TITLES = {
    "annotator1": "Annotator 1",
    "annotator2": "Annotator 2",
    "annotator3": "Annotator 3",
    "model": "Model",
    "majority": "Majority",
}


def _metric_header(k: int) -> list[str]:
    return (
        [f"Hit@{i}" for i in range(1, k + 1)]
        + [f"Prec@{i}" for i in range(1, k + 1)]
        + ["MRR"]
    )


def _metric_cells(m: MetricReport) -> list[str]:
    ks = m.cutoffs
    values = [m.hit[i] for i in ks] + [m.precision[i] for i in ks] + [m.mrr]
    return [f"{v:.3f}" for v in values]


def _aligned(rows: list[list[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for r in rows:
        first = r[0].ljust(widths[0])
        rest = [cell.rjust(w) for cell, w in zip(r[1:], widths[1:])]
        lines.append("  ".join([first, *rest]).rstrip())
    return "\n".join(lines) + "\n"


def format_comparison(report: EvaluationReport) -> str:
    """The model-vs-ablations table."""
    head = ["Model", *_metric_header(report.k)]
    body = [
        [_ROW_TITLES.get(name, name), *_metric_cells(m)]
        for name, m in report.rows.items()
    ]
    title = f"Retrieval comparison ({report.suite_size} queries, k={report.k})\n\n"
    return title + _aligned([head, *body])


def format_tiers(report: EvaluationReport) -> str:
    """The difficulty breakdown of the full model."""
    tiers = report.rows["full"].tiers or {}
    head = ["Tier", "Queries", *_metric_header(report.k)]
    body = [
        [t, str(tiers[t].queries), *_metric_cells(tiers[t])] for t in TIERS if t in tiers
    ]
    title = f"Difficulty tiers, full model (k={report.k})\n\n"
    return title + _aligned([head, *body])


def format_kappa(report: EvaluationReport) -> str:
    """The rater-agreement matrix."""
    head = ["", *[_RATER_TITLES[r] for r in KAPPA_RATERS]]
    body = [
        [_RATER_TITLES[a], *[f"{report.kappa[a][b]:.3f}" for b in KAPPA_RATERS]]
        for a in KAPPA_RATERS
    ]
    title = f"Cohen's kappa ({report.kappa_images} images)\n\n"
    return title + _aligned([head, *body])


def report_lines(report: EvaluationReport) -> list[str]:
    """Machine-readable key=value lines mirroring the three tables."""
    lines = [
        f"queries={report.suite_size}",
        f"k={report.k}",
        f"seed={report.seed}",
        f"kappa.images={report.kappa_images}",
    ]
    def metric_items(prefix: str, m: MetricReport) -> list[str]:
        out = [f"{prefix}.queries={m.queries}"]
        for i in m.cutoffs:
            out.append(f"{prefix}.hit@{i}={m.hit[i]:.6f}")
        for i in m.cutoffs:
            out.append(f"{prefix}.precision@{i}={m.precision[i]:.6f}")
        out.append(f"{prefix}.mrr={m.mrr:.6f}")
        return out

    for name, m in report.rows.items():
        lines.extend(metric_items(f"row.{name}", m))
    for t, m in (report.rows["full"].tiers or {}).items():
        lines.extend(metric_items(f"tier.{t}", m))
    for a in KAPPA_RATERS:
        for b in KAPPA_RATERS:
            lines.append(f"kappa.{a}.{b}={report.kappa[a][b]:.6f}")
    return lines


def write_reports(report: EvaluationReport, out_dir) -> dict[str, Path]:
    """comparison.txt, tiers.txt, kappa.txt, and metrics.kv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "comparison": out / "comparison.txt",
        "tiers": out / "tiers.txt",
        "kappa": out / "kappa.txt",
        "metrics": out / "metrics.kv",
    }
    paths["comparison"].write_text(format_comparison(report), encoding="utf-8")
    paths["tiers"].write_text(format_tiers(report), encoding="utf-8")
    paths["kappa"].write_text(format_kappa(report), encoding="utf-8")
    paths["metrics"].write_text(
        "".join(line + "\n" for line in report_lines(report)), encoding="utf-8"
    )
    return paths
