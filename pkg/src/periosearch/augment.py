"""Pair expansion: 5 image variants x 6 caption rewrites per origin pair.

Image variants are the original, rotations by +-10 degrees (bilinear, edge
padded), and contrast rescales 0.7 / 1.3 about mid-gray. Caption rewrites
follow the six-template ladder: three full captions naming the site at jaw
(Latin), jaw (English synonym), and tooth-position granularity, one with the
age dropped, one with all demographics dropped, and one stage-only.

Records are duck-typed: anything with age, gender, ethnicity, stage, region
(and image_id/split for grouping) works.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_DEGREES = 10.0
CONTRAST_FACTORS = (0.7, 1.3)

STAGE_WORDS = {1: "One", 2: "Two", 3: "Three"}

REGIONS = (
    "upper molar right",
    "upper molar left",
    "lower molar left",
    "lower molar right",
    "lower anterior",
    "upper anterior",
)

_BUILTIN_LEXICON = {
    "maxilla": ["upper jaw"],
    "mandible": ["lower jaw"],
    "upper molar right": ["right upper molar"],
    "upper molar left": ["left upper molar"],
    "lower molar left": ["left lower molar"],
    "lower molar right": ["right lower molar"],
    "upper anterior": ["front upper", "anterior maxilla"],
    "lower anterior": ["front lower", "anterior mandible"],
}


class LexiconError(KeyError):
    """A required term has no synonyms in the lexicon."""


class SynonymLexicon:
    """Case-insensitive canonical term -> synonyms map."""

    def __init__(self, entries: dict[str, list[str]]):
        self._entries: dict[str, list[str]] = {}
        for term, syns in entries.items():
            key = term.strip().lower()
            vals = [s.strip().lower() for s in syns if s.strip()]
            vals = [s for s in vals if s != key]
            if not vals:
                raise ValueError(f"term {key!r} maps to itself only")
            self._entries[key] = vals

    @classmethod
    def default(cls) -> "SynonymLexicon":
        return cls(_BUILTIN_LEXICON)

    @classmethod
    def parse(cls, text: str) -> "SynonymLexicon":
        """Parse lines of the form "canonical: synonym1 | synonym2"."""
        entries: dict[str, list[str]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ValueError(f"lexicon line {lineno} has no ':' separator: {line!r}")
            term, _, rest = line.partition(":")
            entries[term] = rest.split("|")
        return cls(entries)

    @classmethod
    def load(cls, path) -> "SynonymLexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def dump(self) -> str:
        lines = [f"{term}: {' | '.join(syns)}" for term, syns in sorted(self._entries.items())]
        return "\n".join(lines) + "\n"

    def synonyms(self, term: str) -> list[str]:
        key = term.strip().lower()
        if key not in self._entries:
            raise LexiconError(f"no synonyms for {term!r}")
        return list(self._entries[key])

    def terms(self) -> list[str]:
        return sorted(self._entries)

    def fold(self, phrase: str) -> str | None:
        """Map a phrase to its canonical term if it is one, or a synonym of one."""
        key = phrase.strip().lower()
        if key in self._entries:
            return key
        for term, syns in self._entries.items():
            if key in syns:
                return term
        return None


# ---------------------------------------------------------------------------
# captions


def _jaw_term(region: str) -> str:
    if region.startswith("upper"):
        return "maxilla"
    if region.startswith("lower"):
        return "mandible"
    raise ValueError(f"region {region!r} names no jaw")


def _title(words: str) -> str:
    return " ".join(w.capitalize() for w in words.split())


def caption_variants(record, lexicon: SynonymLexicon) -> list[str]:
    """The six caption rewrites for one record, full to stage-only."""
    stage_word = STAGE_WORDS[record.stage]
    who = f"A {record.age}-year-old {_title(record.ethnicity)} {_title(record.gender)}"
    who_no_age = f"A {_title(record.ethnicity)} {_title(record.gender)}"
    diag = f"Periodontal Stage {stage_word}"
    position = _title(record.region)
    jaw = _jaw_term(record.region)
    try:
        jaw_synonym = lexicon.synonyms(jaw)[0]
    except LexiconError:
        raise LexiconError(
            f"region {record.region!r} needs a synonym for {jaw!r}, none in lexicon"
        ) from None
    captions = [
        f"{who} with {diag} in the {_title(jaw)} region.",
        f"{who} with {diag} in the {_title(jaw_synonym)} region.",
        f"{who} with {diag} in the {position} region.",
        f"{who_no_age} with {diag} in the {position} region.",
        f"An Image with {diag} in the {position} region.",
        f"An Image with {diag}.",
    ]
    for cap in captions:
        if len(cap) > 200:
            raise ValueError(f"caption exceeds 200 characters: {cap!r}")
    return captions


# ---------------------------------------------------------------------------
# image transforms


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the center, bilinear sampling, edges padded by clamping."""
    h, w = img.shape[:2]
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = ys - cy, xs - cx
    # inverse map: rotate output coords by -theta to find the source
    src_y = cy + np.cos(theta) * dy + np.sin(theta) * dx
    src_x = cx - np.sin(theta) * dy + np.cos(theta) * dx
    src_y = np.clip(src_y, 0, h - 1)
    src_x = np.clip(src_x, 0, w - 1)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[..., None]
    fx = (src_x - x0)[..., None]
    out = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )
    return np.clip(out, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    """out = clamp(0.5 + factor * (in - 0.5))."""
    return np.clip(0.5 + factor * (img - 0.5), 0.0, 1.0)


def downsample_mean(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling by an integer factor (exact divisor required)."""
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image side not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def augment_image(image: np.ndarray, seed: int = 0) -> list[np.ndarray]:
    """The five image variants. Deterministic; the seed is accepted for
    interface stability but the transform magnitudes are fixed constants."""
    del seed
    return [
        np.array(image, copy=True),
        rotate_image(image, ROTATION_DEGREES),
        rotate_image(image, -ROTATION_DEGREES),
        adjust_contrast(image, CONTRAST_FACTORS[0]),
        adjust_contrast(image, CONTRAST_FACTORS[1]),
    ]


# ---------------------------------------------------------------------------
# pair groups


@dataclass
class PairGroup:
    """One origin pair and its thirty derived (image variant, caption) pairs."""

    origin_id: int
    split: str
    variants: list[np.ndarray]
    captions: list[str]
    pairs: list[tuple[np.ndarray, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.pairs:
            self.pairs = [(img, cap) for img in self.variants for cap in self.captions]


def expand_pair(image: np.ndarray, record, lexicon: SynonymLexicon, seed: int = 0) -> PairGroup:
    variants = augment_image(image, seed)
    captions = caption_variants(record, lexicon)
    return PairGroup(
        origin_id=record.image_id,
        split=record.split,
        variants=variants,
        captions=captions,
    )
