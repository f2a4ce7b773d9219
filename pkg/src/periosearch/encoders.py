"""Text and image encoders plus the projection heads into the shared space.

The text side is an embedding bag (mean over non-PAD tokens) followed by two
dense layers. The image side is three conv blocks (3x3 conv, tanh, 2x2 mean
pool) over position-major activations, global average pooling, and a dense
layer. Both are built from the 2-D ops in :mod:`periosearch.autodiff`, so a
conv layer is one gather, one reshape, and one matmul.

Activations are laid out position-major: an H x W x C feature map flattens to
a row of length H*W*C with index (y*W + x)*C + c, which is exactly how numpy
flattens an (H, W, C) image.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

PAD, UNK = 0, 1
MAX_CAPTION_CHARS = 200

EMBED_MAGIC = b"CLRE"
CHECKPOINT_MAGIC = b"CLCK"


class VocabularyError(ValueError):
    """Token id outside the vocabulary."""


class CaptionLengthError(ValueError):
    """Caption exceeds the 200-character bound."""


class InputError(ValueError):
    """Image input has the wrong shape or out-of-range pixel values."""


class FormatError(ValueError):
    """A binary file does not match its declared layout.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# vocabulary and tokenization


class Vocabulary:
    """Dense token ids with PAD=0 and UNK=1."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = ["<pad>", "<unk>"] + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, captions) -> "Vocabulary":
        seen: dict[str, None] = {}
        for cap in captions:
            for tok in _split(cap):
                seen.setdefault(tok, None)
        return cls(sorted(seen))

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)


def _split(caption: str) -> list[str]:
    out = []
    word = []
    for ch in caption.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


def tokenize(caption: str, vocab: Vocabulary, seq_len: int) -> np.ndarray:
    """Map a caption to a fixed-length id sequence (padded or truncated)."""
    if len(caption) > MAX_CAPTION_CHARS:
        raise CaptionLengthError(
            f"caption has {len(caption)} characters, limit is {MAX_CAPTION_CHARS}"
        )
    ids = [vocab.lookup(t) for t in _split(caption)][:seq_len]
    ids += [PAD] * (seq_len - len(ids))
    return np.array(ids, dtype=np.int64)


def token_counts(token_batch: np.ndarray, vocab_size: int) -> np.ndarray:
    """Rows of mean-pooling weights: counts over non-PAD tokens, normalized.

    An all-PAD row stays all-zero, so the pooled embedding is the zero vector.
    """
    tb = np.atleast_2d(np.asarray(token_batch, dtype=np.int64))
    if tb.size and (tb.min() < 0 or tb.max() >= vocab_size):
        raise VocabularyError(f"token id out of range for vocabulary of size {vocab_size}")
    out = np.zeros((tb.shape[0], vocab_size))
    for r, row in enumerate(tb):
        live = row[row != PAD]
        if live.size:
            np.add.at(out[r], live, 1.0 / live.size)
    return out


# ---------------------------------------------------------------------------
# parameter initialization


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32)


def _bias(rng: np.random.Generator, cols: int) -> np.ndarray:
    # biases share the fan-based uniform init; a nonzero offset keeps the
    # activation channels at distinct operating points so that globally
    # scaled inputs do not collapse to one embedding direction
    return _glorot(rng, 1, cols)


def _zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float32)


# ---------------------------------------------------------------------------
# text encoder


class TextEncoderModel:
    """Embedding bag over token counts, then two dense layers (tanh between)."""

    def __init__(self, vocab_size: int, embed_dim: int, n: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.n = n
        self.table = ad.parameter(_glorot(rng, vocab_size, embed_dim), "text.table")
        self.w1 = ad.parameter(_glorot(rng, embed_dim, n), "text.w1")
        self.b1 = ad.parameter(_bias(rng, n), "text.b1")
        self.w2 = ad.parameter(_glorot(rng, n, n), "text.w2")
        self.b2 = ad.parameter(_bias(rng, n), "text.b2")

    def parameters(self) -> dict[str, ad.Tensor]:
        return {t.name: t for t in (self.table, self.w1, self.b1, self.w2, self.b2)}

    def forward(self, counts) -> ad.Tensor:
        pooled = ad.matmul(counts, self.table)
        h = ad.tanh(ad.add(ad.matmul(pooled, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)


def encode_text(token_batch: np.ndarray, model: TextEncoderModel) -> np.ndarray:
    counts = token_counts(token_batch, model.vocab_size)
    return model.forward(ad.constant(counts)).value


# ---------------------------------------------------------------------------
# image encoder


def _conv_gather_index(h: int, w: int, cin: int) -> np.ndarray:
    """Flat gather index for a 3x3 same-padding conv over an (h, w, cin) map.

    Output column (p*9*cin + t*cin + c) reads input flat index q*cin + c where
    q is the t-th neighbor of position p, or the zero-pad slot h*w*cin when
    the neighbor falls off the grid.
    """
    pad_slot = h * w * cin
    ys, xs = np.divmod(np.arange(h * w), w)
    pieces = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ny, nx = ys + dy, xs + dx
            inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
            q = np.where(inside, ny * w + nx, 0)
            base = np.where(inside, q * cin, pad_slot)
            tap = base[:, None] + np.where(inside, 1, 0)[:, None] * np.arange(cin)[None, :]
            pieces.append(tap)  # (h*w, cin)
    stacked = np.stack(pieces, axis=1)  # (h*w, 9, cin)
    return stacked.reshape(-1)


def _pool_gather_index(h: int, w: int, c: int) -> np.ndarray:
    """Gather index regrouping 2x2 blocks: column (p'*4c + t*c + ch)."""
    oh, ow = h // 2, w // 2
    ys, xs = np.divmod(np.arange(oh * ow), ow)
    pieces = []
    for dy in (0, 1):
        for dx in (0, 1):
            q = (2 * ys + dy) * w + (2 * xs + dx)
            pieces.append(q[:, None] * c + np.arange(c)[None, :])
    stacked = np.stack(pieces, axis=1)  # (oh*ow, 4, c)
    return stacked.reshape(-1)


def _pool_mix(c: int) -> np.ndarray:
    m = np.zeros((4 * c, c))
    for t in range(4):
        m[t * c + np.arange(c), np.arange(c)] = 0.25
    return m


@dataclass
class _ConvBlock:
    weight: ad.Tensor  # (9*cin, cout)
    bias: ad.Tensor  # (1, cout)
    gather: np.ndarray
    pool_gather: np.ndarray
    pool_mix: np.ndarray
    h: int
    w: int
    cin: int
    cout: int
    scatter_cache: dict = field(default_factory=dict)
    pool_scatter_cache: dict = field(default_factory=dict)


class ImageEncoderModel:
    """Three conv blocks with stride-2 mean pooling, then a dense layer.

    The final feature map reaches the dense layer either channel-averaged
    over positions ("gap") or flattened ("flatten"). Flatten keeps spatial
    structure visible to the output layer; position-averaged random features
    are nearly collinear across images, which stalls contrastive training
    from scratch.
    """

    def __init__(
        self,
        hw: int,
        channels: tuple[int, int, int],
        m: int,
        rng: np.random.Generator,
        pooling: str = "gap",
    ):
        if hw % 8 != 0:
            raise ValueError(f"input side {hw} must be divisible by 8 (three 2x pools)")
        if pooling not in ("gap", "flatten"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.hw = hw
        self.channels = tuple(channels)
        self.m = m
        self.pooling = pooling
        self.blocks: list[_ConvBlock] = []
        side, cin = hw, 3
        for i, cout in enumerate(self.channels):
            self.blocks.append(
                _ConvBlock(
                    weight=ad.parameter(_glorot(rng, 9 * cin, cout), f"image.conv{i}.w"),
                    bias=ad.parameter(_bias(rng, cout), f"image.conv{i}.b"),
                    gather=_conv_gather_index(side, side, cin),
                    pool_gather=_pool_gather_index(side, side, cout),
                    pool_mix=_pool_mix(cout),
                    h=side,
                    w=side,
                    cin=cin,
                    cout=cout,
                )
            )
            side //= 2
            cin = cout
        final_positions = side * side
        c3 = self.channels[-1]
        if pooling == "gap":
            gap = np.zeros((final_positions * c3, c3))
            gap[np.arange(final_positions * c3), np.tile(np.arange(c3), final_positions)] = (
                1.0 / final_positions
            )
            self._gap = gap
            dense_in = c3
        else:
            self._gap = None
            dense_in = final_positions * c3
        self.dense_w = ad.parameter(_glorot(rng, dense_in, m), "image.dense.w")
        self.dense_b = ad.parameter(_bias(rng, m), "image.dense.b")

    def parameters(self) -> dict[str, ad.Tensor]:
        out = {}
        for blk in self.blocks:
            out[blk.weight.name] = blk.weight
            out[blk.bias.name] = blk.bias
        out[self.dense_w.name] = self.dense_w
        out[self.dense_b.name] = self.dense_b
        return out

    def forward(self, flat_images) -> ad.Tensor:
        x = flat_images if isinstance(flat_images, ad.Tensor) else ad.constant(flat_images)
        batch = x.shape[0]
        for blk in self.blocks:
            padded = ad.concat_zero_col(x)
            cols = ad.reshape(
                ad.take_cols(padded, blk.gather, blk.scatter_cache),
                batch * blk.h * blk.w,
                9 * blk.cin,
            )
            z = ad.add(ad.matmul(cols, blk.weight), blk.bias)
            a = ad.reshape(ad.tanh(z), batch, blk.h * blk.w * blk.cout)
            quads = ad.reshape(
                ad.take_cols(a, blk.pool_gather, blk.pool_scatter_cache),
                batch * (blk.h // 2) * (blk.w // 2),
                4 * blk.cout,
            )
            pooled = ad.matmul(quads, blk.pool_mix)
            x = ad.reshape(pooled, batch, (blk.h // 2) * (blk.w // 2) * blk.cout)
        if self._gap is not None:
            x = ad.matmul(x, self._gap)
        return ad.add(ad.matmul(x, self.dense_w), self.dense_b)


def flatten_images(images, hw: int) -> np.ndarray:
    """Validate a batch of hw x hw x 3 images in [0,1] and flatten to rows."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != (hw, hw, 3):
        raise InputError(f"expected images of shape ({hw}, {hw}, 3), got {arr.shape[1:]}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InputError("pixel values must lie in [0, 1]")
    return arr.reshape(arr.shape[0], -1)


def encode_image(images, model: ImageEncoderModel) -> np.ndarray:
    return model.forward(flatten_images(images, model.hw)).value


# ---------------------------------------------------------------------------
# projection head


class ProjectionHead:
    """Single dense layer into the shared d-space, smooth nonlinearity."""

    def __init__(
        self,
        in_dim: int,
        d: int,
        rng: np.random.Generator | None = None,
        name: str = "head",
        activation: str = "tanh",
    ):
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.d = d
        self.activation = activation
        w = _glorot(rng, in_dim, d) if rng is not None else np.eye(in_dim, d, dtype=np.float32)
        self.w = ad.parameter(w, f"{name}.w")
        b = _bias(rng, d) if rng is not None else _zeros(1, d)
        self.b = ad.parameter(b, f"{name}.b")

    def parameters(self) -> dict[str, ad.Tensor]:
        return {self.w.name: self.w, self.b.name: self.b}

    def forward(self, x) -> ad.Tensor:
        x = x if isinstance(x, ad.Tensor) else ad.constant(x)
        if x.shape[1] != self.in_dim:
            raise ad.ShapeError(f"projection expects {self.in_dim} columns, got {x.shape[1]}")
        z = ad.add(ad.matmul(x, self.w), self.b)
        return ad.tanh(z) if self.activation == "tanh" else z


def project(vectors, head: ProjectionHead) -> np.ndarray:
    return head.forward(vectors).value


# ---------------------------------------------------------------------------
# the dual-encoder bundle


@dataclass
class EncoderConfig:
    n: int = 64
    m: int = 128
    d: int = 32
    embed_dim: int = 32
    seq_len: int = 24
    hw: int = 56
    channels: tuple[int, int, int] = (8, 12, 16)
    pooling: str = "gap"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "d": self.d,
            "embed_dim": self.embed_dim,
            "seq_len": self.seq_len,
            "hw": self.hw,
            "channels": list(self.channels),
            "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


class DualEncoder:
    """Both encoders plus both projection heads, sharing one seeded init."""

    def __init__(self, vocab: Vocabulary, config: EncoderConfig, seed: int = 0):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(seed)
        self.text = TextEncoderModel(vocab.size, config.embed_dim, config.n, rng)
        self.image = ImageEncoderModel(
            config.hw, config.channels, config.m, rng, pooling=config.pooling
        )
        self.text_head = ProjectionHead(config.n, config.d, rng, name="text_head")
        self.image_head = ProjectionHead(config.m, config.d, rng, name="image_head")

    def parameters(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        for part in (self.text, self.image, self.text_head, self.image_head):
            out.update(part.parameters())
        return out

    def embed_text(self, token_batch: np.ndarray) -> np.ndarray:
        """Captions all the way into the shared d-space (no graph kept)."""
        return self.text_head.forward(self.text.forward(
            ad.constant(token_counts(token_batch, self.vocab.size))
        )).value

    def embed_image(self, images) -> np.ndarray:
        """Images all the way into the shared d-space (no graph kept)."""
        return self.image_head.forward(
            self.image.forward(flatten_images(images, self.config.hw))
        ).value


# ---------------------------------------------------------------------------
# embedding binary format
#
# magic "CLRE", u32 version=1, u32 count, u32 dim,
# then count records of (u64 id, dim little-endian float32).


def export_embeddings(path, ids, vectors: np.ndarray) -> None:
    ids = np.asarray(ids, dtype=np.uint64)
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != ids.shape[0]:
        raise ValueError(f"need one vector per id, got {ids.shape} ids and {vectors.shape}")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("refusing to export non-finite embeddings")
    buf = io.BytesIO()
    buf.write(EMBED_MAGIC)
    buf.write(struct.pack("<III", 1, ids.shape[0], vectors.shape[1]))
    for i, vec in zip(ids, vectors):
        buf.write(struct.pack("<Q", int(i)))
        buf.write(vec.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def import_embeddings(path) -> dict[int, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != EMBED_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {EMBED_MAGIC!r}", 0)
    if len(raw) < 16:
        raise FormatError("header truncated", len(raw))
    version, count, dim = struct.unpack_from("<III", raw, 4)
    if version != 1:
        raise FormatError(f"unsupported version {version}", 4)
    record = 8 + 4 * dim
    expected = 16 + count * record
    if len(raw) != expected:
        raise FormatError(
            f"expected {expected} bytes for {count} records of dim {dim}, got {len(raw)}",
            min(len(raw), expected),
        )
    out: dict[int, np.ndarray] = {}
    off = 16
    for _ in range(count):
        (rid,) = struct.unpack_from("<Q", raw, off)
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off + 8).copy()
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"non-finite embedding for id {rid}", off + 8)
        if rid in out:
            raise FormatError(f"duplicate id {rid}", off)
        out[rid] = vec
        off += record
    return out


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "CLCK", u32 version=1, u32 config-JSON length, config JSON (sorted
# keys; includes the vocabulary), u32 parameter count, then per parameter:
# u16 name length, name UTF-8, u32 rows, u32 cols, raw little-endian float32.
# Parameters are written in sorted-name order so identical models produce
# byte-identical files.


def save_checkpoint(model: DualEncoder, path) -> None:
    config = {
        "encoder": model.config.to_dict(),
        "vocab": model.vocab.id_to_token[2:],
        "format": "dual-encoder",
    }
    cfg_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    params = model.parameters()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", 1, len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        val = params[name].value.astype("<f4")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<II", val.shape[0], val.shape[1]))
        buf.write(val.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> DualEncoder:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}", 0)
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise FormatError(f"unsupported version {version}", 4)
    off = 12
    try:
        config = json.loads(raw[off : off + cfg_len])
    except ValueError as exc:
        raise FormatError(f"config block is not valid JSON: {exc}", off) from None
    off += cfg_len
    model = DualEncoder(
        Vocabulary(config["vocab"]), EncoderConfig.from_dict(config["encoder"]), seed=0
    )
    params = model.parameters()
    (n_params,) = struct.unpack_from("<I", raw, off)
    off += 4
    if n_params != len(params):
        raise FormatError(f"checkpoint has {n_params} parameters, model needs {len(params)}", off - 4)
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode()
        off += name_len
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        if name not in params:
            raise FormatError(f"unknown parameter {name!r}", off - 8 - name_len)
        target = params[name]
        if target.value.shape != (rows, cols):
            raise FormatError(
                f"parameter {name!r} has shape ({rows}, {cols}), expected {target.value.shape}",
                off - 8,
            )
        nbytes = rows * cols * 4
        if off + nbytes > len(raw):
            raise FormatError(f"parameter {name!r} data truncated", off)
        target.value = (
            np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=off)
            .reshape(rows, cols)
            .copy()
        )
        off += nbytes
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes after last parameter", off)
    return model
