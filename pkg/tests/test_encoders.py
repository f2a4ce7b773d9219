import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periosearch import autodiff as ad
from periosearch import encoders as enc

# ---------------------------------------------------------------------------
# oracles


def conv_stack_oracle(img, model):
    """Plain-loop forward pass of the conv stack, no gather tricks.

    img: (hw, hw, 3) float array. Follows the documented layer recipe:
    3x3 same-padding conv, tanh, 2x2 mean pool, then GAP and dense.
    """
    x = img.astype(np.float64)
    for blk in model.blocks:
        h, w, cin, cout = blk.h, blk.w, blk.cin, blk.cout
        wmat = blk.weight.value.astype(np.float64)  # (9*cin, cout)
        bias = blk.bias.value.astype(np.float64)[0]
        conv = np.zeros((h, w, cout))
        for y in range(h):
            for xx in range(w):
                patch = np.zeros(9 * cin)
                t = 0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, xx + dx
                        if 0 <= ny < h and 0 <= nx < w:
                            patch[t * cin : (t + 1) * cin] = x[ny, nx]
                        t += 1
                conv[y, xx] = patch @ wmat + bias
        act = np.tanh(conv)
        pooled = np.zeros((h // 2, w // 2, cout))
        for y in range(h // 2):
            for xx in range(w // 2):
                pooled[y, xx] = act[2 * y : 2 * y + 2, 2 * xx : 2 * xx + 2].mean(axis=(0, 1))
        x = pooled
    gap = x.mean(axis=(0, 1))
    return gap @ model.dense_w.value.astype(np.float64) + model.dense_b.value.astype(np.float64)[0]


def dense_head_oracle(x, head):
    z = x @ head.w.value.astype(np.float64) + head.b.value.astype(np.float64)
    return np.tanh(z) if head.activation == "tanh" else z


# ---------------------------------------------------------------------------
# vocabulary and tokenize


def make_vocab():
    return enc.Vocabulary.build(["An image with Periodontal Stage Two.", "left lower molar"])


def test_vocab_ids_dense_with_reserved_specials():
    v = make_vocab()
    assert v.token_to_id["<pad>"] == enc.PAD == 0
    assert v.token_to_id["<unk>"] == enc.UNK == 1
    assert sorted(v.token_to_id.values()) == list(range(v.size))
    for tok, i in v.token_to_id.items():
        assert v.id_to_token[i] == tok


def test_tokenize_empty_caption_is_all_pad():
    v = make_vocab()
    np.testing.assert_array_equal(enc.tokenize("", v, 6), [enc.PAD] * 6)


def test_tokenize_known_tokens_then_padding():
    v = make_vocab()
    ids = enc.tokenize("Stage Two", v, 5)
    assert ids[0] == v.token_to_id["stage"]
    assert ids[1] == v.token_to_id["two"]
    np.testing.assert_array_equal(ids[2:], [enc.PAD] * 3)


def test_tokenize_unknown_token_maps_to_unk():
    ids = enc.tokenize("zzzunknown", make_vocab(), 4)
    np.testing.assert_array_equal(ids, [enc.UNK, enc.PAD, enc.PAD, enc.PAD])


def test_tokenize_strips_punctuation_and_case():
    v = make_vocab()
    ids = enc.tokenize("STAGE, two!!", v, 4)
    assert ids[0] == v.token_to_id["stage"] and ids[1] == v.token_to_id["two"]


def test_tokenize_rejects_caption_over_200_chars():
    with pytest.raises(enc.CaptionLengthError):
        enc.tokenize("x" * 201, make_vocab(), 8)
    enc.tokenize("x" * 200, make_vocab(), 8)  # boundary is inclusive


def test_tokenize_truncates_to_seq_len():
    v = make_vocab()
    ids = enc.tokenize("stage stage stage stage", v, 2)
    assert ids.shape == (2,)


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet=st.characters(codec="ascii"), max_size=200), st.integers(1, 30))
def test_tokenize_always_fixed_length_valid_ids(caption, seq_len):
    v = make_vocab()
    ids = enc.tokenize(caption, v, seq_len)
    assert ids.shape == (seq_len,)
    assert np.all(ids >= 0) and np.all(ids < v.size)


# ---------------------------------------------------------------------------
# text encoder


def make_text_model(n=10, seed=0):
    v = make_vocab()
    return v, enc.TextEncoderModel(v.size, 6, n, np.random.default_rng(seed))


def test_encode_text_deterministic():
    v, model = make_text_model()
    ids = enc.tokenize("periodontal stage two", v, 8)
    a = enc.encode_text(ids, model)
    b = enc.encode_text(ids, model)
    np.testing.assert_array_equal(a, b)


def test_encode_text_all_pad_equals_dense_of_zero():
    v, model = make_text_model()
    out = enc.encode_text(np.zeros(8, dtype=np.int64), model)
    h = np.tanh(np.zeros((1, 6)) @ model.w1.value + model.b1.value.astype(np.float64))
    expected = h @ model.w2.value + model.b2.value.astype(np.float64)
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("n", [16, 768])
def test_encode_text_output_width_matches_n(n):
    v, model = make_text_model(n=n)
    out = enc.encode_text(enc.tokenize("stage two", v, 8), model)
    assert out.shape == (1, n)


def test_encode_text_rejects_out_of_range_ids():
    v, model = make_text_model()
    with pytest.raises(enc.VocabularyError):
        enc.encode_text(np.array([0, v.size], dtype=np.int64), model)


def test_token_counts_mean_over_non_pad():
    counts = enc.token_counts(np.array([[2, 2, 3, 0]]), vocab_size=5)
    np.testing.assert_allclose(counts, [[0, 0, 2 / 3, 1 / 3, 0]])


# ---------------------------------------------------------------------------
# image encoder


def make_image_model(hw=8, channels=(2, 3, 4), m=6, seed=1):
    return enc.ImageEncoderModel(hw, channels, m, np.random.default_rng(seed))


def test_encode_image_matches_loop_oracle():
    model = make_image_model()
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, size=(8, 8, 3))
    expected = conv_stack_oracle(img, model)
    got = enc.encode_image(img, model)
    np.testing.assert_allclose(got[0], expected, rtol=1e-10, atol=1e-12)


def test_encode_image_distinct_inputs_distinct_outputs():
    model = make_image_model()
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, size=(8, 8, 3))
    b = rng.uniform(0, 1, size=(8, 8, 3))
    assert not np.allclose(enc.encode_image(a, model), enc.encode_image(b, model))


def test_encode_image_zero_input_uses_bias_pathway_only():
    model = make_image_model()
    zero = np.zeros((8, 8, 3))
    before = enc.encode_image(zero, model)
    # scrambling the first conv's multiplicative weights must change nothing
    model.blocks[0].weight.value = model.blocks[0].weight.value * 7.5
    after = enc.encode_image(zero, model)
    np.testing.assert_array_equal(before, after)
    np.testing.assert_array_equal(before, enc.encode_image(zero, model))


@pytest.mark.parametrize("m", [64, 2048])
def test_encode_image_output_width_matches_m(m):
    model = make_image_model(m=m)
    out = enc.encode_image(np.zeros((8, 8, 3)), model)
    assert out.shape == (1, m)


def test_encode_image_rejects_wrong_shape():
    with pytest.raises(enc.InputError):
        enc.encode_image(np.zeros((8, 9, 3)), make_image_model())


def test_encode_image_rejects_out_of_range_pixels():
    img = np.zeros((8, 8, 3))
    img[0, 0, 0] = 1.5
    with pytest.raises(enc.InputError):
        enc.encode_image(img, make_image_model())


def test_image_batch_rows_independent():
    model = make_image_model()
    rng = np.random.default_rng(4)
    batch = rng.uniform(0, 1, size=(3, 8, 8, 3))
    together = enc.encode_image(batch, model)
    for i in range(3):
        np.testing.assert_allclose(together[i], enc.encode_image(batch[i], model)[0], atol=1e-12)


# ---------------------------------------------------------------------------
# projection head


def test_identity_head_passes_input_through():
    head = enc.ProjectionHead(4, 4, rng=None, activation="identity")
    x = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(enc.project(x, head), x)


def test_head_output_width_is_d():
    head = enc.ProjectionHead(16, 256, np.random.default_rng(5))
    assert enc.project(np.zeros((2, 16)), head).shape == (2, 256)


def test_random_head_matches_dense_oracle():
    head = enc.ProjectionHead(6, 3, np.random.default_rng(6))
    x = np.random.default_rng(7).normal(size=(4, 6))
    np.testing.assert_allclose(enc.project(x, head), dense_head_oracle(x, head), atol=1e-12)


def test_head_rejects_width_mismatch():
    head = enc.ProjectionHead(6, 3, np.random.default_rng(8))
    with pytest.raises(ad.ShapeError):
        enc.project(np.zeros((2, 5)), head)


def test_both_heads_share_output_dimension():
    model = tiny_dual()
    t = model.embed_text(enc.tokenize("stage two", model.vocab, 8))
    i = model.embed_image(np.zeros((8, 8, 3)))
    assert t.shape[1] == i.shape[1] == model.config.d


# ---------------------------------------------------------------------------
# gradients through encode/project compositions


def tiny_dual(seed=0):
    vocab = make_vocab()
    config = enc.EncoderConfig(
        n=5, m=6, d=4, embed_dim=4, seq_len=8, hw=8, channels=(2, 2, 2)
    )
    return enc.DualEncoder(vocab, config, seed=seed)


def test_fd_through_encoders_and_heads():
    model = tiny_dual()
    rng = np.random.default_rng(9)
    imgs = rng.uniform(0, 1, size=(2, 8, 8, 3))
    flat = enc.flatten_images(imgs, 8)
    counts = enc.token_counts(
        np.stack([
            enc.tokenize("stage two", model.vocab, 8),
            enc.tokenize("left lower molar", model.vocab, 8),
        ]),
        model.vocab.size,
    )
    coeff = ad.constant(rng.normal(size=(2, 2)))

    def build():
        et = model.text_head.forward(model.text.forward(ad.constant(counts)))
        ei = model.image_head.forward(model.image.forward(ad.constant(flat)))
        return ad.sum_all(ad.mul(ad.cosine_rows(et, ei), coeff))

    errors = ad.check_gradients(build, model.parameters(), h=1e-3)
    for name, err in errors.items():
        assert err <= 1e-4, f"{name}: rel error {err}"


# ---------------------------------------------------------------------------
# embedding file format


def test_embeddings_round_trip(tmp_path):
    path = tmp_path / "vecs.bin"
    rng = np.random.default_rng(10)
    ids = [3, 1, 2**40]
    vecs = rng.normal(size=(3, 5)).astype(np.float32)
    enc.export_embeddings(path, ids, vecs)
    got = enc.import_embeddings(path)
    assert set(got) == set(ids)
    for i, rid in enumerate(ids):
        np.testing.assert_array_equal(got[rid], vecs[i])


def test_embeddings_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    enc.export_embeddings(path, [], np.zeros((0, 7), dtype=np.float32))
    assert enc.import_embeddings(path) == {}


def test_embeddings_truncated_rejected_entirely(tmp_path):
    path = tmp_path / "trunc.bin"
    enc.export_embeddings(path, [1, 2], np.ones((2, 4), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(enc.FormatError):
        enc.import_embeddings(path)


def test_embeddings_bad_magic_reports_offset_zero(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 12)
    with pytest.raises(enc.FormatError) as exc:
        enc.import_embeddings(path)
    assert exc.value.offset == 0


def test_embeddings_nan_rejected(tmp_path):
    path = tmp_path / "nan.bin"
    vecs = np.ones((2, 3), dtype=np.float32)
    enc.export_embeddings(path, [1, 2], vecs)
    raw = bytearray(path.read_bytes())
    # poison the first float of the second record
    import struct

    off = 16 + (8 + 12) + 8
    raw[off : off + 4] = struct.pack("<f", np.nan)
    path.write_bytes(bytes(raw))
    with pytest.raises(enc.FormatError) as exc:
        enc.import_embeddings(path)
    assert exc.value.offset == off


def test_export_refuses_non_finite():
    with pytest.raises(ValueError):
        enc.export_embeddings("/tmp/never.bin", [1], np.array([[np.inf, 0.0]], dtype=np.float32))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bit_identical_forward(tmp_path):
    model = tiny_dual(seed=3)
    # move off the init point so we are not just testing seeded construction
    for p in model.parameters().values():
        p.value = p.value + np.float32(0.01)
    path = tmp_path / "model.ckpt"
    enc.save_checkpoint(model, path)
    loaded = enc.load_checkpoint(path)

    ids = enc.tokenize("periodontal stage two", model.vocab, 8)
    img = np.random.default_rng(11).uniform(0, 1, size=(8, 8, 3))
    np.testing.assert_array_equal(model.embed_text(ids), loaded.embed_text(ids))
    np.testing.assert_array_equal(model.embed_image(img), loaded.embed_image(img))


def test_checkpoint_bytes_deterministic(tmp_path):
    model = tiny_dual(seed=4)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    enc.save_checkpoint(model, a)
    enc.save_checkpoint(model, b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(enc.FormatError):
        enc.load_checkpoint(path)
