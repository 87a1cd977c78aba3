import numpy as np
import pytest

from refrank.aggregate import Strategy
from refrank.corpus import PaperRecord, TalkRecord
from refrank.embed import ChecksumMismatch, HashingEmbedder
from refrank.errors import DimMismatch
from refrank.model import (
    DualEncoderHeads,
    encode_key,
    encode_query,
    load_checkpoint,
    query_chunk_vectors,
    save_checkpoint,
    score,
    score_batch,
)
from refrank.textprep import TextPrepConfig

EMB = HashingEmbedder(dim=32, seed=1)
PREP = TextPrepConfig(chunk_size=8)


def _talk(transcript="one two three four five", title="T", year=2021):
    return TalkRecord(id="t", title=title, year=year, transcript=transcript)


def _paper():
    return PaperRecord(id="p", title="key title", abstract="key abstract words", year=2019)


def test_encode_query_single_chunk_no_projection_equals_raw_embedding():
    heads = DualEncoderHeads.init(Strategy.MEAN, 32, 32, projection=False)
    talk = _talk("short text")
    q = encode_query(talk, heads, PREP, EMB)
    from refrank.textprep import render_text, tokenize

    expected = EMB.embed_tokens(tokenize(render_text(talk, PREP.query_template, PREP.separator)))
    np.testing.assert_allclose(q, expected, atol=1e-15)


def test_identity_projection_is_noop():
    heads_on = DualEncoderHeads.init(Strategy.MEAN, 32, 32, projection=True)
    heads_off = DualEncoderHeads.init(Strategy.MEAN, 32, 32, projection=False)
    talk = _talk()
    np.testing.assert_allclose(
        encode_query(talk, heads_on, PREP, EMB),
        encode_query(talk, heads_off, PREP, EMB),
        atol=1e-15,
    )


def test_two_chunk_mean_is_chunk_average():
    words = " ".join(f"w{i}" for i in range(16))  # two chunks of 8
    talk = _talk(words)
    prep = TextPrepConfig(query_template=("transcript",), chunk_size=8)
    mat = query_chunk_vectors(talk, prep, EMB)
    assert mat.shape[0] == 2
    heads = DualEncoderHeads.init(Strategy.MEAN, 32, 32, projection=False)
    q = encode_query(talk, heads, prep, EMB)
    np.testing.assert_allclose(q, mat.mean(axis=0), atol=1e-15)


def test_encode_key_deterministic_and_template_sensitive():
    paper = _paper()
    a = encode_key(paper, PREP, EMB)
    b = encode_key(paper, PREP, EMB)
    np.testing.assert_array_equal(a, b)
    title_only = TextPrepConfig(key_template=("title",))
    abstract_only = TextPrepConfig(key_template=("abstract",))
    assert not np.array_equal(
        encode_key(paper, title_only, EMB), encode_key(paper, abstract_only, EMB)
    )


def test_query_reduces_to_key_pipeline_on_same_text():
    # one chunk, projection off, identical templates on both sides
    prep = TextPrepConfig(query_template=("title",), key_template=("title",), chunk_size=64)
    heads = DualEncoderHeads.init(Strategy.MEAN, 32, 32, projection=False)
    talk = _talk(title="shared words here")
    paper = PaperRecord(id="p", title="shared words here", abstract="x", year=2000)
    np.testing.assert_allclose(
        encode_query(talk, heads, prep, EMB), encode_key(paper, prep, EMB), atol=1e-15
    )


def test_score_basis_vectors():
    e1 = np.zeros(4)
    e1[0] = 1.0
    e2 = np.zeros(4)
    e2[1] = 1.0
    assert score(e1, e1) == 1.0
    assert score(e1, e2) == 0.0


def test_score_matches_naive_sum_oracle():
    rng = np.random.default_rng(0)
    q = rng.standard_normal(50)
    k = rng.standard_normal(50)
    naive = 0.0
    for a, b in zip(q, k):
        naive += float(a) * float(b)
    assert abs(score(q, k) - naive) < 1e-12


def test_score_symmetry():
    rng = np.random.default_rng(1)
    q, k = rng.standard_normal(16), rng.standard_normal(16)
    assert score(q, k) == score(k, q)


def test_score_dim_mismatch():
    with pytest.raises(DimMismatch):
        score(np.zeros(3), np.zeros(4))


def test_score_batch_matches_pairwise_loop():
    rng = np.random.default_rng(2)
    Q = rng.standard_normal((4, 9))
    K = rng.standard_normal((6, 9))
    S = score_batch(Q, K)
    assert S.shape == (4, 6)
    for i in range(4):
        for j in range(6):
            assert abs(S[i, j] - score(Q[i], K[j])) < 1e-10


def test_score_batch_identity_pattern():
    eye = np.eye(3)
    np.testing.assert_allclose(score_batch(eye, eye), np.eye(3))


def test_key_scaling_preserves_argsort():
    rng = np.random.default_rng(3)
    q = rng.standard_normal(12)
    K = rng.standard_normal((40, 12))
    s1 = score_batch(q[None, :], K)[0]
    s2 = score_batch(q[None, :], 7.5 * K)[0]
    np.testing.assert_array_equal(np.argsort(-s1), np.argsort(-s2))


def test_rectangular_projection_shapes():
    heads = DualEncoderHeads.init(Strategy.MEAN, 8, 5, projection=True)
    assert heads.P.shape == (5, 8)
    out = heads.project(np.arange(8.0))
    assert out.shape == (5,)
    # identity block: first 5 coordinates pass through
    np.testing.assert_allclose(out, np.arange(5.0))


def test_projection_disabled_requires_equal_dims():
    with pytest.raises(DimMismatch):
        DualEncoderHeads.init(Strategy.MEAN, 8, 5, projection=False)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    heads = DualEncoderHeads.init(Strategy.LEARNED_MEAN, 6, 5, projection=True)
    heads.scorer.w[:] = rng.standard_normal(6)
    heads.scorer.b[...] = 0.7
    heads.P[:] = rng.standard_normal((5, 6))
    heads.p0[:] = rng.standard_normal(5)
    path = tmp_path / "heads.ckpt"
    save_checkpoint(heads, path, config_hash="abc123")
    loaded, header = load_checkpoint(path)
    assert header["config_hash"] == "abc123"
    assert loaded.strategy == Strategy.LEARNED_MEAN
    # float32 payload: round trip within single precision
    np.testing.assert_allclose(loaded.scorer.w, heads.scorer.w, rtol=1e-6)
    np.testing.assert_allclose(loaded.P, heads.P, rtol=1e-6)
    np.testing.assert_allclose(loaded.p0, heads.p0, rtol=1e-6)


def test_checkpoint_corruption_detected(tmp_path):
    heads = DualEncoderHeads.init(Strategy.MEAN, 4, 4, projection=True)
    path = tmp_path / "heads.ckpt"
    save_checkpoint(heads, path)
    raw = bytearray(path.read_bytes())
    raw[-6] ^= 0x55
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        load_checkpoint(path)


def test_untrained_learned_mean_equals_mean_pool():
    talk = _talk(" ".join(f"w{i}" for i in range(20)))
    prep = TextPrepConfig(query_template=("transcript",), chunk_size=8)
    learned = DualEncoderHeads.init(Strategy.LEARNED_MEAN, 32, 32, projection=True)
    mean = DualEncoderHeads.init(Strategy.MEAN, 32, 32, projection=True)
    np.testing.assert_allclose(
        encode_query(talk, learned, prep, EMB), encode_query(talk, mean, prep, EMB), atol=1e-12
    )
