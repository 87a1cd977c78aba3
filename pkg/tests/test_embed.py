import numpy as np
import pytest

from refrank.embed import (
    ChecksumMismatch,
    EmbedderSpec,
    EmbeddingStore,
    FormatVersionMismatch,
    HashingEmbedder,
    MissingEmbedding,
    StoreEmbedder,
    concat_stores,
    embed_chunks,
    embed_text,
    load_store,
    make_embedder,
    save_store,
)
from refrank.errors import DataError, DimMismatch
from refrank.textprep import chunk, tokenize

SPEC = EmbedderSpec(kind="reference-hash", dim=64, seed=3)


def test_same_text_same_vector():
    a = embed_text("dense retrieval of cited papers", SPEC)
    b = embed_text("dense retrieval of cited papers", SPEC)
    np.testing.assert_array_equal(a, b)


def test_nonempty_text_unit_norm():
    v = embed_text("some nonempty talk transcript", SPEC)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-6


def test_empty_text_zero_vector():
    v = embed_text("", SPEC)
    assert v.shape == (64,)
    assert np.all(v == 0.0)


def test_self_cosine_is_one():
    v = embed_text("a b c d e f", SPEC)
    assert abs(float(v @ v) - 1.0) < 1e-12


def test_bag_of_tokens_permutation_invariant():
    emb = HashingEmbedder(dim=64, seed=3)
    a = emb.embed_tokens(["x", "y", "z", "x"])
    b = emb.embed_tokens(["z", "x", "x", "y"])
    np.testing.assert_array_equal(a, b)


def test_seed_changes_embedding():
    a = embed_text("hello world", EmbedderSpec(dim=64, seed=1))
    b = embed_text("hello world", EmbedderSpec(dim=64, seed=2))
    assert not np.array_equal(a, b)


def test_embed_chunks_order_and_consistency():
    tokens = [f"tok{i}" for i in range(30)]
    cs = chunk(tokens, 10)
    vecs = embed_chunks(cs, SPEC)
    assert len(vecs) == 3
    emb = HashingEmbedder(dim=64, seed=3)
    np.testing.assert_array_equal(vecs[0], emb.embed_tokens(cs.chunks[0]))
    single = chunk(tokens[:10], 10)
    np.testing.assert_array_equal(embed_chunks(single, SPEC)[0], emb.embed_tokens(tokens[:10]))


def test_identical_chunks_identical_vectors():
    cs = chunk(["a", "b"] * 4, 4)
    vecs = embed_chunks(cs, SPEC)
    np.testing.assert_array_equal(vecs[0], vecs[1])


def _store(dim=16, count=5, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingStore(
        dim=dim,
        ids=[f"d{i}" for i in range(count)],
        matrix=rng.standard_normal((count, dim)).astype(np.float32),
        provenance={"kind": "test"},
    )


def test_store_round_trip_bit_exact(tmp_path):
    store = _store()
    path = tmp_path / "s.rfrk"
    save_store(store, path)
    loaded = load_store(path)
    assert loaded.ids == store.ids
    assert loaded.dim == store.dim
    np.testing.assert_array_equal(loaded.matrix, store.matrix)
    assert loaded.provenance == {"kind": "test"}


def test_truncated_store_checksum(tmp_path):
    path = tmp_path / "s.rfrk"
    save_store(_store(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(ChecksumMismatch):
        load_store(path)


def test_corrupted_payload_checksum(tmp_path):
    path = tmp_path / "s.rfrk"
    save_store(_store(), path)
    raw = bytearray(path.read_bytes())
    raw[30] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        load_store(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "s.rfrk"
    save_store(_store(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionMismatch):
        load_store(path)


def test_wrong_version(tmp_path):
    path = tmp_path / "s.rfrk"
    save_store(_store(), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionMismatch):
        load_store(path)


def test_merge_dim_mismatch():
    with pytest.raises(DimMismatch):
        concat_stores(_store(dim=16), _store(dim=8))


def test_merge_compatible():
    a, b = _store(seed=1), _store(seed=2)
    b.ids = [f"e{i}" for i in range(len(b.ids))]
    merged = concat_stores(a, b)
    assert len(merged) == 10


def test_store_embedder_lookup_total_or_errors(tmp_path):
    store = _store()
    emb = StoreEmbedder(store)
    np.testing.assert_array_equal(emb.lookup("d2"), store.matrix[2].astype(np.float64))
    with pytest.raises(MissingEmbedding):
        emb.lookup("absent")


def test_make_embedder_external_file(tmp_path):
    path = tmp_path / "ext.rfrk"
    save_store(_store(), path)
    emb = make_embedder(EmbedderSpec(kind="external-file", dim=16, path=str(path)))
    assert emb.lookup("d0").shape == (16,)
    with pytest.raises(DimMismatch):
        make_embedder(EmbedderSpec(kind="external-file", dim=32, path=str(path)))


def test_spec_validation():
    with pytest.raises(DataError):
        EmbedderSpec(kind="bogus")
    with pytest.raises(DataError):
        EmbedderSpec(dim=1)


def test_duplicate_ids_rejected():
    with pytest.raises(DataError):
        EmbeddingStore(dim=4, ids=["a", "a"], matrix=np.zeros((2, 4), dtype=np.float32))
