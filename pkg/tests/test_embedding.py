import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepweld.embedding import (
    EmbeddingError,
    EmbeddingTable,
    embed_texts,
    hash_provider,
    load_table,
    load_texts_jsonl,
    save_table,
    similarity,
    table_to_bytes,
)

EMPTY_VECTOR_SHA256 = "38723a2e5e8a17aa7950dc008209944e898f69a7bd10a23c839d341e935fd5ca"


class TestSimilarity:
    def test_identical_basis_vectors(self):
        e = np.zeros(4)
        e[1] = 1.0
        assert similarity(e, e) == 1.0

    def test_orthogonal_basis_vectors(self):
        a, b = np.zeros(4), np.zeros(4)
        a[0] = 1.0
        b[2] = 1.0
        assert similarity(a, b) == 0.0

    def test_hand_arithmetic(self):
        assert similarity(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_dimension_mismatch_raises(self):
        with pytest.raises(EmbeddingError, match="mismatch"):
            similarity(np.ones(3), np.ones(4))

    @given(
        vec=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        other=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        scale=st.floats(-4, 4),
    )
    @settings(max_examples=60, deadline=None)
    def test_symmetric_and_homogeneous(self, vec, other, scale):
        a, b = np.array(vec), np.array(other)
        assert similarity(a, b) == similarity(b, a)
        assert similarity(scale * a, b) == pytest.approx(scale * similarity(a, b), abs=1e-9)
        assert similarity(a, a) >= 0.0


class TestHashProvider:
    def test_identical_sentences_dot_one(self):
        p = hash_provider(d=64, seed=3)
        a, b = p.embed(["mix the batter well", "mix the batter well"])
        assert np.array_equal(a, b)
        assert similarity(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_unit_norm_unless_empty(self):
        p = hash_provider(d=32, seed=0)
        vecs = p.embed(["one token", "a b c d e", ""])
        assert np.linalg.norm(vecs[0]) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(vecs[1]) == pytest.approx(1.0, abs=1e-12)
        assert np.all(vecs[2] == 0.0)

    def test_empty_string_pinned_regression_vector(self):
        p = hash_provider(d=16, seed=0)
        vec = p.embed([""])[0]
        assert hashlib.sha256(vec.astype("<f8").tobytes()).hexdigest() == EMPTY_VECTOR_SHA256

    def test_disjoint_token_sentences_near_orthogonal(self):
        p = hash_provider(d=256, seed=0)
        rng = np.random.default_rng(7)
        words = [f"t{i:05d}" for i in range(4000)]
        worst = 0.0
        for _ in range(100):
            chosen = rng.choice(len(words), size=10, replace=False)
            a = " ".join(words[i] for i in chosen[:5])
            b = " ".join(words[i] for i in chosen[5:])
            va, vb = p.embed([a, b])
            worst = max(worst, abs(similarity(va, vb)))
        assert worst < 0.3

    def test_extra_token_sits_between_identity_and_disjoint(self):
        p = hash_provider(d=256, seed=0)
        va, vb = p.embed(["alpha beta gamma delta", "alpha beta gamma delta epsilon"])
        dot = similarity(va, vb)
        assert 0.3 < dot < 1.0
        assert dot == pytest.approx(np.sqrt(4.0 / 5.0), abs=1e-9)

    def test_dimension_validation(self):
        with pytest.raises(EmbeddingError):
            hash_provider(d=0)


class TestEmbedTexts:
    def test_order_preserving_shape(self):
        table = embed_texts(hash_provider(d=16, seed=1), ["a", "b c", "d"])
        assert table.matrix.shape == (3, 16)
        assert table.ids == ("0", "1", "2")

    def test_same_sentence_twice_identical_rows(self):
        table = embed_texts(hash_provider(d=16, seed=1), ["same text", "same text"])
        assert np.array_equal(table.matrix[0], table.matrix[1])

    def test_custom_ids_and_lookup(self):
        table = embed_texts(hash_provider(d=8, seed=0), ["x", "y"], ids=["s0", "s1"])
        assert np.array_equal(table.row("s1"), table.matrix[1])
        with pytest.raises(EmbeddingError, match="unknown embedding id"):
            table.row("nope")

    def test_provider_failure_carries_index(self):
        class Broken:
            name = "broken"
            d = 4

            def embed(self, texts):
                rows = np.zeros((len(texts), 4))
                rows[1] = np.nan
                return rows

        with pytest.raises(EmbeddingError, match="index 1"):
            embed_texts(Broken(), ["ok", "bad"])


class TestTableFormat:
    def _table(self, rows=4, d=6, seed=0):
        rng = np.random.default_rng(seed)
        return EmbeddingTable([f"id{i}" for i in range(rows)], rng.standard_normal((rows, d)))

    def test_round_trip_bit_exact(self, tmp_path):
        table = self._table()
        path = tmp_path / "t.emb"
        save_table(table, path)
        again = load_table(path)
        assert again.ids == table.ids
        assert np.array_equal(again.values32, table.values32)
        assert again.values32.tobytes() == table.values32.tobytes()

    def test_truncated_payload_reports_lengths(self, tmp_path):
        table = self._table()
        raw = table_to_bytes(table)
        path = tmp_path / "t.emb"
        path.write_bytes(raw[:-7])
        with pytest.raises(EmbeddingError, match="expected"):
            load_table(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "t.emb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(EmbeddingError, match="magic"):
            load_table(path)

    def test_file_size_matches_format_arithmetic(self, tmp_path):
        rows, d = 10588, 768
        ids = [str(i) for i in range(rows)]
        table = EmbeddingTable(ids, np.zeros((rows, d), dtype=np.float32))
        path = tmp_path / "big.emb"
        save_table(table, path)
        header = 4 + 4 + 8
        index = sum(4 + len(i.encode()) for i in ids)
        assert path.stat().st_size == header + index + rows * d * 4

    def test_duplicate_ids_rejected(self):
        with pytest.raises(EmbeddingError, match="unique"):
            EmbeddingTable(["a", "a"], np.zeros((2, 3)))

    def test_non_finite_rows_rejected(self):
        bad = np.zeros((2, 3))
        bad[1, 2] = np.inf
        with pytest.raises(EmbeddingError, match="row 1"):
            EmbeddingTable(["a", "b"], bad)


def test_load_texts_jsonl(tmp_path):
    path = tmp_path / "texts.jsonl"
    path.write_text(
        json.dumps({"id": "a", "text": "hello"}) + "\n" + json.dumps({"id": "b", "text": ""}) + "\n"
    )
    ids, texts = load_texts_jsonl(path)
    assert ids == ["a", "b"]
    assert texts == ["hello", ""]
