import hashlib
import json
import logging
import warnings

import numpy as np
import pytest

from export_embeddings import (
    ExportError,
    FixtureEncoder,
    export_embeddings,
    main,
    read_texts,
)

SENTENCES = ["tighten the screws", "plug in the cord", "press the power button"]
# re-export digest for fixture:768 over SENTENCES, pinned from the first run
PINNED_DIGEST = "623c0d7d374f5320e7e032a083d04fc4558fd4838889a594c9bcce5ca49b9f21"


@pytest.fixture
def texts_jsonl(tmp_path):
    path = tmp_path / "texts.jsonl"
    with path.open("w") as fh:
        for i, t in enumerate(SENTENCES):
            fh.write(json.dumps({"id": str(i), "text": t}) + "\n")
    return path


class TestFixtureEncoder:
    def test_deterministic(self):
        enc = FixtureEncoder(d=32)
        a = enc.encode(["hello world"], batch_size=8)
        b = enc.encode(["hello world"], batch_size=8)
        assert np.array_equal(a, b)

    def test_empty_text_is_zero(self):
        enc = FixtureEncoder(d=16)
        assert np.all(enc.encode([""], batch_size=8) == 0.0)

    def test_invalid_dimension(self):
        with pytest.raises(ExportError):
            FixtureEncoder(d=0)


class TestExport:
    def test_three_sentence_fixture_exports_768(self, texts_jsonl, tmp_path):
        out = tmp_path / "table.emb"
        manifest = export_embeddings(texts_jsonl, "fixture:768", out)
        assert manifest.rows == 3
        assert manifest.d == 768
        raw = out.read_bytes()
        assert raw[:4] == b"EMB1"
        d = int.from_bytes(raw[4:8], "little")
        count = int.from_bytes(raw[8:16], "little")
        assert (d, count) == (768, 3)

    def test_reexport_digest_is_stable_and_pinned(self, texts_jsonl, tmp_path):
        out = tmp_path / "table.emb"
        export_embeddings(texts_jsonl, "fixture:768", out)
        first = hashlib.sha256(out.read_bytes()).hexdigest()
        export_embeddings(texts_jsonl, "fixture:768", out)
        second = hashlib.sha256(out.read_bytes()).hexdigest()
        assert first == second == PINNED_DIGEST

    def test_normalize_flag_unit_rows(self, texts_jsonl, tmp_path):
        out = tmp_path / "table.emb"
        export_embeddings(texts_jsonl, "fixture:64", out, normalize=True)
        from stepweld.embedding import load_table

        table = load_table(out)
        norms = np.linalg.norm(table.matrix, axis=1)
        assert norms == pytest.approx(np.ones(3), abs=1e-5)

    def test_manifest_counts_match(self, texts_jsonl, tmp_path):
        out = tmp_path / "table.emb"
        manifest = export_embeddings(texts_jsonl, "fixture:32", out)
        doc = json.loads((tmp_path / "table.emb.manifest.json").read_text())
        assert doc["rows"] == manifest.rows == 3
        assert doc["d"] == 32
        assert doc["normalize"] is False
        assert doc["input_digest"] == hashlib.sha256(texts_jsonl.read_bytes()).hexdigest()

    def test_declared_dimension_mismatch_rejected(self, texts_jsonl, tmp_path):
        with pytest.raises(ExportError, match="dimension"):
            export_embeddings(texts_jsonl, "fixture:768", tmp_path / "t.emb", declared_d=512)

    def test_empty_input_rejected(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(ExportError, match="no input"):
            export_embeddings(empty, "fixture:8", tmp_path / "t.emb")

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        path.write_text(
            json.dumps({"id": "a", "text": "x"}) + "\n" + json.dumps({"id": "a", "text": "y"}) + "\n"
        )
        with pytest.raises(ExportError, match="duplicate"):
            export_embeddings(path, "fixture:8", tmp_path / "t.emb")

    def test_order_preserved(self, tmp_path):
        path = tmp_path / "many.jsonl"
        ids = [f"k{i}" for i in range(57)]
        with path.open("w") as fh:
            for i in ids:
                fh.write(json.dumps({"id": i, "text": f"sentence {i}"}) + "\n")
        out = tmp_path / "t.emb"
        export_embeddings(path, "fixture:16", out, batch_size=10)
        from stepweld.embedding import load_table

        table = load_table(out)
        assert list(table.ids) == ids


class TestPrimaryInterop:
    def test_primary_loader_round_trips_without_warnings(self, texts_jsonl, tmp_path, caplog):
        out = tmp_path / "table.emb"
        export_embeddings(texts_jsonl, "fixture:768", out)
        from stepweld.embedding import load_table, table_to_bytes

        with caplog.at_level(logging.WARNING), warnings.catch_warnings():
            warnings.simplefilter("error")
            table = load_table(out)
        assert not caplog.records
        assert table.d == 768
        assert len(table) == 3
        # loader -> writer round trip is byte-identical
        assert table_to_bytes(table) == out.read_bytes()

    def test_exported_rows_feed_similarity_scoring(self, texts_jsonl, tmp_path):
        out = tmp_path / "table.emb"
        export_embeddings(texts_jsonl, "fixture:64", out, normalize=True)
        from stepweld.assignment import softmax_topk
        from stepweld.embedding import load_table

        table = load_table(out)
        sims = table.matrix @ table.matrix[0]
        ids, probs = softmax_topk(sims, np.arange(3), k=3)
        assert ids[0] == 0  # self-similarity dominates
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_cli_main(texts_jsonl, tmp_path, capsys):
    out = tmp_path / "cli.emb"
    code = main(["--model", "fixture:768", "--in", str(texts_jsonl), "--out", str(out)])
    assert code == 0
    assert "3 x 768" in capsys.readouterr().out
    assert out.exists()


def test_cli_reports_errors(tmp_path, capsys):
    missing_model_ok = tmp_path / "texts.jsonl"
    missing_model_ok.write_text(json.dumps({"id": "a", "text": "x"}) + "\n")
    code = main(["--model", "fixture:8", "--d", "9", "--in", str(missing_model_ok),
                 "--out", str(tmp_path / "t.emb")])
    assert code == 1
    assert "dimension" in capsys.readouterr().err
