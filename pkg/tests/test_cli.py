import hashlib
import json

import numpy as np
import pytest

from stepweld.cli import main
from stepweld.embedding import load_table

SRT = """1
00:00:00,000 --> 00:00:08,000
loosen the lug nuts

2
00:00:08,000 --> 00:00:16,000
jack up the car

3
00:00:16,000 --> 00:00:24,000
swap the wheel
"""

VTT = """WEBVTT

00:00:00.000 --> 00:00:08.000
grind the beans

00:00:08.000 --> 00:00:16.000
pour hot water
"""


@pytest.fixture
def workdir(tmp_path, kb_jsonl):
    asr = tmp_path / "asr_srt"
    asr.mkdir()
    (asr / "vid_a.srt").write_text(SRT)
    vtt_dir = tmp_path / "asr_vtt"
    vtt_dir.mkdir()
    (vtt_dir / "vid_b.vtt").write_text(VTT)
    return tmp_path


def _texts_jsonl(path, pairs):
    path.write_text("\n".join(json.dumps({"id": i, "text": t}) for i, t in pairs) + "\n")


class TestIngest:
    def test_ingest_kb_round_trip(self, workdir, kb_jsonl, capsys):
        out = workdir / "kb_canonical.jsonl"
        assert main(["ingest-kb", "--in", str(kb_jsonl), "--out", str(out)]) == 0
        assert "2 tasks / 5 steps" in capsys.readouterr().out
        assert out.exists()

    def test_ingest_asr_srt_and_vtt(self, workdir, capsys):
        out_a = workdir / "segments_a.jsonl"
        assert main(["ingest-asr", "--in", str(workdir / "asr_srt"), "--format", "srt",
                     "--out", str(out_a)]) == 0
        out_b = workdir / "segments_b.jsonl"
        assert main(["ingest-asr", "--in", str(workdir / "asr_vtt"), "--format", "vtt",
                     "--out", str(out_b)]) == 0
        recs = [json.loads(l) for l in out_a.read_text().splitlines()]
        assert len(recs) == 3
        assert recs[0]["start_ms"] == 0
        assert recs[0]["video_id"] == "vid_a"


class TestEmbedAssignTrain:
    def _prepare(self, workdir, kb_jsonl):
        segments = workdir / "segments.jsonl"
        recs = []
        texts = ["loosen the lug nuts", "jack up the car", "swap the wheel",
                 "grind the beans", "pour hot water"]
        for vid, task in (("vid_a", 0), ("vid_b", 1)):
            for i, t in enumerate(texts):
                recs.append({"video_id": vid, "segment_index": i, "start_ms": i * 8000,
                             "end_ms": (i + 1) * 8000, "text": t, "task_id": task})
        segments.write_text("\n".join(json.dumps(r) for r in recs) + "\n")

        step_texts = workdir / "step_texts.jsonl"
        _texts_jsonl(step_texts, [(str(i), t) for i, t in enumerate(texts)])
        narr_texts = workdir / "narr_texts.jsonl"
        _texts_jsonl(
            narr_texts,
            [(f"{vid}:{i}", t) for vid in ("vid_a", "vid_b") for i, t in enumerate(texts)],
        )
        steps_emb = workdir / "steps.emb"
        narrs_emb = workdir / "narrs.emb"
        main(["embed", "--provider", "hash", "--d", "128", "--seed", "3",
              "--in", str(step_texts), "--out", str(steps_emb)])
        main(["embed", "--provider", "hash", "--d", "128", "--seed", "3",
              "--in", str(narr_texts), "--out", str(narrs_emb)])
        return segments, steps_emb, narrs_emb

    def test_embed_assign_train_segment_flow(self, workdir, kb_jsonl, capsys):
        segments, steps_emb, narrs_emb = self._prepare(workdir, kb_jsonl)
        labels = workdir / "labels.jsonl"
        code = main(["assign", "--kb", str(kb_jsonl), "--segments", str(segments),
                     "--steps", str(steps_emb), "--narrs", str(narrs_emb),
                     "--k", "3", "--mode", "full", "--out", str(labels)])
        assert code == 0
        recs = [json.loads(l) for l in labels.read_text().splitlines()]
        assert len(recs) == 10
        assert all(len(r["topk"]) == 3 for r in recs)
        # narration texts literally equal step texts, so argmax is the identity
        assert [r["topk"][0]["gid"] for r in recs] == [0, 1, 2, 3, 4] * 2

        model_out = workdir / "segment.npz"
        feats = workdir / "feats.emb"
        # features here: reuse narration embeddings as stand-in segment features
        code = main(["train-segment", "--labels", str(labels), "--features", str(narrs_emb),
                     "--objective", "kl3", "--num-classes", "5", "--d", "16",
                     "--hidden", "32", "--epochs", "10", "--out", str(model_out)])
        assert code == 0
        assert model_out.exists()

    def test_embed_l2_normalize(self, workdir):
        texts = workdir / "texts.jsonl"
        _texts_jsonl(texts, [("a", "x y z"), ("b", "")])
        out = workdir / "n.emb"
        main(["embed", "--provider", "hash", "--d", "32", "--in", str(texts),
              "--l2-normalize", "--out", str(out)])
        table = load_table(out)
        assert np.linalg.norm(table.matrix[0]) == pytest.approx(1.0, abs=1e-6)
        assert np.all(table.matrix[1] == 0.0)

    def test_train_longterm_kb_transfer(self, workdir, kb_jsonl):
        rng = np.random.default_rng(1)
        from stepweld.embedding import EmbeddingTable, save_table

        ids, rows, kb_rows, label_recs = [], [], [], []
        for v in range(8):
            vid = f"v{v}"
            label = v % 2
            label_recs.append({"video_id": vid, "label": label})
            for i in range(4):
                ids.append(f"{vid}:{i}")
                rows.append(rng.normal(size=8))
                one_hot = np.zeros(8)
                one_hot[label] = 1.0
                kb_rows.append(one_hot)
        seqs = workdir / "seqs.emb"
        kb_vecs = workdir / "kb.emb"
        save_table(EmbeddingTable(ids, np.stack(rows)), seqs)
        save_table(EmbeddingTable(ids, np.stack(kb_rows)), kb_vecs)
        labels_path = workdir / "video_labels.jsonl"
        labels_path.write_text("\n".join(json.dumps(r) for r in label_recs) + "\n")
        out = workdir / "lt_kb.npz"
        code = main(["train-longterm", "--mode", "kb", "--seqs", str(seqs),
                     "--kb-vecs", str(kb_vecs), "--labels", str(labels_path),
                     "--preset", "small", "--window", "4", "--epochs", "8",
                     "--seed", "0", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_train_longterm_basic(self, workdir, kb_jsonl):
        rng = np.random.default_rng(0)
        ids, rows, labels = [], [], []
        label_recs = []
        for v in range(8):
            vid = f"v{v}"
            label = v % 2
            label_recs.append({"video_id": vid, "label": label})
            for i in range(4):
                ids.append(f"{vid}:{i}")
                rows.append(rng.normal(size=8) + label * 3.0)
        from stepweld.embedding import EmbeddingTable, save_table

        seqs = workdir / "seqs.emb"
        save_table(EmbeddingTable(ids, np.stack(rows)), seqs)
        labels_path = workdir / "video_labels.jsonl"
        labels_path.write_text("\n".join(json.dumps(r) for r in label_recs) + "\n")
        out = workdir / "lt.npz"
        code = main(["train-longterm", "--mode", "basic", "--seqs", str(seqs),
                     "--labels", str(labels_path), "--preset", "small", "--window", "4",
                     "--epochs", "8", "--seed", "0", "--out", str(out)])
        assert code == 0
        assert out.exists()


class TestRunAndReport:
    CONFIG = """
[experiment]
seed = 0
modes = ["full"]
cache = false

[synthetic]
tasks = 3
steps_per_task = [3, 3]
videos_per_task = 3
segments_per_video = 6
vocab_size = 100
feature_noise = 0.3

[embedding]
d = 96

[segment]
epochs = 8

[longterm]
epochs = 8
window = 6

[forecast]
enabled = true
epochs = 8

[probe]
train_per_class = 2
epochs = 60
"""

    def test_run_writes_report_and_metrics(self, tmp_path, capsys):
        cfg = tmp_path / "exp.toml"
        cfg.write_text(self.CONFIG)
        out = tmp_path / "report.json"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert set(report["metrics"]) == {
            "assignment_recovery", "probe_raw_accuracy", "probe_feature_accuracy",
            "task_accuracy", "forecast_accuracy",
        }
        metrics = tmp_path / "report.metrics.json"
        assert metrics.exists()

    def test_two_runs_identical_metrics_json(self, tmp_path):
        cfg = tmp_path / "exp.toml"
        cfg.write_text(self.CONFIG)
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        main(["run", "--config", str(cfg), "--out", str(out_a)])
        main(["run", "--config", str(cfg), "--out", str(out_b)])
        digest_a = hashlib.sha256((tmp_path / "a.metrics.json").read_bytes()).hexdigest()
        digest_b = hashlib.sha256((tmp_path / "b.metrics.json").read_bytes()).hexdigest()
        assert digest_a == digest_b

    def test_report_renders_table_and_figures(self, tmp_path, capsys):
        cfg = tmp_path / "exp.toml"
        cfg.write_text(self.CONFIG)
        out = tmp_path / "report.json"
        main(["run", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        fig_dir = tmp_path / "rendered"
        assert main(["report", "--in", str(out), "--format", "table",
                     "--out-dir", str(fig_dir)]) == 0
        printed = capsys.readouterr().out
        assert "task_accuracy" in printed
        assert (fig_dir / "metrics.tsv").exists()
        assert (fig_dir / "metrics.png").exists()
        assert (fig_dir / "loss_curves.png").exists()

    def test_report_json_format(self, tmp_path, capsys):
        cfg = tmp_path / "exp.toml"
        cfg.write_text(self.CONFIG)
        out = tmp_path / "report.json"
        main(["run", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["report", "--in", str(out), "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "metrics" in doc
