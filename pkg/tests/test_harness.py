import dataclasses
import json

import numpy as np
import pytest

from stepweld.assignment import AssignmentConfig, assign_corpus
from stepweld.embedding import embed_texts, hash_provider
from stepweld.harness import (
    EvaluationError,
    SyntheticError,
    SyntheticSpec,
    evaluate,
    frame_accuracy,
    generate_synthetic,
    merge_config,
    per_class_accuracy,
    render_report,
    render_table,
    run_pipeline,
    top1_accuracy,
)
from stepweld.harness.synthetic import generate_order_dataset

FAST_CONFIG = {
    "experiment": {"seed": 0, "modes": ["full"], "cache": False},
    "synthetic": {
        "tasks": 4,
        "steps_per_task": [3, 3],
        "videos_per_task": 4,
        "segments_per_video": 6,
        "vocab_size": 120,
        "feature_noise": 0.3,
    },
    "embedding": {"d": 128},
    "segment": {"epochs": 10},
    "longterm": {"epochs": 10, "window": 6},
    "forecast": {"enabled": True, "epochs": 10},
    "probe": {"train_per_class": 3, "epochs": 80},
}


class TestSynthetic:
    def test_kb_counts(self):
        corpus = generate_synthetic(SyntheticSpec(tasks=10, steps_per_task=(5, 5), seed=0))
        assert corpus.kb.num_tasks == 10
        assert corpus.kb.num_steps == 50

    def test_zero_noise_narration_equals_step_text(self):
        spec = SyntheticSpec(tasks=3, steps_per_task=(2, 2), distractor_tokens=0, drop_prob=0.0, seed=1)
        corpus = generate_synthetic(spec)
        for video in corpus.videos:
            for seg in video.segments:
                gid = corpus.truth.step_of_segment[(video.video_id, seg.segment_index)]
                assert seg.text == corpus.kb.step(gid).text

    def test_fixed_seed_reproduces_byte_identical_corpora(self):
        spec = SyntheticSpec(tasks=4, steps_per_task=(2, 4), distractor_tokens=2, drop_prob=0.1, seed=7)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert a.digest_payload() == b.digest_payload()

    def test_vocabulary_too_small_rejected(self):
        with pytest.raises(SyntheticError, match="vocabulary"):
            generate_synthetic(SyntheticSpec(tasks=2, steps_per_task=(2, 2), vocab_size=2))

    def test_bad_probability_rejected(self):
        with pytest.raises(SyntheticError):
            SyntheticSpec(drop_prob=1.5)

    def test_videos_execute_task_steps_in_order(self):
        spec = SyntheticSpec(tasks=2, steps_per_task=(3, 3), segments_per_video=6, seed=0)
        corpus = generate_synthetic(spec)
        video = corpus.videos[0]
        task = corpus.truth.task_of_video[video.video_id]
        steps = corpus.kb.steps_of_task(task)
        for seg in video.segments:
            gid = corpus.truth.step_of_segment[(video.video_id, seg.segment_index)]
            assert gid == steps[seg.segment_index % len(steps)].global_id

    def test_task_id_corruption_rate(self):
        spec = SyntheticSpec(tasks=10, videos_per_task=40, segments_per_video=1,
                             task_id_corrupt_prob=0.2, seed=3)
        corpus = generate_synthetic(spec)
        wrong = sum(
            1
            for v in corpus.videos
            if v.task_id != corpus.truth.task_of_video[v.video_id]
        )
        rate = wrong / len(corpus.videos)
        assert 0.1 < rate < 0.3

    def test_order_dataset_pairs_share_token_multiset(self):
        train, test = generate_order_dataset(4, 3, length=5, d=8, seed=0)
        assert len(train) == 4
        assert len(test) == 6
        for i in range(0, len(test), 2):
            a, la, _ = test[i]
            b, lb, _ = test[i + 1]
            assert la == 1 - lb
            assert np.allclose(np.sort(a, axis=0), np.sort(b, axis=0))


class TestEvaluate:
    def test_identical_predictions(self):
        assert top1_accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_majority_class_balanced(self):
        preds = [0, 0, 0, 0]
        labels = [0, 0, 1, 1]
        assert top1_accuracy(preds, labels) == 0.5
        mean, per_class = per_class_accuracy(preds, labels)
        assert per_class == {0: 1.0, 1: 0.0}
        assert mean == 0.5

    def test_frame_accuracy_weights_by_duration(self):
        # one wrong 3-second segment out of 10 seconds total
        preds = [1, 2]
        labels = [1, 9]
        assert frame_accuracy(preds, labels, durations_s=[7.0, 3.0]) == pytest.approx(0.7)

    def test_length_mismatch_rejected(self):
        with pytest.raises(EvaluationError, match="differ"):
            top1_accuracy([1], [1, 2])

    def test_evaluate_dispatch(self):
        assert evaluate([1], [1], "top1") == 1.0
        assert evaluate([1], [1], "per_class") == 1.0
        assert evaluate([1], [1], "frame_acc", durations_s=[2.0]) == 1.0
        with pytest.raises(EvaluationError):
            evaluate([1], [1], "nope")


class TestPipeline:
    def test_all_metrics_populated(self):
        report = run_pipeline(FAST_CONFIG)
        for name in (
            "assignment_recovery",
            "probe_raw_accuracy",
            "probe_feature_accuracy",
            "task_accuracy",
            "forecast_accuracy",
        ):
            assert report.metrics[name] is not None
            assert 0.0 <= report.metrics[name] <= 1.0

    def test_identical_config_identical_metrics_without_cache(self):
        a = run_pipeline(FAST_CONFIG)
        b = run_pipeline(FAST_CONFIG)
        assert a.metrics_json() == b.metrics_json()

    def test_second_run_served_from_cache(self, tmp_path):
        report_a = run_pipeline(merge_config(FAST_CONFIG, {"experiment": {"cache": True}}),
                                cache_dir=tmp_path)
        assert not any(info.cached for info in report_a.stages.values())
        report_b = run_pipeline(merge_config(FAST_CONFIG, {"experiment": {"cache": True}}),
                                cache_dir=tmp_path)
        assert all(info.cached for info in report_b.stages.values())
        assert report_a.metrics_json() == report_b.metrics_json()

    def test_cache_dir_resolved_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STEPWELD_CACHE_DIR", str(tmp_path / "envcache"))
        cfg = merge_config(FAST_CONFIG, {"experiment": {"cache": True}})
        run_pipeline(cfg)
        report = run_pipeline(cfg)
        assert (tmp_path / "envcache").is_dir()
        assert all(info.cached for info in report.stages.values())

    def test_config_change_invalidates_dependent_stages(self, tmp_path):
        base = merge_config(FAST_CONFIG, {"experiment": {"cache": True}})
        run_pipeline(base, cache_dir=tmp_path)
        changed = merge_config(base, {"embedding": {"seed": 8}})
        report = run_pipeline(changed, cache_dir=tmp_path)
        assert report.stages["synthetic"].cached  # upstream untouched
        assert not report.stages["embed"].cached
        assert not report.stages["assign[full]"].cached
        assert not report.stages["segment[full]"].cached

    def test_cached_artifact_byte_change_invalidates_children(self, tmp_path):
        base = merge_config(FAST_CONFIG, {"experiment": {"cache": True}})
        first = run_pipeline(base, cache_dir=tmp_path)
        # tamper with the cached embedding artifact: children keyed on its
        # byte digest must recompute
        embed_dir = tmp_path / first.stages["embed"].digest[:2] / first.stages["embed"].digest
        target = embed_dir / "narrs.emb"
        raw = bytearray(target.read_bytes())
        raw[-1] ^= 0xFF
        target.write_bytes(bytes(raw))
        second = run_pipeline(base, cache_dir=tmp_path)
        assert second.stages["embed"].cached
        assert second.stages["embed"].output_digest != first.stages["embed"].output_digest
        assert not second.stages["assign[full]"].cached

    def test_hidden_truth_never_reaches_labeling_or_training(self):
        # pseudo-labels must be a function of the visible corpus only:
        # perturbing the hidden truth changes nothing upstream of evaluation
        spec = SyntheticSpec(tasks=3, steps_per_task=(3, 3), videos_per_task=2,
                             segments_per_video=4, vocab_size=100, seed=0)
        corpus = generate_synthetic(spec)
        provider = hash_provider(d=64, seed=7)
        steps = [s.text for s in corpus.kb.steps()]
        step_table = embed_texts(provider, steps, ids=[str(s.global_id) for s in corpus.kb.steps()])
        narr_ids = [f"{v.video_id}:{s.segment_index}" for v in corpus.videos for s in v.segments]
        narr_table = embed_texts(provider, [s.text for v in corpus.videos for s in v.segments], ids=narr_ids)
        before = assign_corpus(corpus.videos, narr_table, step_table, corpus.kb, AssignmentConfig(k=2))
        for key in corpus.truth.step_of_segment:
            corpus.truth.step_of_segment[key] = 0  # scramble the truth
        after = assign_corpus(corpus.videos, narr_table, step_table, corpus.kb, AssignmentConfig(k=2))
        assert [d.global_ids for d in before.distributions] == [d.global_ids for d in after.distributions]

    def test_supervision_mode_comparison_produces_ranking(self):
        cfg = merge_config(FAST_CONFIG, {
            "experiment": {"modes": ["full", "task_id_label"]},
            "forecast": {"enabled": False},
        })
        report = run_pipeline(cfg)
        assert set(report.modes) == {"full", "task_id_label"}
        assert sorted(report.ranking) == ["full", "task_id_label"]
        assert report.modes["task_id_label"]["assignment_recovery"] is None


class TestReportRendering:
    def _report(self):
        return {
            "config_digest": "abc",
            "seeds": {"experiment": 0},
            "metrics": {"task_accuracy": 0.9, "forecast_accuracy": None},
            "modes": {"full": {"task_accuracy": 0.9, "assignment_recovery": 1.0},
                      "asr_kmeans": {"task_accuracy": 0.7, "assignment_recovery": None}},
            "ranking": ["full", "asr_kmeans"],
            "loss_curves": {"segment[full]": [1.0, 0.5, 0.2]},
        }

    def test_table_contains_metrics_and_ranking(self):
        table = render_table(self._report())
        assert "task_accuracy\t0.9000" in table
        assert "ranking\tfull->asr_kmeans" in table

    def test_render_writes_table_and_figures(self, tmp_path):
        written = render_report(self._report(), tmp_path, fmt="table")
        assert written["table"].exists()
        assert written["metrics_figure"].suffix == ".png"
        assert written["modes_figure"].exists()
        assert written["curves_figure"].exists()

    def test_render_json_only(self, tmp_path):
        written = render_report(self._report(), tmp_path, fmt="json")
        doc = json.loads(written["metrics"].read_text())
        assert doc["metrics"]["task_accuracy"] == 0.9
        assert "loss_curves" not in doc
