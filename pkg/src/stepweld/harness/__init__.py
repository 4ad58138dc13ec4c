from .evaluate import (
    EvaluationError,
    evaluate,
    frame_accuracy,
    per_class_accuracy,
    top1_accuracy,
)
from .pipeline import (
    CACHE_ENV,
    DEFAULT_CONFIG,
    ExperimentReport,
    PipelineError,
    StageCache,
    config_digest,
    deep_merge,
    load_report,
    merge_config,
    run_pipeline,
)
from .report import ReportError, metrics_rows, render_report, render_table
from .synthetic import (
    GroundTruth,
    SyntheticCorpus,
    SyntheticError,
    SyntheticSpec,
    generate_synthetic,
)

__all__ = [
    "EvaluationError",
    "evaluate",
    "frame_accuracy",
    "per_class_accuracy",
    "top1_accuracy",
    "CACHE_ENV",
    "DEFAULT_CONFIG",
    "ExperimentReport",
    "PipelineError",
    "StageCache",
    "config_digest",
    "deep_merge",
    "load_report",
    "merge_config",
    "run_pipeline",
    "ReportError",
    "metrics_rows",
    "render_report",
    "render_table",
    "GroundTruth",
    "SyntheticCorpus",
    "SyntheticError",
    "SyntheticSpec",
    "generate_synthetic",
]
