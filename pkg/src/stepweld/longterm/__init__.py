from .kb_transfer import (
    ForecastSample,
    InputBuildError,
    RetrievedStep,
    StepEmbeddingSequence,
    build_forecast_samples,
    build_input,
    retrieve_step,
    retrieve_steps,
    successor_vectors,
)
from .probe import ProbeConfig, ProbeResult, linear_probe, probe_loss_and_grads
from .train import (
    LongTermResult,
    LongTermTrainConfig,
    SequenceSample,
    evaluate_longterm,
    predict_ensembled,
    predict_longterm,
    train_longterm,
)
from .transformer import (
    TransformerClassifier,
    TransformerConfig,
    TransformerError,
    gelu,
    gelu_grad,
    load_transformer,
    preset,
    save_transformer,
)

__all__ = [
    "ForecastSample",
    "InputBuildError",
    "RetrievedStep",
    "StepEmbeddingSequence",
    "build_forecast_samples",
    "build_input",
    "retrieve_step",
    "retrieve_steps",
    "successor_vectors",
    "ProbeConfig",
    "ProbeResult",
    "linear_probe",
    "probe_loss_and_grads",
    "LongTermResult",
    "LongTermTrainConfig",
    "SequenceSample",
    "evaluate_longterm",
    "predict_ensembled",
    "predict_longterm",
    "train_longterm",
    "TransformerClassifier",
    "TransformerConfig",
    "TransformerError",
    "gelu",
    "gelu_grad",
    "load_transformer",
    "preset",
    "save_transformer",
]
