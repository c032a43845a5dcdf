"""Progressive residual quantization: train codebooks, encode vectors, and search
binary codes of several lengths at once by asymmetric distance."""

from ._dpq import (
    ClassificationMode,
    ClassifierTap,
    DistanceMetric,
    EncodedDatabase,
    Hyperparameters,
    Model,
    Optimizer,
    RetrievalResult,
    TrainingDiagnostics,
    __version__,
    batch_loss,
    encode,
    load_database,
    load_model,
    make_synthetic,
    mean_average_precision,
    model_digest,
    precision_at_r,
    precision_recall_curve,
    read_fvecs,
    reconstruct,
    save_database,
    save_model,
    topk,
    train,
    write_fvecs,
)


def hyperparameters(**overrides):
    """Hyperparameters with keyword overrides, e.g. hyperparameters(layers=2, epochs=8).

    The classification-loss weight is spelled ``lambda_``.
    """
    hyper = Hyperparameters()
    for name, value in overrides.items():
        if not hasattr(hyper, name):
            raise AttributeError(f"unknown hyperparameter {name!r}")
        setattr(hyper, name, value)
    return hyper


__all__ = [
    "ClassificationMode",
    "ClassifierTap",
    "DistanceMetric",
    "EncodedDatabase",
    "Hyperparameters",
    "Model",
    "Optimizer",
    "RetrievalResult",
    "TrainingDiagnostics",
    "__version__",
    "batch_loss",
    "encode",
    "hyperparameters",
    "load_database",
    "load_model",
    "make_synthetic",
    "mean_average_precision",
    "model_digest",
    "precision_at_r",
    "precision_recall_curve",
    "read_fvecs",
    "reconstruct",
    "save_database",
    "save_model",
    "topk",
    "train",
    "write_fvecs",
]
