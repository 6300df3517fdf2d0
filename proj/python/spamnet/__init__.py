"""Sparse Bayesian message passing over signed graph structures."""

from ._spamnet import (
    GraphDataset,
    LabelSplit,
    Model,
    SpamError,
    TrainResult,
    add_feature_noise,
    adversarial_flip,
    approx_sparse_code,
    csbm,
    dataset,
    delete_edges,
    evaluate,
    gcn_train_evaluate,
    grad_check_full_loss,
    load_dataset,
    make_split,
    predict_mc,
    save_dataset,
    soft_threshold,
    solve_lasso,
    train,
)

__all__ = [
    "GraphDataset",
    "LabelSplit",
    "Model",
    "SpamError",
    "TrainResult",
    "add_feature_noise",
    "adversarial_flip",
    "approx_sparse_code",
    "csbm",
    "dataset",
    "delete_edges",
    "evaluate",
    "gcn_train_evaluate",
    "grad_check_full_loss",
    "load_dataset",
    "make_split",
    "predict_mc",
    "save_dataset",
    "soft_threshold",
    "solve_lasso",
    "train",
]
