"""Importance weighting under distribution shift with support change."""

from .errors import DegenerateInputError, DomainError, NumericError, ShapeError
from .kernels import KernelConfig, median_heuristic, rbf_gram
from .netcore import Mlp, OptimizerState, forward, loss_and_grads, optimizer_step
from .oracle import consistency_report, exact_alpha, mc_giw_objective, mc_iw_objective, mc_risk
from .osvm import osvm_fit, osvm_score, split_validation
from .ratio import WeightVector, kmm_match, rulsif_fit, ulsif_eval, ulsif_fit
from .synth import Dataset, SupportSpec, make_case_spec, make_grid_example, make_toy_validation, sample
from .training import TrainConfig, class_prior_shift_mode, model_update, train, train_baseline, val_data_split

__all__ = [
    "DegenerateInputError", "DomainError", "NumericError", "ShapeError",
    "KernelConfig", "median_heuristic", "rbf_gram",
    "Mlp", "OptimizerState", "forward", "loss_and_grads", "optimizer_step",
    "consistency_report", "exact_alpha", "mc_giw_objective", "mc_iw_objective", "mc_risk",
    "osvm_fit", "osvm_score", "split_validation",
    "WeightVector", "kmm_match", "rulsif_fit", "ulsif_eval", "ulsif_fit",
    "Dataset", "SupportSpec", "make_case_spec", "make_grid_example", "make_toy_validation", "sample",
    "TrainConfig", "class_prior_shift_mode", "model_update", "train", "train_baseline",
    "val_data_split",
]
