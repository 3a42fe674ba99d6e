"""Unsupervised video summarization with a convolutional-attentive generator
and an LSTM discriminator, built on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .data_io import SyntheticSpec, VideoRecord, gen_synthetic, load_dataset, load_features, save_dataset
from .discriminator import DiscriminatorParams, discriminate
from .evaluation import EvalReport, fscore, fscore_multi_user, five_fold_cv, kendall_tau, spearman_rho
from .generator import GeneratorParams, generate
from .postprocess import ShotSegmentation, Summary, kts_changepoints, knapsack_select, scores_to_summary
from .training import TrainingConfig, predict_scores, train, train_step

__all__ = [
    "DiscriminatorParams",
    "EvalReport",
    "GeneratorParams",
    "ShotSegmentation",
    "Summary",
    "SyntheticSpec",
    "TrainingConfig",
    "VideoRecord",
    "discriminate",
    "five_fold_cv",
    "fscore",
    "fscore_multi_user",
    "gen_synthetic",
    "generate",
    "kendall_tau",
    "knapsack_select",
    "kts_changepoints",
    "load_dataset",
    "load_features",
    "predict_scores",
    "save_dataset",
    "scores_to_summary",
    "spearman_rho",
    "train",
    "train_step",
]
