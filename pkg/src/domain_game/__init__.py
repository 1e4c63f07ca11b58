from domain_game.common.geometry import TransformSpec, apply_transform, compose, enumerate_group, invert, sample_transform_set
from domain_game.common.objectives import LossBundle, dice_score, jaccard_score, psnr, total_objective
from domain_game.data.synthdata import BenchmarkConfig, BenchmarkManifest, DomainStyle, make_benchmark, write_benchmark
from domain_game.evaluation.ablations import AblationRegistry, run_ablation_suite, train_baseline_single_encoder
from domain_game.evaluation.metrics import MetricsReport, cross_domain_report, evaluate_domain, select_best_checkpoint
from domain_game.models.nets import DomainGameNets, FeaturePair, NetConfig
from domain_game.training.game import GameState, StepMetrics, TrainConfig, lr_at, train_step
from domain_game.training.runner import run_training

# make low level modules available for import more easily
__all__ = [
    "TransformSpec",
    "apply_transform",
    "compose",
    "enumerate_group",
    "invert",
    "sample_transform_set",
    "LossBundle",
    "dice_score",
    "jaccard_score",
    "psnr",
    "total_objective",
    "BenchmarkConfig",
    "BenchmarkManifest",
    "DomainStyle",
    "make_benchmark",
    "write_benchmark",
    "DomainGameNets",
    "FeaturePair",
    "NetConfig",
    "GameState",
    "StepMetrics",
    "TrainConfig",
    "lr_at",
    "train_step",
    "run_training",
    "MetricsReport",
    "cross_domain_report",
    "evaluate_domain",
    "select_best_checkpoint",
    "AblationRegistry",
    "run_ablation_suite",
    "train_baseline_single_encoder",
]
