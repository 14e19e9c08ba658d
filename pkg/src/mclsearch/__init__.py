"""Multilinear compressive learning and reconstruction-MSE configuration search."""

__version__ = "0.1.0"

from .data import LabeledDataset, SplitIndices, SyntheticSpec, load_dataset, make_synthetic, stratified_split
from .kernels import BACKEND
from .model import ConfigPoint, MclModel, evaluate, init_hosvd, init_reconstruction, init_task_head, train_joint
from .optim import OptimizerConfig, init_schedule, joint_schedule
from .search import ConfigGrid, build_report, enumerate_grid, full_evaluate, pearson, rank_by_mse, surrogate_scan

__all__ = [
    "BACKEND",
    "ConfigGrid",
    "ConfigPoint",
    "LabeledDataset",
    "MclModel",
    "OptimizerConfig",
    "SplitIndices",
    "SyntheticSpec",
    "build_report",
    "enumerate_grid",
    "evaluate",
    "full_evaluate",
    "init_hosvd",
    "init_reconstruction",
    "init_schedule",
    "init_task_head",
    "joint_schedule",
    "load_dataset",
    "make_synthetic",
    "pearson",
    "rank_by_mse",
    "stratified_split",
    "surrogate_scan",
    "train_joint",
]
