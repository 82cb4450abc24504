"""Galaxy morphology classification with from-scratch KNN and MLP models."""

from .dataset import Dataset, Schema, SplitSpec, parse_csv, split, standardize
from .evaluation import EvalReport, accuracy, confusion_matrix
from .knn import KnnModel, grid_search_k
from .mlp import MlpArchitecture, MlpModel, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EvalReport",
    "KnnModel",
    "MlpArchitecture",
    "MlpModel",
    "Schema",
    "SplitSpec",
    "TrainConfig",
    "accuracy",
    "confusion_matrix",
    "grid_search_k",
    "parse_csv",
    "split",
    "standardize",
]
