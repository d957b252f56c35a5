"""Dataset generation, training and evaluation."""

from .datasets import (Dataset, DatasetRecord, ProblemSample, generate_burgers_dataset, generate_poisson_dataset,
                       load_dataset, save_dataset)
from .evaluation import EvalReport, error_reduction, evaluate
from .training import train

__all__ = ["Dataset", "DatasetRecord", "ProblemSample", "generate_poisson_dataset", "generate_burgers_dataset",
           "load_dataset", "save_dataset", "train", "evaluate", "EvalReport", "error_reduction"]
