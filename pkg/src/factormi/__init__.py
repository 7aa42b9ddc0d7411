"""Factorized common/class-specific feature learning for EEG motor imagery."""

from .autodiff import Tape, Tensor, backward
from .data import Dataset, EegTrial, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .model import (FactorModel, ModelConfig, build_model, classify, discriminate, extract_class_specific,
                    extract_common)
from .training import CvSummary, FoldReport, TrainConfig, cross_validate, fit

__version__ = "0.1.0"
