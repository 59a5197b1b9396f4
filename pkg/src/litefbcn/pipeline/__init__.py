"""Synthetic data, fold splitting, optimization and the training loop."""

from .augment import augment, circular_shift, hflip
from .data import (CovarianceClass, CovarianceClassSpec, DatasetManifest, gen_covariance_dataset,
                   sample_covariance_dataset, three_class_demo_spec)
from .folds import FoldSplit, stratified_kfold
from .losses import cross_entropy_loss, one_hot
from .optim import PlateauScheduler, SGDState, lr_plateau_step, sgd_step
from .train import CheckpointTracker, TrainConfig, evaluate, fit, train_folds
