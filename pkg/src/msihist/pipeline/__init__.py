"""Pipeline orchestration: config, synthetic data, training, evaluation, CLI."""

from .config import RunConfig, load_config
from .data import (
    DatasetManifest,
    ImagePair,
    PipelineStageError,
    build_manifest,
    prepare_pairs,
    split_dataset,
)
from .evaluate import comparison_report, evaluate_checkpoint, synth_from_checkpoint
from .synthetic import generate_synthetic_dataset
from .training import train_pix2pix, train_unet

__all__ = [
    "RunConfig",
    "load_config",
    "DatasetManifest",
    "ImagePair",
    "PipelineStageError",
    "build_manifest",
    "prepare_pairs",
    "split_dataset",
    "comparison_report",
    "evaluate_checkpoint",
    "synth_from_checkpoint",
    "generate_synthetic_dataset",
    "train_pix2pix",
    "train_unet",
]
