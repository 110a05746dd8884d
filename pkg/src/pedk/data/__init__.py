"""Datasets: partitioning, augmentation, manifests and the synthetic generator."""

from pedk.data.dataset import (
    SPLIT_RATIOS,
    SPLITS,
    PartitionedDataset,
    Sample,
    partition,
    read_manifest,
    subsample_training,
    write_manifest,
)
from pedk.data.synth import SynthConfig, generate_datasets

__all__ = [
    "SPLIT_RATIOS", "SPLITS", "PartitionedDataset", "Sample", "partition", "read_manifest",
    "subsample_training", "write_manifest", "SynthConfig", "generate_datasets",
]
