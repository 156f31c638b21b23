"""
Data module: group dataset scanning, batch sampling, preprocessing and toy data.
"""

from .batch_sampler import GroupBatchSampler, per_group_count, sample_batch
from .group_parser import GroupDatasetParser, scan_dataset
from .preprocess import (
    collate_batch,
    load_group,
    load_image,
    preprocess_image,
    preprocess_mask,
    read_image,
    read_mask,
)
from .toy_generator import SHAPE_CLASSES, render_sample, synthesize_toy_dataset

__all__ = [
    "GroupBatchSampler",
    "per_group_count",
    "sample_batch",
    "GroupDatasetParser",
    "scan_dataset",
    "collate_batch",
    "load_group",
    "load_image",
    "preprocess_image",
    "preprocess_mask",
    "read_image",
    "read_mask",
    "SHAPE_CLASSES",
    "render_sample",
    "synthesize_toy_dataset",
]
