"""Phantom generation, preprocessing, augmentation and dataset files."""

from src.data.dataset import (
    PhantomDataset,
    case_seed,
    kfold_assignment,
    open_dataset,
    split_cases,
    write_dataset,
)
from src.data.phantom import draw_shape, generate_phantom
from src.data.transforms import Transform, apply_transform, augment, center_crop, sample_transform

__all__ = [
    "PhantomDataset",
    "case_seed",
    "kfold_assignment",
    "open_dataset",
    "split_cases",
    "write_dataset",
    "draw_shape",
    "generate_phantom",
    "Transform",
    "apply_transform",
    "augment",
    "center_crop",
    "sample_transform",
]
