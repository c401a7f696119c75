"""Center crop and random geometric augmentation of image/label pairs.

Images are [C, H, W] tensors (or [H, W] arrays); labels are single-slice
LabelMaps. Every transform is applied identically to both: bilinear for the
image, nearest-neighbour for the labels, zero/background outside the frame.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import affine_transform

from src.config.run_config import AugmentParams
from src.errors import DimensionError
from src.metrics.labelmap import LabelMap
from src.tensor.core import Tensor


def _as_array(image) -> np.ndarray:
    return image.numpy() if isinstance(image, Tensor) else np.asarray(image)


def _like(image, array: np.ndarray):
    return Tensor(array, dtype=image.dtype) if isinstance(image, Tensor) else array


def center_crop(image, labels: LabelMap, target: int) -> Tuple[object, LabelMap]:
    """Crop both to ``target`` x ``target`` around the centre.

    When the margin is odd the extra row/column is removed from the top/left.
    """
    array = _as_array(image)
    height, width = labels.shape[-2:]
    if array.shape[-2:] != (height, width):
        raise DimensionError(f"image {array.shape} and labels {labels.shape} differ in extent")
    if target < 1 or target > height or target > width:
        raise DimensionError(f"cannot crop {height}x{width} to {target}x{target}")
    top = (height - target + 1) // 2
    left = (width - target + 1) // 2
    window = (slice(top, top + target), slice(left, left + target))
    cropped = LabelMap(labels.classes[(..., *window)], labels.spacing, labels.num_classes)
    return _like(image, np.ascontiguousarray(array[(..., *window)])), cropped


@dataclass(frozen=True)
class Transform:
    """One concrete draw: flips, then rotation about the centre, then shift."""

    flip_h: bool = False
    flip_v: bool = False
    angle: float = 0.0  # degrees, counter-clockwise in (row, col) with rows pointing down
    shift: Tuple[float, float] = (0.0, 0.0)  # (rows, cols)

    @property
    def is_integral(self) -> bool:
        return self.angle == 0.0 and all(float(s).is_integer() for s in self.shift)


def sample_transform(params: AugmentParams, size: int, rng: np.random.Generator) -> Transform:
    draws = rng.random(5)
    max_shift = params.shift_bound(size)
    return Transform(
        flip_h=params.flip_h and draws[0] < params.flip_prob,
        flip_v=params.flip_v and draws[1] < params.flip_prob,
        angle=float((2 * draws[2] - 1) * params.max_rotation),
        shift=(float((2 * draws[3] - 1) * max_shift), float((2 * draws[4] - 1) * max_shift)),
    )


def _shift_exact(array: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(array)
    height, width = array.shape[-2:]
    if abs(dy) >= height or abs(dx) >= width:
        return out
    src_rows = slice(max(0, -dy), height - max(0, dy))
    dst_rows = slice(max(0, dy), height - max(0, -dy))
    src_cols = slice(max(0, -dx), width - max(0, dx))
    dst_cols = slice(max(0, dx), width - max(0, -dx))
    out[..., dst_rows, dst_cols] = array[..., src_rows, src_cols]
    return out


def _exact(array: np.ndarray, transform: Transform) -> np.ndarray:
    if transform.flip_h:
        array = np.flip(array, axis=-1)
    if transform.flip_v:
        array = np.flip(array, axis=-2)
    dy, dx = (int(s) for s in transform.shift)
    return np.ascontiguousarray(_shift_exact(array, dy, dx))


def inverse_affine(transform: Transform, height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Matrix and offset mapping output (row, col) to input (row, col)."""
    theta = np.deg2rad(transform.angle)
    cos, sin = np.cos(theta), np.sin(theta)
    rotation = np.array([[cos, -sin], [sin, cos]])
    centre = np.array([(height - 1) / 2, (width - 1) / 2])
    shift = np.asarray(transform.shift, dtype=np.float64)
    # undo shift and rotation: p_flipped = R^T (o - c - s) + c
    matrix = rotation.T
    offset = centre - matrix @ (centre + shift)
    # undo flips
    signs = np.array([-1.0 if transform.flip_v else 1.0, -1.0 if transform.flip_h else 1.0])
    bases = np.array([height - 1 if transform.flip_v else 0.0, width - 1 if transform.flip_h else 0.0])
    return signs[:, None] * matrix, signs * offset + bases


def _resample(array: np.ndarray, transform: Transform, order: int) -> np.ndarray:
    height, width = array.shape[-2:]
    matrix, offset = inverse_affine(transform, height, width)
    planes = array.reshape(-1, height, width)
    out = np.stack(
        [affine_transform(plane, matrix, offset=offset, order=order, mode="constant", cval=0) for plane in planes]
    )
    return out.reshape(array.shape)


def apply_transform(image, labels: LabelMap, transform: Transform):
    array = _as_array(image)
    if array.shape[-2:] != labels.shape[-2:]:
        raise DimensionError(f"image {array.shape} and labels {labels.shape} differ in extent")
    if transform.is_integral:
        new_image = _exact(array, transform)
        new_labels = _exact(labels.classes, transform)
    else:
        new_image = _resample(array.astype(np.float64), transform, order=1).astype(array.dtype)
        new_labels = _resample(labels.classes, transform, order=0)
    return _like(image, new_image), LabelMap(new_labels, labels.spacing, labels.num_classes)


def augment(
    image, labels: LabelMap, params: AugmentParams, rng: Optional[np.random.Generator] = None
):
    """Random shift, rotation and flips; deterministic in ``params.seed`` unless ``rng`` is given."""
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    transform = sample_transform(params, labels.shape[-1], rng)
    return apply_transform(image, labels, transform)
