"""Raster output for ``predict``: grayscale input, overlay and difference map.

PGM/PPM are written as binary netpbm (P5/P6); PNG goes through matplotlib.
"""

from pathlib import Path
from typing import Union

import numpy as np
from matplotlib import colormaps
from matplotlib import image as mpimg

from src.errors import DimensionError, FormatError, UsageError
from src.metrics.labelmap import LabelMap
from src.metrics.surface import boundary_mask

TRUTH_COLOR = np.array([0, 200, 0], dtype=np.uint8)
PREDICTION_COLOR = np.array([230, 0, 0], dtype=np.uint8)
BLACK = np.zeros(3, dtype=np.uint8)
WHITE = np.full(3, 255, dtype=np.uint8)

PathLike = Union[str, Path]


def to_gray8(image: np.ndarray) -> np.ndarray:
    """[1, H, W] or [H, W] intensities in [0, 1] to uint8."""
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 3 and array.shape[0] == 1:
        array = array[0]
    if array.ndim != 2:
        raise DimensionError(f"expected a single-channel image, got shape {array.shape}")
    return np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)


def class_palette(num_classes: int) -> np.ndarray:
    """RGB per class id; class 0 is black and foreground classes cycle through tab10."""
    cmap = colormaps["tab10"]
    palette = np.zeros((num_classes, 3), dtype=np.uint8)
    for class_id in range(1, num_classes):
        rgba = cmap((class_id - 1) % cmap.N)
        palette[class_id] = np.round(np.array(rgba[:3]) * 255.0).astype(np.uint8)
    return palette


def overlay(image: np.ndarray, truth: LabelMap, pred: LabelMap) -> np.ndarray:
    """Grayscale image with truth boundaries in green and predicted boundaries in red.

    Where both boundaries coincide the prediction color wins.
    """
    gray = to_gray8(image)
    if truth.shape != gray.shape or pred.shape != gray.shape:
        raise DimensionError(f"label maps {truth.shape}/{pred.shape} do not match image {gray.shape}")
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    for class_id in range(1, truth.num_classes):
        rgb[boundary_mask(truth.mask(class_id))] = TRUTH_COLOR
    for class_id in range(1, pred.num_classes):
        rgb[boundary_mask(pred.mask(class_id))] = PREDICTION_COLOR
    return rgb


def difference_map(truth: LabelMap, pred: LabelMap) -> np.ndarray:
    """Agreement on a foreground class is black, agreement on background white.

    A disagreeing pixel takes the color of the foreground class involved,
    the predicted class when the prediction is foreground.
    """
    if truth.shape != pred.shape:
        raise DimensionError(f"label maps differ in shape: {truth.shape} vs {pred.shape}")
    palette = class_palette(max(truth.num_classes, pred.num_classes))
    t, p = truth.classes, pred.classes
    rgb = np.empty(t.shape + (3,), dtype=np.uint8)
    rgb[(t == p) & (t == 0)] = WHITE
    rgb[(t == p) & (t != 0)] = BLACK
    disagree = t != p
    shown = np.where(p != 0, p, t)
    rgb[disagree] = palette[shown[disagree]]
    return rgb


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    gray = to_gray8(image)
    path = Path(path)
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + gray.tobytes())
    return path


def write_ppm(path: PathLike, rgb: np.ndarray) -> Path:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"expected [H, W, 3] RGB, got {rgb.shape}")
    path = Path(path)
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + rgb.tobytes())
    return path


def write_rgb(path: PathLike, rgb: np.ndarray) -> Path:
    """PNG or PPM by suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        return write_ppm(path, rgb)
    if suffix == ".png":
        mpimg.imsave(path, np.ascontiguousarray(rgb, dtype=np.uint8), format="png")
        return path
    raise UsageError(f"unsupported raster format {suffix!r}")


def read_netpbm(path: PathLike) -> np.ndarray:
    """Read a binary P5/P6 file written by :func:`write_pgm` or :func:`write_ppm`."""
    data = Path(path).read_bytes()
    try:
        magic, dims, maxval, pixels = data.split(b"\n", 3)
        width, height = (int(v) for v in dims.split())
        maxval = int(maxval)
    except ValueError:
        raise FormatError(path, "malformed netpbm header") from None
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise FormatError(path, "unsupported netpbm header")
    channels = 1 if magic == b"P5" else 3
    array = np.frombuffer(pixels, dtype=np.uint8, count=width * height * channels)
    return array.reshape((height, width) if channels == 1 else (height, width, 3))
