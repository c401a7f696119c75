"""Synthetic head-and-neck phantoms: painted organ shapes on a flat background."""

from typing import Tuple

import backoff
import numpy as np
from loguru import logger

from src.config.base_config import settings
from src.config.run_config import OrganRecipe, PhantomSpec
from src.errors import GenerationError
from src.metrics.labelmap import LabelMap
from src.tensor.core import Tensor


class PlacementRejected(Exception):
    """A drawn organ shape fell outside its recipe's pixel range."""

    def __init__(self, organ: str, pixels: int, bounds: Tuple[int, int]):
        self.organ = organ
        self.pixels = pixels
        self.bounds = bounds
        super().__init__(f"{organ}: {pixels} free pixels, need {bounds[0]}..{bounds[1]}")


def _coordinates(size: int):
    return np.mgrid[0:size, 0:size].astype(np.float64)


def _ellipse(rows, cols, cy, cx, semi_row, semi_col, angle) -> np.ndarray:
    dy, dx = rows - cy, cols - cx
    u = dy * np.cos(angle) + dx * np.sin(angle)
    v = -dy * np.sin(angle) + dx * np.cos(angle)
    return (u / semi_row) ** 2 + (v / semi_col) ** 2 <= 1.0


def draw_shape(recipe: OrganRecipe, size: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of one random instance of ``recipe``."""
    rows, cols = _coordinates(size)
    low, high = recipe.area
    band = 0.15 * (high - low)
    area = rng.uniform(low + band, high - band) * size * size
    aspect = rng.uniform(*recipe.aspect)
    cy = (recipe.center[0] + rng.uniform(-recipe.jitter, recipe.jitter)) * (size - 1)
    cx = (recipe.center[1] + rng.uniform(-recipe.jitter, recipe.jitter)) * (size - 1)
    angle = rng.uniform(0.0, np.pi)

    if recipe.family == "ellipse":
        semi_row = np.sqrt(area * aspect / np.pi)
        semi_col = np.sqrt(area / (np.pi * aspect))
        return _ellipse(rows, cols, cy, cx, semi_row, semi_col, angle)
    if recipe.family == "paired":
        half = area / 2
        semi_row = np.sqrt(half * aspect / np.pi)
        semi_col = np.sqrt(half / (np.pi * aspect))
        mirrored = (size - 1) - cx
        return _ellipse(rows, cols, cy, cx, semi_row, semi_col, angle) | _ellipse(
            rows, cols, cy, mirrored, semi_row, semi_col, -angle
        )
    if recipe.family == "strip":
        height = np.sqrt(area * aspect)
        width = area / height
        return (np.abs(rows - cy) <= height / 2) & (np.abs(cols - cx) <= width / 2)
    if recipe.family == "ring":
        thickness = max(1.0, recipe.thickness * size)
        outer = (2 * area / np.pi + thickness**2) / (2 * thickness)
        radius = np.hypot(rows - cy, cols - cx)
        return (radius <= outer) & (radius >= outer - thickness) & (rows >= cy)
    raise GenerationError(f"unknown shape family {recipe.family!r}")


def _log_retry(details) -> None:
    logger.debug(f"phantom placement retry {details['tries']}: {details['exception']}")


def _place_organ(
    labels: np.ndarray, recipe: OrganRecipe, rng: np.random.Generator
) -> np.ndarray:
    bounds = recipe.pixel_range(labels.shape[0])

    @backoff.on_exception(
        backoff.constant,
        PlacementRejected,
        max_tries=settings.phantom_max_retries,
        interval=0,
        jitter=None,
        on_backoff=_log_retry,
    )
    def attempt() -> np.ndarray:
        region = draw_shape(recipe, labels.shape[0], rng) & (labels == 0)
        pixels = int(region.sum())
        if not bounds[0] <= pixels <= bounds[1]:
            raise PlacementRejected(recipe.name, pixels, bounds)
        return region

    if bounds[1] < bounds[0]:
        raise GenerationError(f"{recipe.name}: no pixel count satisfies {recipe.area} at size {labels.shape[0]}")
    try:
        return attempt()
    except PlacementRejected as exc:
        raise GenerationError(
            f"could not place {recipe.name} after {settings.phantom_max_retries} tries: {exc}"
        ) from None


def generate_phantom(spec: PhantomSpec) -> Tuple[Tensor, LabelMap]:
    """Image [1, H, W] in [0, 1] and its label map, deterministic in ``spec.seed``.

    Organs are painted in recipe order; a later organ only claims pixels no
    earlier organ holds.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    labels = np.zeros((size, size), dtype=np.int64)
    image = np.full((size, size), spec.background, dtype=np.float64)

    for class_id, recipe in enumerate(spec.organ_recipes(), start=1):
        region = _place_organ(labels, recipe, rng)
        labels[region] = class_id
        image[region] = rng.uniform(*recipe.intensity)

    if spec.noise_std > 0:
        image = np.clip(image + rng.normal(0.0, spec.noise_std, image.shape), 0.0, 1.0)

    label_map = LabelMap(labels, spacing=spec.spacing, num_classes=spec.num_organs + 1)
    return Tensor(image[None], dtype=np.float32), label_map
