from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError, LabelError


@dataclass
class LabelMap:
    """Integer class id per pixel (0 = background) with physical pixel spacing in mm.

    ``classes`` is H x W or a batch N x H x W of independent slices.
    """

    classes: np.ndarray
    spacing: Tuple[float, float] = (1.0, 1.0)
    num_classes: Optional[int] = None

    def __post_init__(self):
        classes = np.asarray(self.classes)
        if classes.ndim not in (2, 3):
            raise DimensionError(f"label map must be HxW or NxHxW, got shape {classes.shape}")
        if classes.size and not np.issubdtype(classes.dtype, np.integer):
            if not np.all(np.equal(np.mod(classes, 1), 0)):
                raise LabelError("label map holds non-integer class ids")
        self.classes = classes.astype(np.int64, copy=False)
        self.spacing = (float(self.spacing[0]), float(self.spacing[1]))
        if min(self.spacing) <= 0:
            raise DimensionError(f"spacing must be positive, got {self.spacing}")
        if self.classes.size and self.classes.min() < 0:
            raise LabelError("class ids must be non-negative")
        highest = int(self.classes.max()) if self.classes.size else 0
        if self.num_classes is None:
            self.num_classes = max(highest + 1, 2)
        elif highest >= self.num_classes:
            raise LabelError(f"class id {highest} outside [0, {self.num_classes})")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.classes.shape)

    @property
    def is_batched(self) -> bool:
        return self.classes.ndim == 3

    def mask(self, class_id: int) -> np.ndarray:
        return self.classes == class_id

    def slices(self) -> Iterator["LabelMap"]:
        """Each H x W slice of a batch (or the map itself)."""
        if not self.is_batched:
            yield self
            return
        for index in range(self.classes.shape[0]):
            yield self[index]

    def __getitem__(self, index: int) -> "LabelMap":
        if not self.is_batched:
            raise DimensionError("cannot index an unbatched label map")
        return LabelMap(self.classes[index], self.spacing, self.num_classes)

    def __len__(self) -> int:
        return self.classes.shape[0] if self.is_batched else 1

    @classmethod
    def stack(cls, maps: Sequence["LabelMap"]) -> "LabelMap":
        if not maps:
            raise DimensionError("cannot stack zero label maps")
        spacing = maps[0].spacing
        num_classes = max(m.num_classes for m in maps)
        return cls(np.stack([m.classes for m in maps]), spacing, num_classes)


@dataclass
class BoundarySet:
    """Boundary pixel centres of one class region, in mm."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def as_list(self) -> List[Tuple[float, float]]:
        return [tuple(p) for p in self.points.tolist()]
