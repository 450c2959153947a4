"""Integer per-pixel class assignments with an ignore sentinel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE_INDEX = 255


@dataclass
class LabelMap:
    """A dense H x W grid of integer class labels.

    Entries equal to ``ignore_index`` mark unlabeled pixels: they are
    excluded from every loss, metric, and affinity target.
    """

    labels: np.ndarray
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {arr.shape}")
        self.labels = np.ascontiguousarray(arr, dtype=np.int32)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def valid(self) -> np.ndarray:
        """Boolean H x W mask of non-ignored pixels."""
        return self.labels != self.ignore_index

    def validate_classes(self, num_classes: int) -> None:
        """Raise if any non-ignored label falls outside [0, num_classes)."""
        bad = self.valid & ((self.labels < 0) | (self.labels >= num_classes))
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ValueError(
                f"label {self.labels[y, x]} at pixel ({y}, {x}) is outside "
                f"[0, {num_classes})"
            )

    def copy(self) -> "LabelMap":
        return LabelMap(self.labels.copy(), self.ignore_index)
