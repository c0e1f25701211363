"""Binary segmentation masks and pairwise overlap scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = ["BinaryMask", "MaskShapeError", "foreground_count", "dice", "jaccard", "METRICS"]


class MaskShapeError(ValueError):
    """Raised when two masks that must be compared have different sizes."""


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A 2D binary mask stored as a flat, row-major array of 0/1 bytes.

    The pixel buffer is copied on construction and marked read-only, so a
    mask can be shared freely between threads.
    """

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        arr = np.array(self.pixels, copy=True).reshape(-1)
        if arr.size != self.width * self.height:
            raise ValueError(
                f"pixel count {arr.size} does not match {self.width}x{self.height}"
            )
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("mask pixels must be exactly 0 or 1")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, array: Union[np.ndarray, Sequence[Sequence[int]]]) -> "BinaryMask":
        """Build a mask from a ``(height, width)`` array of booleans or 0/1 values."""
        arr = np.asarray(array)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2D array, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        return cls(arr.shape[1], arr.shape[0], arr.reshape(-1))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros(width * height, dtype=np.uint8))

    def to_array(self) -> np.ndarray:
        """Read-only ``(height, width)`` view of the pixels."""
        return self.pixels.reshape(self.height, self.width)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.width, self.height, self.pixels.tobytes()))

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, foreground={foreground_count(self)})"


def foreground_count(mask: BinaryMask) -> int:
    """Number of pixels equal to 1."""
    return int(np.count_nonzero(mask.pixels))


def _overlap_counts(a: BinaryMask, b: BinaryMask) -> tuple[int, int, int]:
    if a.width != b.width or a.height != b.height:
        raise MaskShapeError(
            f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.count_nonzero(a.pixels & b.pixels))
    return inter, foreground_count(a), foreground_count(b)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice overlap ``2|a & b| / (|a| + |b|)``.

    Two empty masks score 1.0 so that identical predictions always agree
    maximally; an empty mask against a nonempty one scores 0.0.
    """
    inter, na, nb = _overlap_counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2 * inter / (na + nb)


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union, with the same empty-mask convention as :func:`dice`."""
    inter, na, nb = _overlap_counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


METRICS = {"dice": dice, "jaccard": jaccard}
