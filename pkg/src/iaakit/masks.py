"""Binary segmentation masks on a fixed pixel grid.

A mask is an immutable dense boolean grid. Everything downstream (pairwise
agreement, IAA aggregation) requires the masks of one image to live on the
same grid, so resizing to the canonical analysis grid happens here and
nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_GRID_SIDE = 256


class MaskError(ValueError):
    """Unreadable, malformed, or mismatched mask input."""


@dataclass(frozen=True)
class CanonicalGrid:
    """Square grid all masks are resized to before agreement computation."""

    side: int = DEFAULT_GRID_SIDE

    def __post_init__(self) -> None:
        if self.side <= 0:
            raise MaskError(f"grid side must be positive, got {self.side}")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Dense boolean foreground grid of shape (height, width).

    The backing array is frozen on construction; masks are safe to share
    across threads.
    """

    grid: np.ndarray

    def __post_init__(self) -> None:
        g = self.grid
        if not isinstance(g, np.ndarray) or g.ndim != 2 or g.dtype != np.bool_:
            raise MaskError("mask grid must be a 2-D boolean array")
        if g.shape[0] == 0 or g.shape[1] == 0:
            raise MaskError(f"mask dimensions must be positive, got {g.shape}")
        g.setflags(write=False)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BinaryMask":
        """Build a mask from any 2-D numeric array; pixel value > 0 is foreground."""
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise MaskError(f"expected a 2-D array, got shape {arr.shape}")
        return cls(grid=(arr > 0))

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def foreground_count(self) -> int:
        return int(self.grid.sum())

    @property
    def is_empty(self) -> bool:
        return not self.grid.any()

    def foreground_pixels(self) -> np.ndarray:
        """(N, 2) array of (row, col) foreground coordinates."""
        return np.argwhere(self.grid)

    def same_grid(self, other: "BinaryMask") -> bool:
        return self.shape == other.shape

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.grid, other.grid))

    def __hash__(self) -> int:
        return hash((self.shape, self.grid.tobytes()))


def load_mask(path: str | Path) -> BinaryMask:
    """Load a raster mask file; any pixel value > 0 is foreground.

    Accepts 8-bit grayscale or multi-channel images whose channels agree
    pixelwise (a common way binary masks end up stored as RGB).
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except (OSError, SyntaxError) as exc:
        raise MaskError(f"cannot read mask file {path}: {exc}") from exc
    if arr.ndim == 3:
        if arr.shape[2] == 0:
            raise MaskError(f"{path}: zero-channel image")
        first = arr[:, :, 0]
        if not all(np.array_equal(arr[:, :, c], first) for c in range(1, arr.shape[2])):
            raise MaskError(f"{path}: multi-channel mask with disagreeing channels")
        arr = first
    if arr.ndim != 2 or arr.size == 0:
        raise MaskError(f"{path}: expected a non-empty single-channel image, got shape {arr.shape}")
    return BinaryMask.from_array(arr)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as an 8-bit grayscale PNG, foreground=255, background=0."""
    path = Path(path)
    arr = mask.grid.astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def resize_nearest(mask: BinaryMask, target: CanonicalGrid) -> BinaryMask:
    """Nearest-neighbor resize onto the target square grid.

    Output pixel i samples source index floor((i + 0.5) * src / dst),
    evaluated in exact integer arithmetic, so the result is strictly binary
    and resizing is idempotent at the target size.
    """
    side = target.side
    if mask.shape == (side, side):
        return mask
    src_h, src_w = mask.shape
    rows = (np.arange(side) * 2 + 1) * src_h // (2 * side)
    cols = (np.arange(side) * 2 + 1) * src_w // (2 * side)
    return BinaryMask(grid=mask.grid[np.ix_(rows, cols)].copy())
