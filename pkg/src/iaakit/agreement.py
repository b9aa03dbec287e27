"""Pairwise agreement metrics between binary masks and per-image aggregation.

Dice is the overlap metric that feeds the per-image IAA score (the mean of
all pairwise Dice values). Hausdorff distances are computed alongside for
reporting but never enter the IAA score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from .masks import BinaryMask


class GridMismatchError(ValueError):
    """Masks do not share the same pixel grid."""


class EmptyMaskError(ValueError):
    """Hausdorff distance is undefined when a mask has no foreground."""


@dataclass(frozen=True)
class AgreementRecord:
    """Agreement between one unordered mask pair of an image.

    ``hausdorff`` is None when either mask is empty (undefined distance).
    Pair indices are canonicalized so that mask_index_a < mask_index_b.
    """

    mask_index_a: int
    mask_index_b: int
    dice: float
    hausdorff: float | None

    def __post_init__(self) -> None:
        if self.mask_index_a >= self.mask_index_b:
            raise ValueError("pair indices must satisfy mask_index_a < mask_index_b")
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice out of range: {self.dice}")
        if self.hausdorff is not None and self.hausdorff < 0.0:
            raise ValueError(f"negative hausdorff: {self.hausdorff}")


@dataclass(frozen=True)
class IaaScore:
    """Per-image inter-annotator agreement: mean of the pairwise Dice values."""

    image_id: str
    value: float
    pair_count: int

    def __post_init__(self) -> None:
        if self.pair_count < 1:
            raise ValueError("pair_count must be >= 1")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"IAA score out of range: {self.value}")


def overlap_counts(a: BinaryMask, b: BinaryMask) -> tuple[int, int, int]:
    """(intersection, |A|, |B|) pixel counts for two same-grid masks."""
    if not a.same_grid(b):
        raise GridMismatchError(f"mask grids differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a.grid, b.grid).sum())
    return inter, a.foreground_count, b.foreground_count


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice similarity 2|A∩B| / (|A| + |B|); both masks empty counts as 1.0."""
    inter, na, nb = overlap_counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def _directed_hausdorff(points_from: np.ndarray, dist_to: np.ndarray) -> float:
    return float(dist_to[points_from[:, 0], points_from[:, 1]].max())


def hausdorff(a: BinaryMask, b: BinaryMask) -> float:
    """Symmetric Hausdorff distance in pixels (Euclidean).

    Uses the exact Euclidean distance transform of each mask's background,
    which makes the directed distances identical to an all-pairs search.
    Raises EmptyMaskError when either mask has no foreground; callers that
    tolerate empty masks record the pair as undefined instead.
    """
    if not a.same_grid(b):
        raise GridMismatchError(f"mask grids differ: {a.shape} vs {b.shape}")
    if a.is_empty or b.is_empty:
        raise EmptyMaskError("hausdorff undefined for an empty mask")
    dist_to_b = distance_transform_edt(~b.grid)
    dist_to_a = distance_transform_edt(~a.grid)
    return max(
        _directed_hausdorff(a.foreground_pixels(), dist_to_b),
        _directed_hausdorff(b.foreground_pixels(), dist_to_a),
    )


def pairwise_agreements(masks: Sequence[BinaryMask]) -> list[AgreementRecord]:
    """Agreement records for all K*(K-1)/2 unordered mask pairs.

    Records are ordered by canonical pair index (i, j), i < j, regardless of
    how the computation is scheduled. Pairs involving an empty mask get a
    defined Dice but an undefined (None) Hausdorff.
    """
    k = len(masks)
    if k < 2:
        raise ValueError(f"need at least 2 masks, got {k}")
    shape = masks[0].shape
    for idx, m in enumerate(masks):
        if m.shape != shape:
            raise GridMismatchError(
                f"mask {idx} grid {m.shape} differs from mask 0 grid {shape}"
            )
    # Distance transforms are reused across the pairs each mask participates in.
    transforms = [
        None if m.is_empty else distance_transform_edt(~m.grid) for m in masks
    ]
    points = [m.foreground_pixels() for m in masks]
    records = []
    for i in range(k):
        for j in range(i + 1, k):
            d = dice(masks[i], masks[j])
            if transforms[i] is None or transforms[j] is None:
                hd = None
            else:
                hd = max(
                    _directed_hausdorff(points[i], transforms[j]),
                    _directed_hausdorff(points[j], transforms[i]),
                )
            records.append(
                AgreementRecord(mask_index_a=i, mask_index_b=j, dice=d, hausdorff=hd)
            )
    return records


def aggregate_iaa(records: Sequence[AgreementRecord], image_id: str = "") -> IaaScore:
    """Mean of pairwise Dice values for one image's agreement records."""
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    value = float(np.mean([r.dice for r in records]))
    return IaaScore(image_id=image_id, value=value, pair_count=len(records))


def aggregate_hausdorff(records: Sequence[AgreementRecord]) -> tuple[float, int]:
    """Mean of the defined pairwise Hausdorff values plus the excluded count.

    Returns (mean, n_excluded). Raises when every pair is undefined.
    """
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    defined = [r.hausdorff for r in records if r.hausdorff is not None]
    excluded = len(records) - len(defined)
    if not defined:
        raise EmptyMaskError("all pairwise Hausdorff distances are undefined")
    return float(np.mean(defined)), excluded
