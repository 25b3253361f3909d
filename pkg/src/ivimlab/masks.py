"""Mask fusion (intersection / strict majority / union) and overlap metrics."""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError, UndefinedMetricError
from .grid import BinaryMask

# above this many voxel pairs the Hausdorff computation switches from the
# exact all-pairs scan to a KD-tree nearest-neighbour query
_BRUTE_FORCE_PAIR_LIMIT = 1 << 26


class FusionStrategy(Enum):
    OLP = "olp"  # overlap: voxel-wise AND, the conservative core volume
    AVG = "avg"  # strict majority vote (> 50% of the inputs)
    LC = "lc"    # largest contour: voxel-wise OR, the inclusive envelope

    @classmethod
    def parse(cls, name: str) -> "FusionStrategy":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown fusion strategy {name!r}; expected one of olp, avg, lc"
            ) from None


def _require_same_grid(masks) -> None:
    first = masks[0]
    for m in masks[1:]:
        if not m.same_grid(first):
            raise DimensionError("masks must share dims and spacing")


def fuse(masks: list[BinaryMask], strategy: FusionStrategy) -> BinaryMask:
    """Fuse per-timeframe segmentations into one representative mask.

    OLP keeps voxels present in every input, LC keeps voxels present in any,
    AVG keeps voxels present in strictly more than half (an even-count tie
    excludes the voxel).
    """
    if not masks:
        raise ValueError("fuse needs at least one mask")
    _require_same_grid(masks)
    stack = np.stack([m.data for m in masks], axis=0)
    if strategy is FusionStrategy.OLP:
        fused = stack.all(axis=0)
    elif strategy is FusionStrategy.LC:
        fused = stack.any(axis=0)
    else:
        fused = stack.sum(axis=0, dtype=np.int64) * 2 > len(masks)
    return BinaryMask(fused, masks[0].spacing)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice similarity 2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    _require_same_grid([a, b])
    na, nb = a.voxel_count, b.voxel_count
    if na + nb == 0:
        return 1.0
    inter = int((a.data & b.data).sum())
    return 2.0 * inter / (na + nb)


def _coords_mm(mask: BinaryMask) -> np.ndarray:
    idx = np.argwhere(mask.data).astype(np.float64)
    idx *= np.array(mask.spacing.as_tuple())
    return idx


def _directed_sq(from_pts: np.ndarray, to_pts: np.ndarray) -> float:
    """max over from_pts of the squared distance to the nearest to_pt."""
    n_pairs = from_pts.shape[0] * to_pts.shape[0]
    if n_pairs <= _BRUTE_FORCE_PAIR_LIMIT:
        worst = 0.0
        chunk = max(1, _BRUTE_FORCE_PAIR_LIMIT // max(1, to_pts.shape[0]) // 8)
        for start in range(0, from_pts.shape[0], chunk):
            block = from_pts[start : start + chunk]
            d2 = ((block[:, None, :] - to_pts[None, :, :]) ** 2).sum(axis=2)
            worst = max(worst, float(d2.min(axis=1).max()))
        return worst
    tree = cKDTree(to_pts)
    _, nearest = tree.query(from_pts, k=1)
    diff = from_pts - to_pts[nearest]
    return float((diff**2).sum(axis=1).max())


def hausdorff(a: BinaryMask, b: BinaryMask) -> float:
    """Symmetric max-Hausdorff distance between voxel centers, in millimetres."""
    _require_same_grid([a, b])
    if a.voxel_count == 0 or b.voxel_count == 0:
        raise UndefinedMetricError("Hausdorff distance is undefined for an empty mask")
    pa, pb = _coords_mm(a), _coords_mm(b)
    return float(np.sqrt(max(_directed_sq(pa, pb), _directed_sq(pb, pa))))
