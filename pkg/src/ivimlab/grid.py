"""Shared spatial data model: voxel spacing, 3D volumes, masks and 4D series.

Axis order is (z, y, x) everywhere, with spacing stated in the same order so
slice loops stay outermost. All containers freeze their arrays after
construction and are safe to share across concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

# b-values closer than this (s/mm^2) are treated as the same shell
B_VALUE_TOL = 1e-9

# unfitted/outside-mask voxels carry quiet NaN in every parameter map
SENTINEL = float("nan")


@dataclass(frozen=True)
class VoxelSpacing:
    """Millimetres per voxel along (z, y, x)."""

    dz: float
    dy: float
    dx: float

    def __post_init__(self):
        for name in ("dz", "dy", "dx"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"spacing {name} must be a positive real, got {v!r}")

    @property
    def voxel_volume_mm3(self) -> float:
        return self.dz * self.dy * self.dx

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dz, self.dy, self.dx)

    def close_to(self, other: "VoxelSpacing", rtol: float = 1e-5) -> bool:
        return bool(np.allclose(self.as_tuple(), other.as_tuple(), rtol=rtol, atol=0.0))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_dims(shape: tuple[int, ...]) -> None:
    if len(shape) != 3 or any(int(n) <= 0 for n in shape):
        raise DimensionError(f"dims must be three positive integers, got {shape}")


@dataclass(frozen=True)
class Volume3D:
    """A scalar field on a regular (z, y, x) grid."""

    data: np.ndarray
    spacing: VoxelSpacing

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        _check_dims(arr.shape)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def at(self, z: int, y: int, x: int) -> float:
        """Element access; raises IndexError outside dims (no negative wrap)."""
        nz, ny, nx = self.dims
        if not (0 <= z < nz and 0 <= y < ny and 0 <= x < nx):
            raise IndexError(f"index {(z, y, x)} outside dims {self.dims}")
        return float(self.data[z, y, x])

    def same_grid(self, other) -> bool:
        return self.dims == other.dims and self.spacing.close_to(other.spacing)


@dataclass(frozen=True)
class BinaryMask:
    """A boolean lattice sharing a grid with the volumes it selects from."""

    data: np.ndarray
    spacing: VoxelSpacing

    def __post_init__(self):
        arr = np.asarray(self.data)
        _check_dims(arr.shape)
        object.__setattr__(self, "data", _freeze(arr.astype(bool)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())

    @property
    def volume_ml(self) -> float:
        return mask_volume_ml(self)

    def same_grid(self, other) -> bool:
        return self.dims == other.dims and self.spacing.close_to(other.spacing)


@dataclass(frozen=True)
class DwiSeries:
    """An ordered stack of 3D frames with one diffusion weighting per frame."""

    frames: tuple[Volume3D, ...]
    bvalues: np.ndarray

    def __post_init__(self):
        frames = tuple(self.frames)
        bvals = np.asarray(self.bvalues, dtype=np.float64).ravel()
        if len(frames) == 0:
            raise ValueError("a series needs at least one frame")
        if len(frames) != bvals.size:
            raise DimensionError(
                f"{len(frames)} frames but {bvals.size} b-values"
            )
        if np.any(~np.isfinite(bvals)) or np.any(bvals < 0):
            raise ValueError("b-values must be finite and non-negative")
        if not np.any(np.abs(bvals) < B_VALUE_TOL):
            raise ValueError("a series must contain at least one b=0 frame")
        first = frames[0]
        for fr in frames[1:]:
            if not fr.same_grid(first):
                raise DimensionError("all frames must share dims and spacing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "bvalues", _freeze(bvals))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.frames[0].dims

    @property
    def spacing(self) -> VoxelSpacing:
        return self.frames[0].spacing

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def stacked(self) -> np.ndarray:
        """All frames as one (n_frames, nz, ny, nx) array (a copy)."""
        return np.stack([fr.data for fr in self.frames], axis=0)

    def same_grid(self, other) -> bool:
        return self.dims == other.dims and self.spacing.close_to(other.spacing)


@dataclass(frozen=True)
class IvimMaps:
    """Per-voxel fitted quantities; NaN marks unfitted voxels."""

    s0: Volume3D
    f: Volume3D
    d_star: Volume3D
    adc: Volume3D
    residual: Volume3D
    mask: BinaryMask  # voxels that actually carry a fit
    _skip_checks: bool = field(default=False, repr=False)

    def __post_init__(self):
        vols = (self.s0, self.f, self.d_star, self.adc, self.residual)
        for v in vols[1:]:
            if not v.same_grid(vols[0]):
                raise DimensionError("all parameter maps must share one grid")
        if not self.mask.same_grid(vols[0]):
            raise DimensionError("mask grid differs from the parameter maps")
        if self._skip_checks:
            return
        m = self.mask.data
        if not m.any():
            return
        f = self.f.data[m]
        adc = self.adc.data[m]
        ds = self.d_star.data[m]
        s0 = self.s0.data[m]
        res = self.residual.data[m]
        ok = (
            np.all((f >= 0) & (f <= 1))
            and np.all(adc > 0)
            and np.all(ds >= adc)
            and np.all(s0 > 0)
            and np.all(res >= 0)
        )
        if not ok:
            raise ValueError("fitted values violate map invariants inside the mask")


def mask_volume_ml(mask: BinaryMask) -> float:
    """Mask volume in millilitres (voxel count times voxel volume / 1000)."""
    return mask.voxel_count * mask.spacing.voxel_volume_mm3 / 1000.0


def average_by_bvalue(series: DwiSeries) -> DwiSeries:
    """Collapse frames sharing a b-value to their voxel-wise mean.

    Frames acquired along several diffusion directions (or repeated b=0
    baselines) are averaged into a single trace-weighted frame per shell;
    the output has one frame per distinct b-value, sorted ascending.
    """
    bvals = series.bvalues
    order = np.argsort(bvals, kind="stable")
    groups: list[tuple[float, list[int]]] = []
    for idx in order:
        b = float(bvals[idx])
        if groups and abs(b - groups[-1][0]) < B_VALUE_TOL:
            groups[-1][1].append(int(idx))
        else:
            groups.append((b, [int(idx)]))

    frames = []
    out_b = []
    for b, idxs in groups:
        if len(idxs) == 1:
            mean = series.frames[idxs[0]].data
        else:
            mean = np.mean([series.frames[i].data for i in idxs], axis=0)
        frames.append(Volume3D(mean, series.spacing))
        out_b.append(b)
    return DwiSeries(tuple(frames), np.array(out_b))
