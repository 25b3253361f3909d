"""Synthetic 4D DWI phantoms with known ground truth.

Signals are generated voxel-wise from the biexponential perfusion-diffusion
decay model, inside an ellipsoidal "lung" mask on an otherwise empty grid.
Truth parameter fields may be constant, linear gradients or two-region
splits, and optional Gaussian/Rician noise is reproducible per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, generate_binary_structure

from .grid import B_VALUE_TOL, BinaryMask, DwiSeries, IvimMaps, VoxelSpacing, Volume3D

_STRUCT6 = generate_binary_structure(3, 1)  # 6-connected neighbourhood

DEFAULT_SPACING = (7.20, 2.07, 2.07)  # mm, slice-major
DEFAULT_BVALUES = (0.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0, 600.0)  # s/mm^2


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class LinearGradient:
    lo: float
    hi: float
    axis: int = 0  # 0=z, 1=y, 2=x


@dataclass(frozen=True)
class TwoRegion:
    value_a: float  # lower half along axis
    value_b: float
    axis: int = 0


FieldSpec = Union[float, Constant, LinearGradient, TwoRegion]


def _evaluate_field(spec: FieldSpec, dims: tuple[int, int, int]) -> np.ndarray:
    if isinstance(spec, (int, float)):
        spec = Constant(float(spec))
    if isinstance(spec, Constant):
        return np.full(dims, spec.value)
    n = dims[spec.axis]
    if isinstance(spec, LinearGradient):
        ramp = np.linspace(spec.lo, spec.hi, n) if n > 1 else np.array([spec.lo])
    elif isinstance(spec, TwoRegion):
        ramp = np.where(np.arange(n) < n / 2, spec.value_a, spec.value_b)
    else:
        raise ValueError(f"unknown field spec {spec!r}")
    shape = [1, 1, 1]
    shape[spec.axis] = n
    return np.broadcast_to(ramp.reshape(shape), dims).copy()


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (8, 32, 32)
    spacing: tuple[float, float, float] = DEFAULT_SPACING
    bvalues: tuple[float, ...] = DEFAULT_BVALUES
    semi_axes_frac: tuple[float, float, float] = (0.4, 0.4, 0.4)
    s0: FieldSpec = 100.0
    f: FieldSpec = 0.3
    d_star: FieldSpec = 0.05
    d: FieldSpec = 0.002
    noise_model: str = "none"  # none | gaussian | rician
    snr: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class PhantomBundle:
    series: DwiSeries
    mask: BinaryMask
    truth: IvimMaps
    config: PhantomConfig = field(repr=False, default=None)  # type: ignore[assignment]


def ellipsoid_mask(dims: tuple[int, int, int], spacing: VoxelSpacing,
                   semi_axes_frac=(0.4, 0.4, 0.4)) -> BinaryMask:
    """Centered ellipsoid; semi-axes are fractions of each grid extent."""
    axes = [np.arange(n) - (n - 1) / 2.0 for n in dims]
    semi = [max(frac * n, 0.5) for frac, n in zip(semi_axes_frac, dims)]
    zz = (axes[0] / semi[0])[:, None, None] ** 2
    yy = (axes[1] / semi[1])[None, :, None] ** 2
    xx = (axes[2] / semi[2])[None, None, :] ** 2
    return BinaryMask(zz + yy + xx <= 1.0, spacing)


def make_phantom(cfg: PhantomConfig | None = None) -> PhantomBundle:
    """Forward-simulate a series from truth fields; deterministic per config."""
    cfg = cfg or PhantomConfig()
    spacing = VoxelSpacing(*cfg.spacing)
    mask = ellipsoid_mask(cfg.dims, spacing, cfg.semi_axes_frac)

    s0 = _evaluate_field(cfg.s0, cfg.dims)
    f = _evaluate_field(cfg.f, cfg.dims)
    d_star = _evaluate_field(cfg.d_star, cfg.dims)
    d = _evaluate_field(cfg.d, cfg.dims)

    m = mask.data
    if not (
        np.all((f[m] >= 0) & (f[m] <= 1))
        and np.all(d[m] > 0)
        and np.all(d_star[m] >= d[m])
        and np.all(s0[m] > 0)
    ):
        raise ValueError("truth fields violate 0<=f<=1, d>0, d_star>=d, s0>0 inside the mask")

    frames = []
    for b in cfg.bvalues:
        signal = np.zeros(cfg.dims)
        signal[m] = s0[m] * (f[m] * np.exp(-b * d_star[m])
                             + (1.0 - f[m]) * np.exp(-b * d[m]))
        frames.append(Volume3D(signal, spacing))
    series = DwiSeries(tuple(frames), np.asarray(cfg.bvalues, dtype=np.float64))

    if cfg.noise_model != "none":
        series = add_noise(series, mask, cfg.noise_model, cfg.snr, cfg.seed)

    def masked(vals: np.ndarray) -> Volume3D:
        out = np.full(cfg.dims, np.nan)
        out[m] = vals[m]
        return Volume3D(out, spacing)

    truth = IvimMaps(
        s0=masked(s0), f=masked(f), d_star=masked(d_star), adc=masked(d),
        residual=masked(np.zeros(cfg.dims)), mask=mask,
    )
    return PhantomBundle(series=series, mask=mask, truth=truth, config=cfg)


def add_noise(series: DwiSeries, mask: BinaryMask, model: str, snr: float,
              seed: int = 0) -> DwiSeries:
    """Add reproducible noise with sd = (mean masked b=0 intensity) / snr.

    Gaussian noise is additive; Rician noise is the magnitude of the signal
    plus a complex Gaussian perturbation, matching magnitude MR images.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    if model not in ("gaussian", "rician"):
        raise ValueError(f"unknown noise model {model!r}")
    stacked = series.stacked()
    b0 = np.abs(series.bvalues) < B_VALUE_TOL
    sd = float(stacked[b0][:, mask.data].mean()) / snr
    rng = np.random.default_rng(seed)
    if model == "gaussian":
        noisy = stacked + rng.normal(0.0, sd, stacked.shape)
    else:
        n1 = rng.normal(0.0, sd, stacked.shape)
        n2 = rng.normal(0.0, sd, stacked.shape)
        noisy = np.sqrt((stacked + n1) ** 2 + n2**2)
    frames = tuple(Volume3D(noisy[t], series.spacing) for t in range(series.n_frames))
    return DwiSeries(frames, series.bvalues)


def dilate(mask: BinaryMask, radius: int = 1) -> BinaryMask:
    """6-connected morphological dilation by ``radius`` voxels."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return BinaryMask(binary_dilation(mask.data, _STRUCT6, iterations=radius),
                      mask.spacing)


def erode(mask: BinaryMask, radius: int = 1) -> BinaryMask:
    """6-connected morphological erosion; may produce an empty mask."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return BinaryMask(binary_erosion(mask.data, _STRUCT6, iterations=radius,
                                     border_value=0), mask.spacing)


def boundary_band(mask: BinaryMask) -> np.ndarray:
    """Voxels whose 6-neighbourhood mixes mask and background (either side)."""
    m = mask.data
    inner = m & ~binary_erosion(m, _STRUCT6, border_value=0)
    outer = ~m & binary_dilation(m, _STRUCT6)
    return inner | outer


def boundary_flip(mask: BinaryMask, p: float, seed: int = 0) -> BinaryMask:
    """Toggle each boundary-band voxel independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    band = boundary_band(mask)
    rng = np.random.default_rng(seed)
    toggle = band & (rng.random(mask.dims) < p)
    return BinaryMask(mask.data ^ toggle, mask.spacing)


def perturb_mask(mask: BinaryMask, op: str, *, radius: int = 1, p: float = 0.0,
                 seed: int = 0) -> BinaryMask:
    """Dispatcher over the mask perturbations: dilate | erode | boundary_flip."""
    if op == "dilate":
        return dilate(mask, radius)
    if op == "erode":
        return erode(mask, radius)
    if op == "boundary_flip":
        return boundary_flip(mask, p, seed)
    raise ValueError(f"unknown perturbation {op!r}")
