"""Defocus parameter and per-channel point-spread functions.

The out-of-focus error is modelled as a quadratic phase ``psi * rho**2`` across
a circular pupil (``rho`` normalised to the aperture radius).  An optional
radially symmetric phase mask adds a per-channel constant phase on annular
rings, which is what makes the three colour channels blur differently.

Image-plane coordinates are measured in units of ``lambda_ref * z_img / (2 R)``,
the period of the diffraction cut-off frequency.  A sensor pixel is
``pixel_pitch`` of those units wide and integrates ``oversample**2`` point
samples of the intensity PSF.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHANNELS = ("R", "G", "B")


@dataclass(frozen=True)
class OpticsSpec:
    """Geometry of the lens and the sampling used to render its PSFs.

    Lengths are in metres.  ``image_distance`` defaults to the thin-lens
    conjugate of ``nominal_depth``.
    """

    aperture_radius: float = 1.0e-3
    wavelengths: tuple[float, float, float] = (610e-9, 530e-9, 465e-9)
    nominal_depth: float = 2.0
    focal_length: float = 16e-3
    image_distance: float | None = None
    pupil_grid_size: int = 512
    kernel_size: int = 15
    pixel_pitch: float = 1.0
    oversample: int = 3
    reference_channel: int = 1

    def __post_init__(self):
        if self.aperture_radius <= 0:
            raise ValueError("aperture_radius must be positive")
        if len(self.wavelengths) != 3 or min(self.wavelengths) <= 0:
            raise ValueError("need three positive wavelengths")
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        if self.nominal_depth <= 0 or self.focal_length <= 0:
            raise ValueError("nominal_depth and focal_length must be positive")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if self.pupil_grid_size < 64:
            raise ValueError("pupil_grid_size must be >= 64")
        if self.oversample < 1 or self.oversample % 2 == 0:
            raise ValueError("oversample must be a positive odd integer")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")
        if self.reference_channel not in (0, 1, 2):
            raise ValueError("reference_channel must be 0, 1 or 2")

    @property
    def sensor_distance(self) -> float:
        """Sensor plane location z_img for an object at the nominal depth."""
        if self.image_distance is not None:
            return self.image_distance
        return 1.0 / (1.0 / self.focal_length - 1.0 / self.nominal_depth)

    @property
    def reference_wavelength(self) -> float:
        return self.wavelengths[self.reference_channel]

    def ideal_image_distance(self, object_depth: float) -> float:
        """Ideal image plane z_i of an object at ``object_depth`` (thin lens)."""
        return 1.0 / (1.0 / self.focal_length - 1.0 / object_depth)

    def cutoff_frequency(self, channel: int, object_depth: float | None = None) -> float:
        """Diffraction cut-off 2R / (lambda z_i) in cycles per metre."""
        z_i = self.sensor_distance if object_depth is None else self.ideal_image_distance(object_depth)
        return 2.0 * self.aperture_radius / (self.wavelengths[channel] * z_i)


@dataclass(frozen=True)
class Ring:
    inner: float
    outer: float
    phases: tuple[float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.inner < self.outer <= 1.0:
            raise ValueError(f"ring fractions must satisfy 0 <= inner < outer <= 1, got {self.inner}, {self.outer}")
        if len(self.phases) != 3:
            raise ValueError("a ring needs one phase per channel")
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))


@dataclass(frozen=True)
class PhaseMaskSpec:
    rings: tuple[Ring, ...] = ()
    enabled: bool = True

    def __post_init__(self):
        rings = tuple(r if isinstance(r, Ring) else Ring(*r) for r in self.rings)
        object.__setattr__(self, "rings", rings)
        for a, b in zip(rings, rings[1:]):
            if b.inner < a.outer:
                raise ValueError("rings must be sorted by inner radius and must not overlap")

    @classmethod
    def default(cls) -> "PhaseMaskSpec":
        """Single annulus at 0.7-1.0 of the pupil radius, phases (pi, pi/2, pi/4)."""
        return cls(rings=(Ring(0.7, 1.0, (math.pi, math.pi / 2, math.pi / 4)),), enabled=True)

    @classmethod
    def clear(cls) -> "PhaseMaskSpec":
        return cls(rings=(), enabled=False)

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "rings": [{"inner": r.inner, "outer": r.outer, "phases": list(r.phases)} for r in self.rings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseMaskSpec":
        rings = tuple(Ring(r["inner"], r["outer"], tuple(r["phases"])) for r in d.get("rings", ()))
        return cls(rings=rings, enabled=bool(d.get("enabled", True)))


@dataclass(frozen=True)
class BlurKernelSet:
    """Kernels indexed as ``kernels[channel, psi_index]``, each ``K x K``."""

    psi_grid: tuple[float, ...]
    kernels: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = np.array(self.kernels, dtype=np.float64)
        if k.ndim != 4 or k.shape[0] != 3 or k.shape[1] != len(self.psi_grid) or k.shape[2] != k.shape[3]:
            raise ValueError(f"kernel array has shape {k.shape}, expected (3, {len(self.psi_grid)}, K, K)")
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "psi_grid", tuple(float(p) for p in self.psi_grid))

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[-1]

    def __len__(self) -> int:
        return len(self.psi_grid)

    def index_of(self, psi: float) -> int:
        for i, p in enumerate(self.psi_grid):
            if abs(p - psi) < 1e-9:
                return i
        raise KeyError(f"psi={psi} is not on the grid {self.psi_grid}")

    def subset(self, indices: Sequence[int]) -> "BlurKernelSet":
        idx = list(indices)
        return BlurKernelSet(tuple(self.psi_grid[i] for i in idx), self.kernels[:, idx])

    @classmethod
    def identity(cls, psi_grid: Sequence[float] = (0.0,), kernel_size: int = 1) -> "BlurKernelSet":
        k = np.zeros((3, len(psi_grid), kernel_size, kernel_size))
        k[:, :, kernel_size // 2, kernel_size // 2] = 1.0
        return cls(tuple(psi_grid), k)


def defocus_psi(spec: OpticsSpec, object_depth: float, wavelength: float) -> float:
    """psi = pi R^2 / lambda * (1/z_o - 1/z_n); positive for objects nearer than focus."""
    if object_depth <= 0 or wavelength <= 0 or spec.nominal_depth <= 0:
        raise ValueError("depths and wavelength must be positive")
    return math.pi * spec.aperture_radius**2 / wavelength * (1.0 / object_depth - 1.0 / spec.nominal_depth)


def _pupil_coords(n: int) -> np.ndarray:
    # sample centres symmetric about the optical axis, in units of the pupil radius
    return (np.arange(n) - (n - 1) / 2.0) / (n / 2.0)


def _rho2(n: int) -> np.ndarray:
    x = _pupil_coords(n)
    return x[None, :] ** 2 + x[:, None] ** 2


def pupil_function(spec: OpticsSpec, mask: PhaseMaskSpec, channel: int) -> np.ndarray:
    """Complex pupil on a ``pupil_grid_size`` square grid spanning the aperture diameter."""
    if channel not in (0, 1, 2):
        raise ValueError("channel must be 0, 1 or 2")
    rho = np.sqrt(_rho2(spec.pupil_grid_size))
    inside = rho <= 1.0
    phase = np.zeros_like(rho)
    if mask.enabled:
        for ring in mask.rings:
            sel = (rho >= ring.inner) & ((rho < ring.outer) | (ring.outer >= 1.0))
            phase[sel] = ring.phases[channel]
    pupil = np.where(inside, np.exp(1j * phase), 0.0)
    return pupil.astype(np.complex128)


def psf_from_pupil(pupil: np.ndarray, psi: float, kernel_size: int,
                   pixel_pitch: float = 1.0, oversample: int = 3) -> np.ndarray:
    """Incoherent PSF |FT{P(rho) exp(i psi rho^2)}|^2 integrated over sensor pixels.

    The transform is evaluated as a matrix DFT restricted to the ``kernel_size``
    window of the (implicitly zero-padded) diffraction plane, then binned
    ``oversample x oversample`` into pixels and renormalised to unit sum.
    """
    if not np.isfinite(psi):
        raise ValueError("psi must be finite")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd")
    if oversample < 1 or oversample % 2 == 0:
        raise ValueError("oversample must be a positive odd integer")
    n = pupil.shape[0]
    if pupil.shape != (n, n):
        raise ValueError("pupil must be square")
    # the sampled pupil repeats its diffraction pattern every n units
    if kernel_size * pixel_pitch > n / 2:
        raise ValueError(f"kernel of {kernel_size} px at pitch {pixel_pitch} exceeds the computable field of a {n}-sample pupil")
    if pixel_pitch / oversample > 0.5:
        raise ValueError("fine sampling too coarse for the diffraction-limited PSF; raise oversample")

    field_pupil = pupil * np.exp(1j * psi * _rho2(n))
    x = _pupil_coords(n)
    m = kernel_size * oversample
    s = (np.arange(m) - (m - 1) / 2.0) * (pixel_pitch / oversample)
    w = np.exp(-1j * np.pi * np.outer(s, x))
    amplitude = w @ field_pupil @ w.T
    intensity = amplitude.real**2 + amplitude.imag**2
    kernel = intensity.reshape(kernel_size, oversample, kernel_size, oversample).sum(axis=(1, 3))
    return kernel / kernel.sum()


@functools.lru_cache(maxsize=32)
def _cached_kernel_set(spec: OpticsSpec, mask: PhaseMaskSpec, psi_grid: tuple[float, ...]) -> BlurKernelSet:
    out = np.empty((3, len(psi_grid), spec.kernel_size, spec.kernel_size))
    for c in range(3):
        pupil = pupil_function(spec, mask, c)
        scale = spec.reference_wavelength / spec.wavelengths[c]
        for j, psi in enumerate(psi_grid):
            out[c, j] = psf_from_pupil(pupil, psi * scale, spec.kernel_size,
                                       spec.pixel_pitch, spec.oversample)
    return BlurKernelSet(psi_grid, out)


def build_kernel_set(spec: OpticsSpec, mask: PhaseMaskSpec, psi_grid: Sequence[float]) -> BlurKernelSet:
    """One PSF per (channel, psi); psi is rescaled by lambda_ref / lambda_c per channel."""
    grid = tuple(float(p) for p in psi_grid)
    if not grid:
        raise ValueError("psi_grid must not be empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("psi_grid must be strictly ascending")
    return _cached_kernel_set(spec, mask, grid)


def radius_of_gyration(kernel: np.ndarray) -> float:
    k = kernel / kernel.sum()
    c = (np.arange(k.shape[0]) - (k.shape[0] - 1) / 2.0)
    r2 = c[None, :] ** 2 + c[:, None] ** 2
    return float(np.sqrt((k * r2).sum()))


def channel_separation(kernels: BlurKernelSet, index: int) -> float:
    """Mean pairwise L2 distance between the three channel kernels at one psi."""
    k = kernels.kernels[:, index]
    d = [np.linalg.norm(k[a] - k[b]) for a, b in ((0, 1), (0, 2), (1, 2))]
    return float(np.mean(d))
