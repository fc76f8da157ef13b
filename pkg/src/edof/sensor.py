"""Forward imaging model: per-channel blur, Bayer sampling and sensor noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .optics import BlurKernelSet

PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
_CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}

# symmetric extension (d c b a | a b c d), matching MATLAB's 'symmetric'
BOUNDARY_MODE = "reflect"


def cfa_channels(pattern: str) -> np.ndarray:
    """2x2 array of channel indices for a Bayer pattern, e.g. RGGB -> [[0,1],[1,2]]."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown CFA pattern {pattern!r}; expected one of {PATTERNS}")
    return np.array([_CHANNEL_INDEX[ch] for ch in pattern]).reshape(2, 2)


def cfa_channel_map(pattern: str, height: int, width: int, origin: tuple[int, int] = (0, 0)) -> np.ndarray:
    cell = cfa_channels(pattern)
    rows = (np.arange(height) + origin[0]) % 2
    cols = (np.arange(width) + origin[1]) % 2
    return cell[rows[:, None], cols[None, :]]


@dataclass
class RgbImage:
    """Planar linear-light colour image, ``planes`` has shape (3, H, W)."""

    planes: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != 3:
            raise ValueError(f"RGB planes must have shape (3, H, W), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("RGB image contains non-finite samples")
        self.planes = p

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @classmethod
    def from_hwc(cls, arr: np.ndarray) -> "RgbImage":
        return cls(np.moveaxis(np.asarray(arr, dtype=np.float64), -1, 0))

    def to_hwc(self) -> np.ndarray:
        return np.moveaxis(self.planes, 0, -1)

    def clipped(self) -> "RgbImage":
        return RgbImage(np.clip(self.planes, 0.0, 1.0))


@dataclass
class RawBayerImage:
    samples: np.ndarray
    pattern: str = "RGGB"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError("raw samples must be a 2-D array")
        if s.shape[0] % 2 or s.shape[1] % 2:
            raise ValueError(f"raw frame dimensions must be even, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("raw image contains non-finite samples")
        cfa_channels(self.pattern)
        self.samples = s

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


def _depth_indices(depth, shape: tuple[int, int], n_psi: int) -> np.ndarray:
    d = np.asarray(depth)
    if d.ndim == 0:
        d = np.full(shape, int(d))
    if d.shape != shape:
        raise ValueError(f"depth map shape {d.shape} does not match image {shape}")
    if not np.issubdtype(d.dtype, np.integer):
        if not np.all(d == np.round(d)):
            raise ValueError("depth map must hold integer psi-grid indices")
        d = d.astype(np.int64)
    if d.min() < 0 or d.max() >= n_psi:
        raise ValueError(f"depth index out of range for a grid of {n_psi} values")
    return d


def convolve_plane(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return ndimage.convolve(plane, kernel, mode=BOUNDARY_MODE)


def blur_image(img: RgbImage, kernels: BlurKernelSet, depth) -> RgbImage:
    """Convolve each channel with the kernel chosen per pixel by ``depth``.

    ``depth`` is a scalar psi-grid index or an (H, W) map of indices.  Regions are
    not feathered: each output pixel takes the value of the full-frame
    convolution with its own kernel.
    """
    if kernels.kernels.shape[0] != 3:
        raise ValueError("kernel set must have three channels")
    d = _depth_indices(depth, (img.height, img.width), len(kernels))
    out = np.zeros_like(img.planes)
    for j in np.unique(d):
        sel = d == j
        for c in range(3):
            blurred = convolve_plane(img.planes[c], kernels.kernels[c, j])
            out[c][sel] = blurred[sel]
    return RgbImage(out)


def mosaic(img: RgbImage, pattern: str = "RGGB") -> RawBayerImage:
    if img.height % 2 or img.width % 2:
        raise ValueError("mosaic needs even image dimensions")
    cmap = cfa_channel_map(pattern, img.height, img.width)
    raw = np.take_along_axis(img.planes, cmap[None], axis=0)[0]
    return RawBayerImage(raw, pattern)


def add_noise(raw: RawBayerImage, sigma: float, seed: int) -> RawBayerImage:
    """Add i.i.d. Gaussian noise of standard deviation ``sigma`` and clip to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return RawBayerImage(raw.samples.copy(), raw.pattern)
    rng = np.random.default_rng(seed)
    noisy = raw.samples + rng.normal(0.0, sigma, size=raw.samples.shape)
    return RawBayerImage(np.clip(noisy, 0.0, 1.0), raw.pattern)


_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0
_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0


def demosaic_bilinear(raw: RawBayerImage) -> RgbImage:
    """Bilinear demosaicing as normalised convolution of each sampled channel."""
    cmap = cfa_channel_map(raw.pattern, raw.height, raw.width)
    planes = np.empty((3, raw.height, raw.width))
    for c in range(3):
        m = (cmap == c).astype(np.float64)
        k = _K_G if c == 1 else _K_RB
        num = ndimage.convolve(raw.samples * m, k, mode="mirror")
        den = ndimage.convolve(m, k, mode="mirror")
        planes[c] = num / den
    return RgbImage(planes)


def simulate_capture(img: RgbImage, kernels: BlurKernelSet, depth, pattern: str = "RGGB",
                     noise_sigma: float = 0.0, seed: int = 0) -> RawBayerImage:
    """Blur, mosaic and add noise in one call."""
    return add_noise(mosaic(blur_image(img, kernels, depth), pattern), noise_sigma, seed)
