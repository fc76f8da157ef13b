"""Desk-scale image corpus and simulated patch datasets.

The corpus is built from natural colour photographs that ship with
scikit-image and scikit-learn, so no download is needed.  Training and test
images are disjoint scenes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .optics import BlurKernelSet
from .sensor import RgbImage, blur_image, simulate_capture

TRAIN_IMAGES = ("astronaut", "coffee", "rocket", "retina", "immunohistochemistry")
TEST_IMAGES = ("chelsea", "china", "flower", "hubble_deep_field", "motorcycle_right")
TEST_CROP = 256


def _load(name: str) -> np.ndarray:
    if name in ("china", "flower"):
        from sklearn.datasets import load_sample_image
        return load_sample_image(f"{name}.jpg")
    from skimage import data
    if name == "motorcycle_right":
        return data.stereo_motorcycle()[1]
    return getattr(data, name)()


def load_image(name: str, crop: int | None = None) -> RgbImage:
    """Bundled image as linear [0,1] RGB, optionally centre-cropped to ``crop`` (even)."""
    arr = np.asarray(_load(name))[..., :3].astype(np.float64) / 255.0
    h, w = arr.shape[:2]
    if name == "retina":
        arr = arr[h // 4:h // 4 + 640, w // 4:w // 4 + 640]
        h, w = arr.shape[:2]
    if crop is not None:
        r0, c0 = (h - crop) // 2 // 2 * 2, (w - crop) // 2 // 2 * 2
        arr = arr[r0:r0 + crop, c0:c0 + crop]
    h, w = arr.shape[:2]
    return RgbImage.from_hwc(arr[: h // 2 * 2, : w // 2 * 2])


def training_images() -> list[RgbImage]:
    return [load_image(n) for n in TRAIN_IMAGES]


def held_out_images(crop: int = TEST_CROP) -> dict[str, RgbImage]:
    return {n: load_image(n, crop) for n in TEST_IMAGES}


def write_corpus(directory: str | Path, names: Iterable[str] = TEST_IMAGES, crop: int | None = TEST_CROP) -> list[Path]:
    from .io import write_png
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for n in names:
        p = out / f"{n}.png"
        write_png(p, load_image(n, crop))
        paths.append(p)
    return paths


def patch_dataset(images: Sequence[RgbImage], kernels: BlurKernelSet, psi_indices: Sequence[int],
                  n_patches: int, pattern: str = "RGGB", noise_sigma: float = 0.0, seed: int = 0,
                  min_std: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample (raw patch, sharp RGB patch, psi index) triples from simulated captures.

    Each image is captured once per psi index in ``psi_indices`` (full-frame
    blur, mosaic, noise); patches are drawn at random even origins, with the
    psi index drawn uniformly per patch.  ``min_std`` rejects flat patches.
    """
    rng = np.random.default_rng(seed)
    psi_indices = list(psi_indices)
    raws = {}
    for i, img in enumerate(images):
        for j in psi_indices:
            raws[i, j] = simulate_capture(img, kernels, j, pattern, noise_sigma,
                                          seed=int(rng.integers(2**31))).samples
    ys = np.empty((n_patches, 64))
    xs = np.empty((n_patches, 192))
    ps = np.empty(n_patches, dtype=np.int64)
    filled = 0
    while filled < n_patches:
        i = int(rng.integers(len(images)))
        j = psi_indices[int(rng.integers(len(psi_indices)))]
        img = images[i]
        r = 2 * int(rng.integers((img.height - 8) // 2 + 1))
        c = 2 * int(rng.integers((img.width - 8) // 2 + 1))
        x = img.planes[:, r:r + 8, c:c + 8]
        if min_std > 0 and x.std() < min_std:
            continue
        ys[filled] = raws[i, j][r:r + 8, c:c + 8].ravel()
        xs[filled] = x.ravel()
        ps[filled] = j
        filled += 1
    return ys, xs, ps


def depth_regions(height: int, width: int, n_regions: int = 4) -> np.ndarray:
    """Label map splitting the frame into 2x2 quadrants (or vertical strips)."""
    labels = np.zeros((height, width), dtype=np.int64)
    if n_regions == 4:
        labels[: height // 2, width // 2:] = 1
        labels[height // 2:, : width // 2] = 2
        labels[height // 2:, width // 2:] = 3
    else:
        edges = np.linspace(0, width, n_regions + 1).astype(int)
        for k in range(n_regions):
            labels[:, edges[k]:edges[k + 1]] = k
    return labels


def blurred_reference(img: RgbImage, kernels: BlurKernelSet, depth) -> RgbImage:
    return blur_image(img, kernels, depth)
