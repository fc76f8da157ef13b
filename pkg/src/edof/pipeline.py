"""Frame-level reconstruction: patch streams, colour handling, pooling, metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sensor import RawBayerImage, RgbImage, demosaic_bilinear

log = logging.getLogger(__name__)

PATCH = 8
PSNR_CAP = 99.0

# BT.601 full range, rows Y, Cb, Cr
RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)
CHROMA_MID = 0.5


@dataclass
class PatchStream:
    patches: np.ndarray          # (N, 64) raw samples, row-major within the patch
    origins: np.ndarray          # (N, 2) top-left (row, col)
    stride: int
    frame_shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.patches)


def patch_origins(length: int, stride: int, size: int = PATCH) -> np.ndarray:
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return np.array(starts)


def patch_count(width: int, height: int, stride: int, size: int = PATCH) -> int:
    return len(patch_origins(width, stride, size)) * len(patch_origins(height, stride, size))


def _check_stride(stride: int):
    if stride <= 0 or stride % 2:
        raise ValueError(f"stride must be a positive even number, got {stride}")


def extract_patches(raw: RawBayerImage | np.ndarray, stride: int, size: int = PATCH) -> PatchStream:
    """Row-major 8x8 patches on an even lattice; the last row/column is clamped to the edge."""
    _check_stride(stride)
    frame = raw.samples if isinstance(raw, RawBayerImage) else np.asarray(raw)
    h, w = frame.shape[-2:]
    if h < size or w < size:
        raise ValueError(f"frame {w}x{h} is smaller than one {size}x{size} patch")
    rows, cols = patch_origins(h, stride, size), patch_origins(w, stride, size)
    windows = np.lib.stride_tricks.sliding_window_view(frame, (size, size), axis=(-2, -1))
    sel = windows[..., rows[:, None], cols[None, :], :, :]
    if frame.ndim == 2:
        patches = sel.reshape(-1, size * size)
    else:
        # (C, nr, nc, s, s) -> (nr*nc, C*s*s), channel-major
        patches = np.moveaxis(sel, 0, 2).reshape(len(rows) * len(cols), -1)
    origins = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1).reshape(-1, 2)
    return PatchStream(np.ascontiguousarray(patches, dtype=np.float64), origins, stride, (h, w))


def extract_rgb_patches(img: RgbImage, origins: np.ndarray, size: int = PATCH) -> np.ndarray:
    """Channel-major RGB patch vectors at the given origins."""
    r = origins[:, 0, None, None] + np.arange(size)[None, :, None]
    c = origins[:, 1, None, None] + np.arange(size)[None, None, :]
    out = img.planes[:, r, c]                 # (3, N, s, s)
    return np.moveaxis(out, 0, 1).reshape(len(origins), -1)


def pool(values: np.ndarray, origins: np.ndarray, frame_shape: tuple[int, int],
         size: tuple[int, int] = (PATCH, PATCH), col_scale: int = 1) -> np.ndarray:
    """Per-pixel mean of overlapping patches.  ``values`` is (N, C, ph, pw)."""
    n, ch, ph, pw = values.shape
    h, w = frame_shape
    acc = np.zeros((ch, h, w))
    cnt = np.zeros((h, w))
    for (r0, c0), v in zip(origins, values):
        c0 //= col_scale
        acc[:, r0:r0 + ph, c0:c0 + pw] += v
        cnt[r0:r0 + ph, c0:c0 + pw] += 1.0
    if np.any(cnt == 0):
        raise ValueError("patch stream does not cover every pixel")
    return acc / cnt


def assemble(patches: np.ndarray, origins: np.ndarray, frame_shape: tuple[int, int],
             size: int = PATCH, clip: bool = True) -> RgbImage:
    """Average-pool channel-major RGB patch vectors into a frame and clip to [0, 1]."""
    vals = np.asarray(patches, dtype=np.float64).reshape(len(patches), 3, size, size)
    out = pool(vals, np.asarray(origins), frame_shape, (size, size))
    return RgbImage(np.clip(out, 0.0, 1.0) if clip else out)


def ycbcr422_matrix(size: int = PATCH) -> np.ndarray:
    """Linear map from a channel-major RGB patch to [Y(64), Cb(32), Cr(32)], chroma zero-centred."""
    area = size * size
    half = size // 2
    m = np.zeros((area + 2 * size * half, 3 * area))
    pix = np.arange(area)
    for c in range(3):
        m[pix, c * area + pix] = RGB_TO_YCBCR[0, c]
    for k, chroma_row in ((1, area), (2, area + size * half)):
        for r in range(size):
            for j in range(half):
                row = chroma_row + r * half + j
                for dc in (0, 1):
                    p = r * size + 2 * j + dc
                    for c in range(3):
                        m[row, c * area + p] = 0.5 * RGB_TO_YCBCR[k, c]
    return m


def ycbcr422_inverse_matrix(size: int = PATCH) -> np.ndarray:
    """Chroma-replicating inverse of ``ycbcr422_matrix`` (exact on pairwise-constant chroma)."""
    area = size * size
    half = size // 2
    m = np.zeros((3 * area, area + 2 * size * half))
    for r in range(size):
        for col in range(size):
            p = r * size + col
            idx = (p, area + r * half + col // 2, area + size * half + r * half + col // 2)
            for c in range(3):
                for k in range(3):
                    m[c * area + p, idx[k]] += YCBCR_TO_RGB[c, k]
    return m


_FWD = ycbcr422_matrix()
_INV = ycbcr422_inverse_matrix()
_OFFSET = np.concatenate([np.zeros(PATCH * PATCH), np.full(PATCH * PATCH, CHROMA_MID)])


def rgb_to_ycbcr422(patch: np.ndarray, offset: float = CHROMA_MID) -> np.ndarray:
    """192-vector (or rows of them) to 128-vector 4:2:2 YCbCr; chroma centred on ``offset``."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-1] != 3 * PATCH * PATCH:
        raise ValueError("expected 192-element RGB patch vectors")
    return patch @ _FWD.T + _OFFSET * (offset / CHROMA_MID)


def ycbcr422_to_rgb(v: np.ndarray, offset: float = CHROMA_MID) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 2 * PATCH * PATCH:
        raise ValueError("expected 128-element YCbCr 4:2:2 vectors")
    return (v - _OFFSET * (offset / CHROMA_MID)) @ _INV.T


def psnr(a: RgbImage | np.ndarray, b: RgbImage | np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give the 99 dB cap."""
    x = a.planes if isinstance(a, RgbImage) else np.asarray(a, dtype=np.float64)
    y = b.planes if isinstance(b, RgbImage) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse))


@dataclass
class ReconstructionJob:
    """One frame through the patch network.

    ``network`` is a float ``NetworkParams`` or a quantised ``FixedNetwork``;
    ``raw_codes`` optionally carries the 16-bit sensor codes that fixed mode
    consumes (derived from ``raw`` when absent).
    """

    raw: RawBayerImage
    network: object
    stride: int = 2
    ground_truth: RgbImage | None = None
    raw_codes: np.ndarray | None = None
    batch: int = 4096

    def __post_init__(self):
        if self.stride not in (2, 4, 8):
            raise ValueError(f"stride must be 2, 4 or 8, got {self.stride}")


@dataclass
class ReconstructionReport:
    mode: str
    patches: int
    seconds: float
    psnr_db: float | None = None
    stride: int = 2

    def to_dict(self) -> dict:
        return {"mode": self.mode, "patches": self.patches, "psnr_db": self.psnr_db,
                "seconds": self.seconds, "stride": self.stride}


def _float_patches(net, patches: np.ndarray, batch: int) -> np.ndarray:
    from .network import forward
    out = np.empty((len(patches), 192))
    for s in range(0, len(patches), batch):
        y, _ = forward(net, patches[s:s + batch])
        out[s:s + batch] = y if net.output_space == "RGB192" else ycbcr422_to_rgb(y, offset=0.0)
    return out


def _fixed_frame(fnet, codes: np.ndarray, stream: PatchStream, batch: int) -> RgbImage:
    """Hardware colour path: per-patch gamma luma and 4:2:2 chroma are pooled, then decoded."""
    from .fixedpoint import CHROMA_BITS, CHROMA_ZERO, fx_forward, gamma_decode
    area, half = PATCH * PATCH, PATCH // 2
    ids = extract_patches(codes.astype(np.int64), stream.stride)
    luma = np.empty((len(ids), 1, PATCH, PATCH))
    chroma = np.empty((len(ids), 2, PATCH, half))
    for s in range(0, len(ids), batch):
        l16, c8 = fx_forward(fnet, ids.patches[s:s + batch].astype(np.int64))
        luma[s:s + batch, 0] = fnet.gamma_lut[l16].reshape(-1, PATCH, PATCH)
        chroma[s:s + batch] = c8.reshape(-1, 2, PATCH, half)
    h, w = stream.frame_shape
    y_lin = gamma_decode(pool(luma, ids.origins, (h, w))[0])
    cbcr = (pool(chroma, ids.origins, (h, w // 2), (PATCH, half), col_scale=2) - CHROMA_ZERO) / 2**CHROMA_BITS
    ycc = np.stack([y_lin, np.repeat(cbcr[0], 2, axis=1), np.repeat(cbcr[1], 2, axis=1)])
    rgb = np.einsum("ck,khw->chw", YCBCR_TO_RGB, ycc)
    return RgbImage(np.clip(rgb, 0.0, 1.0))


def reconstruct_image(job: ReconstructionJob) -> tuple[RgbImage, ReconstructionReport]:
    """Blind per-patch reconstruction of a raw frame, pooled into an RGB image.

    Float networks pool linear RGB.  Fixed networks follow the hardware path:
    16-bit codes in, gamma-encoded luma and offset chroma out, pooled in that
    domain and decoded to linear RGB at the end.
    """
    from .fixedpoint import FixedNetwork
    t0 = time.perf_counter()
    stream = extract_patches(job.raw, job.stride)
    if isinstance(job.network, FixedNetwork):
        mode = "fixed"
        if job.network.output_space != "YCBCR422_128":
            raise ValueError("fixed networks must emit YCBCR422_128")
        codes = job.raw_codes
        if codes is None:
            codes = np.clip(np.rint(job.raw.samples * 65535), 0, 65535).astype(np.uint16)
        image = _fixed_frame(job.network, np.asarray(codes), stream, job.batch)
    else:
        mode = "float"
        if job.network.in_dim != PATCH * PATCH:
            raise ValueError("network does not take 8x8 raw patches")
        image = assemble(_float_patches(job.network, stream.patches, job.batch), stream.origins, stream.frame_shape)
    seconds = time.perf_counter() - t0
    score = psnr(image, job.ground_truth) if job.ground_truth is not None else None
    log.info("%s reconstruction: %d patches in %.2fs", mode, len(stream), seconds)
    return image, ReconstructionReport(mode, len(stream), seconds, score, job.stride)
