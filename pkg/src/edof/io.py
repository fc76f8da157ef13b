"""On-disk formats: tagged binary containers, 16-bit PGM raw frames, 8-bit PNG.

All containers start with a four-byte magic and a little-endian u32 version.
Integers are little-endian u32 unless noted; matrices are row-major
little-endian (f64 for float data, i16 for fixed-point data).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .fixedpoint import FixedNetwork, FixedStage, ScalePlan
from .network import NetworkParams, Stage
from .optics import BlurKernelSet
from .sensor import PATTERNS, RawBayerImage, RgbImage
from .sparse import ConcatDictionary, Dictionary

VERSION = 1
RAW_MAX = 65535
TAG_BYTES = 16


class ContainerError(ValueError):
    """A file is missing, truncated, or does not match the expected schema."""


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError(f"{self.path}: truncated container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i32s(self, n: int) -> list[int]:
        return list(struct.unpack(f"<{n}i", self.take(4 * n)))

    def array(self, dtype: str, shape) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))

    def tag(self) -> str:
        return self.take(TAG_BYTES).rstrip(b"\0").decode("ascii")

    def done(self):
        if self.pos != len(self.data):
            raise ContainerError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _open(path, magic: bytes) -> _Reader:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    r = _Reader(p.read_bytes(), p)
    if r.take(4) != magic:
        raise ContainerError(f"{p}: not a {magic.decode()} container")
    version = r.u32()
    if version != VERSION:
        raise ContainerError(f"{p}: unsupported {magic.decode()} version {version}")
    return r


def _header(magic: bytes, *ints: int) -> bytes:
    return magic + struct.pack(f"<{1 + len(ints)}I", VERSION, *ints)


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _i16(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<i2").tobytes()


def _tag(s: str) -> bytes:
    raw = s.encode("ascii")
    if len(raw) > TAG_BYTES:
        raise ValueError(f"tag {s!r} longer than {TAG_BYTES} bytes")
    return raw.ljust(TAG_BYTES, b"\0")


def _write(path, blob: bytes) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(blob)
    return p


# kernel sets: EDKS | version | channels | psi count | kernel size | psi f64[q] | kernels f64[c,q,K,K]

def write_kernel_set(path, ks: BlurKernelSet) -> Path:
    c, q, k, _ = ks.kernels.shape
    return _write(path, _header(b"EDKS", c, q, k) + _f64(ks.psi_grid) + _f64(ks.kernels))


def read_kernel_set(path) -> BlurKernelSet:
    r = _open(path, b"EDKS")
    c, q, k = r.u32(), r.u32(), r.u32()
    psi = r.array("<f8", (q,))
    kernels = r.array("<f8", (c, q, k, k))
    r.done()
    return BlurKernelSet(tuple(psi), kernels)


# dictionaries: EDDC | version | n | k | q | pattern[4] | phase row, col | psi f64[q]
#               | D f64[n,k] | blocks f64[q,n,k] | B f64[n/3,n]

def write_dictionary(path, cd: ConcatDictionary) -> Path:
    n, k = cd.clear.atoms.shape
    blob = (_header(b"EDDC", n, k, cd.q) + cd.pattern.encode("ascii")
            + struct.pack("<2I", *cd.lattice_phase) + _f64(cd.psi_grid)
            + _f64(cd.clear.atoms) + _f64(np.stack(cd.blocks)) + _f64(cd.bayer))
    return _write(path, blob)


def read_dictionary(path) -> ConcatDictionary:
    r = _open(path, b"EDDC")
    n, k, q = r.u32(), r.u32(), r.u32()
    pattern = r.take(4).decode("ascii")
    if pattern not in PATTERNS:
        raise ContainerError(f"{path}: unknown CFA pattern {pattern!r}")
    phase = (r.u32(), r.u32())
    psi = r.array("<f8", (q,))
    atoms = r.array("<f8", (n, k))
    blocks = r.array("<f8", (q, n, k))
    bayer = r.array("<f8", (n // 3, n))
    r.done()
    return ConcatDictionary(Dictionary(atoms), tuple(psi), tuple(blocks), bayer, pattern, phase)


# float networks: EDNN | version | T | m | output space tag[16]
#                 | per stage: kind u8 | rows | cols | A f64 | theta f64[cols] | c f64[cols]

def _stage_header(kind: str, rows: int, cols: int) -> bytes:
    return kind.encode("ascii") + struct.pack("<2I", rows, cols)


def write_network(path, net: NetworkParams) -> Path:
    parts = [_header(b"EDNN", net.T, net.m), _tag(net.output_space)]
    for st in net.layers:
        parts += [_stage_header(st.kind, *st.A.shape), _f64(st.A), _f64(st.theta), _f64(st.c)]
    return _write(path, b"".join(parts))


def _read_stage_header(r: _Reader) -> tuple[str, int, int]:
    kind = r.take(1).decode("ascii")
    if kind not in "IMF":
        raise ContainerError(f"{r.path}: bad stage kind {kind!r}")
    return kind, r.u32(), r.u32()


def read_network(path) -> NetworkParams:
    r = _open(path, b"EDNN")
    T, m = r.u32(), r.u32()
    space = r.tag()
    layers = []
    for _ in range(T):
        kind, rows, cols = _read_stage_header(r)
        A = r.array("<f8", (rows, cols))
        layers.append(Stage(kind, A, r.array("<f8", (cols,)), r.array("<f8", (cols,))))
    r.done()
    try:
        net = NetworkParams(layers, space)
    except ValueError as exc:
        raise ContainerError(f"{path}: {exc}") from None
    if net.m != m:
        raise ContainerError(f"{path}: header says m={m}, stages give {net.m}")
    return net


# fixed networks: EDFX | version | T | m | output space tag[16] | exponent count | i32 exponents
#                 | per stage: kind u8 | rows | cols | A i16 | theta i16[cols] | c i16[cols] | LUT u8[65536]

def write_fixed_network(path, fnet: FixedNetwork) -> Path:
    exps = fnet.plan.exponents()
    parts = [_header(b"EDFX", fnet.T, fnet.m), _tag(fnet.output_space),
             struct.pack(f"<I{len(exps)}i", len(exps), *exps)]
    for st in fnet.layers:
        parts += [_stage_header(st.kind, *st.A.shape), _i16(st.A), _i16(st.theta), _i16(st.c)]
    parts.append(np.asarray(fnet.gamma_lut, dtype=np.uint8).tobytes())
    return _write(path, b"".join(parts))


def read_fixed_network(path) -> FixedNetwork:
    r = _open(path, b"EDFX")
    T, _m = r.u32(), r.u32()
    space = r.tag()
    exps = r.i32s(r.u32())
    if len(exps) != 1 + 3 * T:
        raise ContainerError(f"{path}: {len(exps)} exponents for {T} stages")
    layers = []
    for _ in range(T):
        kind, rows, cols = _read_stage_header(r)
        A = r.array("<i2", (rows, cols)).astype(np.int64)
        theta = r.array("<i2", (cols,)).astype(np.int64)
        c = r.array("<i2", (cols,)).astype(np.int64)
        layers.append(FixedStage(kind, A, theta, c))
    lut = r.array("u1", (65536,))
    r.done()
    return FixedNetwork(layers, ScalePlan.from_exponents(exps), space, lut)


def read_any_network(path) -> NetworkParams | FixedNetwork:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    with p.open("rb") as fh:
        magic = fh.read(4)
    if magic == b"EDNN":
        return read_network(p)
    if magic == b"EDFX":
        return read_fixed_network(p)
    raise ContainerError(f"{p}: neither an EDNN nor an EDFX container")


# images

def sidecar_path(pgm_path) -> Path:
    return Path(pgm_path).with_suffix(".json")


def raw_to_codes(raw: RawBayerImage) -> np.ndarray:
    return np.clip(np.rint(raw.samples * RAW_MAX), 0, RAW_MAX).astype(np.uint16)


def write_raw(path, raw: RawBayerImage) -> Path:
    """16-bit binary PGM (big-endian samples) plus a JSON sidecar naming the CFA pattern."""
    codes = raw_to_codes(raw)
    h, w = codes.shape
    p = _write(path, f"P5\n{w} {h}\n{RAW_MAX}\n".encode("ascii") + codes.astype(">u2").tobytes())
    side = {"pattern": raw.pattern, "width": w, "height": h, "maxval": RAW_MAX}
    sidecar_path(p).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return p


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_raw_codes(path) -> tuple[np.ndarray, str]:
    """16-bit sample codes and CFA pattern of a PGM raw frame."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    data = p.read_bytes()
    try:
        (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError):
        raise ContainerError(f"{p}: malformed PGM header") from None
    if magic != b"P5" or maxval != RAW_MAX:
        raise ContainerError(f"{p}: expected a 16-bit binary PGM")
    if len(data) - pos != 2 * w * h:
        raise ContainerError(f"{p}: pixel data has the wrong length")
    codes = np.frombuffer(data[pos:], dtype=">u2").reshape(h, w).astype(np.uint16)
    side = sidecar_path(p)
    if not side.is_file():
        raise FileNotFoundError(str(side))
    meta = json.loads(side.read_text())
    pattern = meta.get("pattern")
    if pattern not in PATTERNS:
        raise ContainerError(f"{side}: unknown CFA pattern {pattern!r}")
    return codes, pattern


def read_raw(path) -> RawBayerImage:
    codes, pattern = read_raw_codes(path)
    return RawBayerImage(codes.astype(np.float64) / RAW_MAX, pattern)


def to_uint8(img: RgbImage) -> np.ndarray:
    return np.rint(np.clip(img.to_hwc(), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: RgbImage) -> Path:
    """8-bit RGB PNG without colour-space tags; values are stored as linear."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(p, format="PNG")
    return p


def read_png(path) -> RgbImage:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    with Image.open(p) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return RgbImage.from_hwc(arr)
