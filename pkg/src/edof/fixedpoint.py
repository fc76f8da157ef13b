"""Bit-exact emulation of the 16-bit calculator pipeline and its cycle budget.

Data are two's-complement 16-bit words with a per-boundary number of
fractional bits.  Matrix products accumulate exactly in int64 (the plan keeps
them inside a 48-bit budget) and are rescaled once, with round-half-to-even,
then saturated back to 16 bits.  No floating point touches the data path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkParams, forward

WORD_BITS = 16
ACC_BITS = 48
QMAX = 2 ** (WORD_BITS - 1) - 1
QMIN = -(2 ** (WORD_BITS - 1))
DEFAULT_FRAC = 14
MAX_FRAC = WORD_BITS - 1
MAX_MACC_TERMS = 1536
GAMMA = 2.2
LUMA_BITS = 16
CHROMA_BITS = 8
CHROMA_ZERO = 1 << (CHROMA_BITS - 1)


class FixedPointError(ValueError):
    pass


def round_shift(acc, shift: int):
    """acc / 2**shift rounded half-to-even (shift >= 0), or acc * 2**-shift."""
    if isinstance(acc, (int, np.integer)) and not isinstance(acc, np.ndarray):
        acc = int(acc)
        if shift <= 0:
            return acc << -shift
        q = acc >> shift
        r = acc - (q << shift)
        half = 1 << (shift - 1)
        if r > half or (r == half and q & 1):
            q += 1
        return q
    acc = np.asarray(acc, dtype=np.int64)
    if shift <= 0:
        return acc << np.int64(-shift)
    q = acc >> np.int64(shift)
    r = acc - (q << np.int64(shift))
    half = np.int64(1) << np.int64(shift - 1)
    return q + ((r > half) | ((r == half) & ((q & 1) == 1)))


def saturate(v, bits: int = WORD_BITS):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if isinstance(v, (int, np.integer)) and not isinstance(v, np.ndarray):
        return max(lo, min(hi, int(v)))
    return np.clip(v, lo, hi)


def frac_bits_for(max_abs: float) -> int:
    """Largest frac count keeping ``max_abs`` within half the 16-bit range."""
    if not np.isfinite(max_abs):
        raise FixedPointError("non-finite magnitude")
    if max_abs == 0:
        return DEFAULT_FRAC
    f = math.floor((WORD_BITS - 2) - math.log2(max_abs))
    if f < 0:
        raise FixedPointError(f"magnitude {max_abs:.4g} does not fit a 16-bit word")
    return min(f, MAX_FRAC)


def quantize(x, frac: int) -> np.ndarray:
    """Round-half-to-even onto the Q(15-frac).frac grid; out-of-range values are an error."""
    q = np.rint(np.asarray(x, dtype=np.float64) * 2.0**frac)
    if q.size and (q.max() > QMAX or q.min() < QMIN):
        raise FixedPointError(f"value {np.abs(x).max():.4g} exceeds the range of frac={frac}")
    return q.astype(np.int64)


def dequantize(q, frac: int) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / 2.0**frac


@dataclass
class StageScale:
    weight_frac: int
    mac_frac: int
    out_frac: int


@dataclass
class ScalePlan:
    input_frac: int
    stages: list[StageScale]

    def in_frac(self, i: int) -> int:
        return self.input_frac if i == 0 else self.stages[i - 1].out_frac

    def exponents(self) -> list[int]:
        flat = [self.input_frac]
        for s in self.stages:
            flat += [s.weight_frac, s.mac_frac, s.out_frac]
        return flat

    @classmethod
    def from_exponents(cls, flat) -> "ScalePlan":
        flat = [int(v) for v in flat]
        return cls(flat[0], [StageScale(*flat[i:i + 3]) for i in range(1, len(flat), 3)])


def calibrate_scales(net: NetworkParams, calib_patches: np.ndarray) -> ScalePlan:
    """Power-of-two scales from the peak magnitudes seen on calibration patches.

    Each boundary gets the largest frac count whose range is at least twice the
    observed peak.  An all-zero calibration set yields the default plan
    (14 fractional bits everywhere).
    """
    ys = np.atleast_2d(np.asarray(calib_patches, dtype=np.float64))
    if len(ys) < 100:
        raise ValueError("calibration needs at least 100 patches")
    if not np.any(ys):
        return ScalePlan(DEFAULT_FRAC, [StageScale(DEFAULT_FRAC, DEFAULT_FRAC, DEFAULT_FRAC) for _ in net.layers])
    _, inter = forward(net, ys)
    outs = inter.inputs[1:] + [inter.output]
    in_peak = max(np.abs(ys).max(), np.abs(net.layers[0].theta).max())
    stages = []
    for i, st in enumerate(net.layers):
        try:
            wf = frac_bits_for(float(np.abs(st.A).max()))
            mf = frac_bits_for(float(max(np.abs(inter.mac_inputs[i]).max(), np.abs(st.c).max())))
            peak_out = float(np.abs(outs[i]).max())
            if i + 1 < len(net.layers):
                peak_out = max(peak_out, float(np.abs(net.layers[i + 1].theta).max()))
            of = frac_bits_for(peak_out)
        except FixedPointError as exc:
            raise FixedPointError(f"stage {i} ({st.kind}): {exc}") from None
        stages.append(StageScale(wf, mf, of))
    return ScalePlan(frac_bits_for(float(in_peak)), stages)


def gamma_lut() -> np.ndarray:
    """16-bit linear luma to 8-bit display code: round(255 (x / 65535)^(1/2.2))."""
    x = np.arange(2**LUMA_BITS, dtype=np.float64) / (2**LUMA_BITS - 1)
    return np.rint(255.0 * x ** (1.0 / GAMMA)).astype(np.uint8)


def gamma_decode(code8) -> np.ndarray:
    return (np.asarray(code8, dtype=np.float64) / 255.0) ** GAMMA


@dataclass
class FixedStage:
    kind: str
    A: np.ndarray      # int64 holding 16-bit values
    theta: np.ndarray
    c: np.ndarray


@dataclass
class FixedNetwork:
    layers: list[FixedStage]
    plan: ScalePlan
    output_space: str = "YCBCR422_128"
    gamma_lut: np.ndarray = field(default_factory=gamma_lut, repr=False)

    @property
    def T(self) -> int:
        return len(self.layers)

    @property
    def m(self) -> int:
        return self.layers[0].A.shape[0]


def _check_accumulator(A: np.ndarray, extra_shift: int):
    worst = int(np.abs(A).sum(axis=1).max()) * (QMAX + 1) + ((QMAX + 1) << max(extra_shift, 0))
    if worst >= 2 ** (ACC_BITS - 1):
        raise FixedPointError("plan allows the 48-bit accumulator to overflow")


def quantize_network(net: NetworkParams, plan: ScalePlan) -> FixedNetwork:
    if len(plan.stages) != net.T:
        raise ValueError("scale plan does not match the network depth")
    layers = []
    for i, (st, sc) in enumerate(zip(net.layers, plan.stages)):
        if st.in_dim > MAX_MACC_TERMS:
            raise FixedPointError(f"stage {i} has {st.in_dim} inputs, the MACC supports {MAX_MACC_TERMS}")
        try:
            A = quantize(st.A, sc.weight_frac)
            theta = quantize(st.theta, plan.in_frac(i))
            c = quantize(st.c, sc.mac_frac)
        except FixedPointError as exc:
            raise FixedPointError(f"stage {i} ({st.kind}): {exc}; regenerate the plan") from None
        _check_accumulator(A, sc.weight_frac + sc.mac_frac - plan.in_frac(i))
        layers.append(FixedStage(st.kind, A, theta, c))
    return FixedNetwork(layers, plan, net.output_space)


def fx_macc(weights_row, inputs, shift: int, bias: int = 0) -> int:
    """One MACC output: exact sum of products plus ``bias``, one rescale, saturate."""
    w = [int(v) for v in weights_row]
    x = [int(v) for v in inputs]
    if len(w) != len(x) or len(w) > MAX_MACC_TERMS:
        raise ValueError("MACC operands must have equal length <= 1536")
    acc = sum(a * b for a, b in zip(w, x)) + int(bias)
    if not -(2 ** (ACC_BITS - 1)) <= acc < 2 ** (ACC_BITS - 1):
        raise FixedPointError("48-bit accumulator overflow")
    return saturate(round_shift(acc, shift))


def fx_matvec(A: np.ndarray, X: np.ndarray, shift: int, bias: np.ndarray | None = None) -> np.ndarray:
    """Rows of ``X`` times ``A^T`` with ``fx_macc`` semantics (exact, vectorised)."""
    acc = np.asarray(X, dtype=np.int64) @ np.asarray(A, dtype=np.int64).T
    if bias is not None:
        acc = acc + bias
    return saturate(round_shift(acc, shift))


def _align(v: np.ndarray, frm: int, to: int) -> np.ndarray:
    return round_shift(v, frm - to)


def fx_soft_threshold(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0)


def raw_to_q(raw16: np.ndarray, frac: int) -> np.ndarray:
    """16-bit sensor codes (value * 65536) to the input boundary format."""
    return saturate(round_shift(np.asarray(raw16, dtype=np.int64), LUMA_BITS - frac))


def fx_chain(fnet: FixedNetwork, raw16: np.ndarray) -> np.ndarray:
    """Integer network output at the last boundary's scale, rows = patches."""
    plan = fnet.plan
    x = raw_to_q(np.atleast_2d(raw16), plan.input_frac)
    prev_u, prev_frac = None, 0
    for i, (st, sc) in enumerate(zip(fnet.layers, plan.stages)):
        fin = plan.in_frac(i)
        u = fx_soft_threshold(x, st.theta)
        # exact difference at a common scale, then one requantisation for the MACC
        top = max(fin, sc.mac_frac, prev_frac)
        v = (u << (top - fin)) - (st.c << (top - sc.mac_frac))
        if st.kind == "M" and prev_u is not None:
            v = v - (prev_u << (top - prev_frac))
        v = saturate(round_shift(v, top - sc.mac_frac))
        prod_frac = sc.weight_frac + sc.mac_frac
        bias = _align(x, fin, prod_frac) if st.kind == "M" else None
        x_new = fx_matvec(st.A, v, prod_frac - sc.out_frac, bias)
        prev_u, prev_frac = (u, fin) if st.kind == "M" else (None, 0)
        x = x_new
    return x


def fx_forward(fnet: FixedNetwork, raw_patch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw 16-bit Bayer patch(es) to (16-bit linear luma, 8-bit chroma codes).

    Chroma codes are offset to 128.  Luma goes through ``fnet.gamma_lut`` in
    the frame pipeline, not here.
    """
    if fnet.output_space != "YCBCR422_128":
        raise ValueError("the calculator pipeline emits YCbCr 4:2:2; quantise a YCBCR422_128 network")
    raw = np.asarray(raw_patch)
    single = raw.ndim == 1
    out = fx_chain(fnet, raw)
    fo = fnet.plan.stages[-1].out_frac
    luma = np.clip(round_shift(out[:, :64], fo - LUMA_BITS), 0, 2**LUMA_BITS - 1)
    chroma = np.clip(round_shift(out[:, 64:], fo - CHROMA_BITS) + CHROMA_ZERO, 0, 2**CHROMA_BITS - 1)
    if single:
        return luma[0], chroma[0]
    return luma, chroma


def decode_ycbcr(luma16: np.ndarray, chroma8: np.ndarray) -> np.ndarray:
    """Fixed-point outputs back to an offset-free float YCbCr 4:2:2 vector."""
    return np.concatenate([np.asarray(luma16, dtype=np.float64) / 2**LUMA_BITS,
                           (np.asarray(chroma8, dtype=np.float64) - CHROMA_ZERO) / 2**CHROMA_BITS], axis=-1)


# ---------------------------------------------------------------------------
# throughput model

I_STAGE_CYCLES = 64
M_STAGE_CYCLES = 192
F_STAGE_CYCLES = 192
LAYER_OVERHEAD = 100
CLOCK_PRESETS = {"125MHz": 125e6, "100MHz": 100e6}


@dataclass
class CycleReport:
    T: int
    stride: int
    clock_hz: float
    mac_cycles_per_patch: int         # 64 + 192 (T - 2)
    cycles_per_patch: int             # serial latency including per-layer overheads
    bottleneck_cycles: int            # steady-state initiation interval
    bottleneck_stage: str
    patches_per_frame: int
    cycles_per_frame: int
    fps: float
    fps_no_overlap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cycle_model(T: int, frame_w: int, frame_h: int, stride: int, clock_hz: float,
                layer_overhead: int = LAYER_OVERHEAD) -> CycleReport:
    """Cycle budget of I -> (T-2) M -> F with one MACC input per clock.

    A patch needs 64 + 192 (T - 2) MACC cycles plus ``layer_overhead`` per
    layer of serial latency.  In steady state each layer is its own stage with
    double-buffered control, so a new patch enters every
    ``max(stage cycles)`` clocks and the overheads only add pipeline fill
    once per frame.  ``fps_no_overlap`` charges the overhead on every patch.
    """
    from .pipeline import patch_count
    if T < 3:
        raise ValueError("T must be >= 3")
    if stride not in (2, 4, 8):
        raise ValueError(f"stride must be 2, 4 or 8, got {stride}")
    if frame_w < 8 or frame_h < 8 or frame_w % 2 or frame_h % 2:
        raise ValueError("frame dimensions must be even and at least 8")
    if clock_hz <= 0:
        raise ValueError("clock must be positive")
    mac = I_STAGE_CYCLES + M_STAGE_CYCLES * (T - 2)
    serial = mac + layer_overhead * T
    stages = {"I": I_STAGE_CYCLES, "M": M_STAGE_CYCLES, "F": F_STAGE_CYCLES}
    bottleneck_stage = max(stages, key=lambda k: (stages[k], k == "M"))
    interval = stages[bottleneck_stage]
    patches = patch_count(frame_w, frame_h, stride)
    cycles_frame = patches * interval + serial
    fps = clock_hz / cycles_frame
    fps_no_overlap = clock_hz / (patches * (interval + layer_overhead) + serial)
    return CycleReport(T, stride, float(clock_hz), mac, serial, interval, bottleneck_stage,
                       patches, cycles_frame, fps, fps_no_overlap)
