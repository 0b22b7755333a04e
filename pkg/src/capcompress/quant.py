"""Int8 affine quantization: real = scale * (q - zero_point).

Weights use symmetric per-axis parameters (range [-127, 127], zero point 0)
over the output-channel axis; activations use asymmetric per-tensor
parameters (range [-128, 127]) whose zero point makes real 0.0 exact.

Scales are stored as float32. Quantization divides in float64, so rounding
is correct for every float32 input, and :func:`dequantize` returns float64
values, which hold ``scale * (q - zp)`` exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import AccumulatorOverflowError, DomainError, ShapeError

SYMMETRIC_RANGE = (-127, 127)
ASYMMETRIC_RANGE = (-128, 127)


def _scale_at_least(value):
    # smallest float32 >= value, so scale * qmax never falls short of the data
    s = np.float32(value)
    if float(s) < value:
        s = np.nextafter(s, np.float32(np.inf))
    return s


@dataclass(frozen=True)
class QuantParams:
    scale: np.ndarray          # float32 [slices]
    zero_point: np.ndarray     # int32 [slices]
    axis: int | None = None    # None = per-tensor
    symmetric: bool = True

    def __post_init__(self):
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float32))
        zp = np.atleast_1d(np.asarray(self.zero_point, dtype=np.int32))
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", zp)
        if scale.shape != zp.shape or scale.ndim != 1:
            raise ShapeError("scale and zero_point must be matching 1-D arrays")
        if not np.all(scale > 0) or not np.all(np.isfinite(scale)):
            raise DomainError("scales must be positive and finite")
        if self.axis is None and scale.size != 1:
            raise ShapeError("per-tensor params carry exactly one slice")
        lo, hi = self.qrange
        if self.symmetric and np.any(zp != 0):
            raise DomainError("symmetric params require zero_point == 0")
        if np.any(zp < lo) or np.any(zp > hi):
            raise DomainError(f"zero_point outside [{lo}, {hi}]")

    @property
    def qrange(self):
        return SYMMETRIC_RANGE if self.symmetric else ASYMMETRIC_RANGE

    @property
    def qmin(self):
        return self.qrange[0]

    @property
    def qmax(self):
        return self.qrange[1]

    @property
    def slices(self):
        return self.scale.size

    def real_range(self):
        """Representable real interval per slice, as float64 arrays (lo, hi)."""
        s = self.scale.astype(np.float64)
        zp = self.zero_point.astype(np.float64)
        return s * (self.qmin - zp), s * (self.qmax - zp)

    def transposed(self):
        """Params for the transpose of a 2-D tensor (per-axis axis flips 0 <-> 1)."""
        if self.axis is None:
            return self
        return QuantParams(self.scale, self.zero_point, 1 - self.axis, self.symmetric)


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray   # int8
    params: QuantParams

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype != np.int8:
            raise TypeError("quantized payload must be int8")
        if np.any(values < self.params.qmin):
            raise DomainError("quantized value below params range")
        p = self.params
        if p.axis is not None:
            if not (0 <= p.axis < values.ndim):
                raise ShapeError(f"axis {p.axis} out of range for shape {values.shape}")
            if values.shape[p.axis] != p.slices:
                raise ShapeError(
                    f"{p.slices} slices for axis {p.axis} of shape {values.shape}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def T(self):
        return QuantizedTensor(self.values.T, self.params.transposed())


def _as_slices(arr, axis):
    """View ``arr`` as [slices x inner] with the quantization axis first."""
    if axis is None:
        return arr.reshape(1, -1), None
    moved = np.moveaxis(arr, axis, 0)
    return moved.reshape(moved.shape[0], -1), moved.shape


def _from_slices(flat, axis, moved_shape, shape):
    if axis is None:
        return flat.reshape(shape)
    return np.moveaxis(flat.reshape(moved_shape), 0, axis)


def compute_params_symmetric(weights, axis=None):
    """Per-tensor or per-axis symmetric params: scale = max|w| / 127."""
    w = np.asarray(weights)
    if w.size == 0:
        raise DomainError("cannot quantize an empty tensor")
    if axis is not None and not (0 <= axis < w.ndim):
        raise ShapeError(f"axis {axis} out of range for rank {w.ndim}")
    flat, _ = _as_slices(w, axis)
    max_abs = np.max(np.abs(flat.astype(np.float64)), axis=1)
    scale = np.array([_scale_at_least(m / 127.0) if m > 0 else np.float32(1.0) for m in max_abs],
                     dtype=np.float32)
    return QuantParams(scale, np.zeros(scale.size, np.int32), axis, symmetric=True)


def compute_params_asymmetric(min_val, max_val):
    """Per-tensor asymmetric params covering [min_val, max_val] and 0."""
    min_val = float(min_val)
    max_val = float(max_val)
    if not (np.isfinite(min_val) and np.isfinite(max_val)):
        raise DomainError("range bounds must be finite")
    if min_val > max_val:
        raise DomainError(f"min {min_val} > max {max_val}")
    lo = min(min_val, 0.0)
    hi = max(max_val, 0.0)
    if hi == lo:
        scale = np.float32(1.0)
    else:
        scale = _scale_at_least((hi - lo) / 255.0)
    zp = kernels.round_half_away(np.float64(-128.0 - lo / np.float64(scale)))
    zp = int(np.clip(zp, -128, 127))
    return QuantParams([scale], [zp], None, symmetric=False)


def quantize(t, params):
    """q = clamp(round(t / scale) + zero_point); ties round away from zero."""
    arr = np.asarray(t)
    if params.axis is not None:
        if not (0 <= params.axis < arr.ndim) or arr.shape[params.axis] != params.slices:
            raise ShapeError(
                f"params with {params.slices} slices on axis {params.axis} "
                f"do not fit shape {arr.shape}")
    flat, moved = _as_slices(arr, params.axis)
    q = kernels.quantize_slices(
        np.ascontiguousarray(flat),
        params.scale.astype(np.float64),
        params.zero_point.astype(np.int64),
        params.qmin, params.qmax,
    )
    return QuantizedTensor(_from_slices(q, params.axis, moved, arr.shape), params)


def dequantize(q):
    """scale * (q - zero_point) per slice, evaluated exactly in float64."""
    p = q.params
    flat, moved = _as_slices(q.values, p.axis)
    real = p.scale.astype(np.float64)[:, None] * (
        flat.astype(np.float64) - p.zero_point.astype(np.float64)[:, None])
    return _from_slices(real, p.axis, moved, q.values.shape)


def qmatmul(a, b, out_params, bias=None):
    """Integer matmul of quantized operands.

    ``a`` must be per-tensor; ``b`` may be per-tensor or per-axis over its
    columns (axis 1). Products of zero-point-shifted int8 values accumulate
    in 32-bit semantics; any partial sum leaving the int32 range raises
    :class:`AccumulatorOverflowError`. The accumulator is rescaled by
    ``scale_a * scale_b / scale_out`` in double precision, rounded half away
    from zero, offset by the output zero point and clamped.

    ``bias``, if given, is a real vector of length n that is quantized to
    int32 at scale ``scale_a * scale_b`` and preloaded into the accumulator.
    """
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError("qmatmul expects 2-D operands")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    if a.params.axis is not None:
        raise ShapeError("left operand must be quantized per-tensor")
    if out_params.axis is not None:
        raise ShapeError("output params must be per-tensor")
    if b.params.axis is None:
        sb = np.full(n, np.float64(b.params.scale[0]))
        zpb = np.full(n, np.int64(b.params.zero_point[0]))
    elif b.params.axis == 1:
        sb = b.params.scale.astype(np.float64)
        zpb = b.params.zero_point.astype(np.int64)
    else:
        raise ShapeError("right operand must be per-tensor or per-column (axis 1)")
    sa = np.float64(a.params.scale[0])
    acc_scale = sa * sb
    if bias is None:
        bias_q = np.zeros(n, dtype=np.int64)
    else:
        bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if bias.size != n:
            raise ShapeError(f"bias length {bias.size} != {n}")
        bias_q = kernels.round_half_away(bias / acc_scale)
        if np.any(bias_q > kernels.INT32_MAX) or np.any(bias_q < kernels.INT32_MIN):
            raise AccumulatorOverflowError("bias does not fit a 32-bit accumulator")
        bias_q = bias_q.astype(np.int64)
    acc, overflow = kernels.qmatmul_acc(
        np.ascontiguousarray(a.values), np.int64(a.params.zero_point[0]),
        np.ascontiguousarray(b.values), zpb, bias_q)
    if overflow:
        raise AccumulatorOverflowError("int32 accumulator overflow in qmatmul")
    multiplier = acc_scale / np.float64(out_params.scale[0])
    out = kernels.requantize(acc, multiplier, np.int64(out_params.zero_point[0]),
                             out_params.qmin, out_params.qmax)
    return QuantizedTensor(out, out_params)


def fake_quant_forward(t, params):
    """Snap ``t`` onto the quantization grid, keeping its float dtype."""
    arr = np.asarray(t)
    return dequantize(quantize(arr, params)).astype(arr.dtype, copy=False)


def fake_quant_backward(upstream, t, params):
    """Straight-through estimator: pass gradient where ``t`` is representable."""
    upstream = np.asarray(upstream)
    arr = np.asarray(t)
    if upstream.shape != arr.shape:
        raise ShapeError(f"gradient shape {upstream.shape} != input shape {arr.shape}")
    lo, hi = params.real_range()
    flat, moved = _as_slices(arr.astype(np.float64), params.axis)
    inside = (flat >= lo[:, None]) & (flat <= hi[:, None])
    mask = _from_slices(inside, params.axis, moved, arr.shape)
    return np.where(mask, upstream, np.zeros_like(upstream))


class MinMaxObserver:
    """Running per-site (min, max) of activations seen during forward passes."""

    def __init__(self):
        self.ranges = {}

    def __call__(self, site, value):
        v = np.asarray(value)
        lo = float(np.min(v))
        hi = float(np.max(v))
        old = self.ranges.get(site)
        if old is not None:
            lo = min(lo, old[0])
            hi = max(hi, old[1])
        self.ranges[site] = (lo, hi)

    def params(self):
        return {site: compute_params_asymmetric(lo, hi) for site, (lo, hi) in self.ranges.items()}


@dataclass(frozen=True)
class Calibration:
    ranges: dict   # site -> (min, max)
    params: dict   # site -> QuantParams


def calibrate(model, samples, part="decoder"):
    """Record activation ranges of float forward passes over ``samples``.

    For ``part="decoder"`` each sample is ``(feature, token_ids)``; for
    ``part="encoder"`` each sample is a raw feature vector.
    """
    from . import nn

    samples = list(samples)
    if not samples:
        raise DomainError("calibration needs at least one sample")
    obs = MinMaxObserver()
    for sample in samples:
        if part == "decoder":
            feature, ids = sample
            nn.decoder_forward(model, feature, ids, observer=obs, use_int8=False)
        elif part == "encoder":
            nn.encode(model, sample, observer=obs, use_int8=False)
        else:
            raise ValueError(f"unknown model part {part!r}")
    return Calibration(dict(obs.ranges), obs.params())
