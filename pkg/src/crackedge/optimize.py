"""Model optimization passes: calibration, int8 quantization, pruning, clustering.

Quantization scheme: signed int8 for weights and activations. Activations are
asymmetric (scale + zero point from calibrated min/max, range widened to
include 0); weights are symmetric per-tensor (zero point 0); biases are int32
at input_scale x weight_scale. Per-layer rescaling is realized as a fixed
point multiplier (m0, shift) so the device path never touches floats.
Rounding is half-away-from-zero everywhere.

Relu, MaxPool2D and Flatten outputs reuse their input tensor's quantization
parameters: with a shared zero point, quantized Relu is exactly max(q, zp)
and pooling commutes with dequantization, so those ops introduce no error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyCalibrationSet,
    InvalidK,
    InvalidSparsity,
    MissingStats,
    MultiplierOutOfRange,
    NonFiniteRange,
    ParseError,
)
from .graph import DataType, ModelGraph, OpKind, TensorSpec, infer_shapes

I32_MIN, I32_MAX = -(2 ** 31), 2 ** 31 - 1


def round_half_away(x: float) -> int:
    """Symmetric rounding: 0.5 -> 1, -0.5 -> -1 (no banker's rounding)."""
    return math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)


def round_half_away_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not -128 <= self.zero_point <= 127:
            raise ValueError(f"zero_point {self.zero_point} outside int8 range")

    def dequant(self, q):
        return self.scale * (np.asarray(q, dtype=np.float64) - self.zero_point)


@dataclass(frozen=True)
class RequantMultiplier:
    m0: int
    shift: int

    def __post_init__(self):
        if not 2 ** 30 <= self.m0 < 2 ** 31:
            raise ValueError(f"m0 {self.m0} outside [2^30, 2^31)")
        if not -8 <= self.shift <= 40:
            raise ValueError(f"shift {self.shift} outside [-8, 40]")

    @property
    def real(self) -> float:
        """The multiplier this fixed-point pair realizes."""
        return self.m0 * 2.0 ** (-31 - self.shift)


@dataclass(frozen=True)
class TensorRange:
    min_val: float
    max_val: float
    sample_count: int


@dataclass
class CalibrationStats:
    """Running per-tensor activation ranges observed on calibration inputs."""

    ranges: dict[str, TensorRange] = field(default_factory=dict)

    def observe(self, tensor_id: str, arr) -> None:
        arr = np.asarray(arr)
        lo, hi = float(arr.min()), float(arr.max())
        prev = self.ranges.get(tensor_id)
        if prev is None:
            self.ranges[tensor_id] = TensorRange(lo, hi, 1)
        else:
            self.ranges[tensor_id] = TensorRange(
                min(prev.min_val, lo), max(prev.max_val, hi), prev.sample_count + 1
            )

    def to_json(self) -> str:
        doc = {
            tid: {"min": r.min_val, "max": r.max_val, "count": r.sample_count}
            for tid, r in sorted(self.ranges.items())
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationStats":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"calibration stats: line {e.lineno}: {e.msg}") from None
        if not isinstance(doc, dict):
            raise ParseError("calibration stats: expected an object")
        stats = cls()
        for tid, entry in doc.items():
            try:
                stats.ranges[tid] = TensorRange(
                    float(entry["min"]), float(entry["max"]), int(entry["count"])
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"calibration stats[{tid!r}]: {e}") from None
        return stats


def collect_calibration_stats(model: ModelGraph, samples) -> CalibrationStats:
    """Min/max of every activation tensor over float executions of samples."""
    from .runtime.execution import run_float_trace

    samples = list(samples)
    if not samples:
        raise EmptyCalibrationSet("calibration needs at least one sample")
    model = infer_shapes(model)
    stats = CalibrationStats()
    for x in samples:
        for tid, arr in run_float_trace(model, x).items():
            stats.observe(tid, arr)
    return stats


def compute_qparams(min_val: float, max_val: float) -> QuantParams:
    """Asymmetric int8 parameters for the widened range [min(min,0), max(max,0)]."""
    if not (math.isfinite(min_val) and math.isfinite(max_val)) or min_val > max_val:
        raise NonFiniteRange(f"bad calibration range [{min_val}, {max_val}]")
    lo = min(min_val, 0.0)
    hi = max(max_val, 0.0)
    if lo == hi:  # only possible when both are exactly 0
        return QuantParams(scale=1.0, zero_point=-128)
    scale = (hi - lo) / 255.0
    zp = -128 - round_half_away(lo / scale)
    return QuantParams(scale=scale, zero_point=max(-128, min(127, zp)))


def quantize_value(x: float, p: QuantParams) -> int:
    """clamp(round(x / scale) + zero_point) into int8, half-away rounding."""
    q = round_half_away(x / p.scale) + p.zero_point
    return max(-128, min(127, q))


def quantize_array(x, p: QuantParams) -> np.ndarray:
    q = round_half_away_array(np.asarray(x, dtype=np.float64) / p.scale) + p.zero_point
    return np.clip(q, -128, 127).astype(np.int8)


def compute_requant(real_multiplier: float) -> RequantMultiplier:
    """Fixed-point (m0, shift) with m0 * 2^(-31-shift) ~= real_multiplier.

    Relative error <= 2^-30: the mantissa is rounded to 31 bits, and the
    single clamp case (mantissa rounding up to 2^31) still lands within one
    unit of the true 31-bit value.
    """
    if not (2.0 ** -40 < real_multiplier < 2.0 ** 8):
        raise MultiplierOutOfRange(
            f"multiplier {real_multiplier} outside (2^-40, 2^8)"
        )
    frac, exp = math.frexp(real_multiplier)  # frac in [0.5, 1)
    m0 = round_half_away(frac * 2 ** 31)
    if m0 == 2 ** 31:
        m0 = 2 ** 31 - 1
    return RequantMultiplier(m0=m0, shift=-exp)


@dataclass
class QuantizedModel:
    """Everything the integer-only device path needs.

    graph carries topology and I8/I32 tensor specs but no float payloads;
    the quantized payloads live in weight_q / bias_q.
    """

    graph: ModelGraph
    weight_q: dict[str, np.ndarray]
    bias_q: dict[str, np.ndarray]
    act_qparams: dict[str, QuantParams]
    weight_qparams: dict[str, QuantParams]
    requant: dict[str, RequantMultiplier]

    def check_invariants(self) -> None:
        """Raise ValueError on any structural inconsistency."""
        for node in self.graph.nodes:
            if node.kind not in (OpKind.CONV2D, OpKind.DENSE):
                continue
            for store, tid, dtype in (
                (self.weight_q, node.weight_id, np.int8),
                (self.bias_q, node.bias_id, np.int32),
            ):
                arr = store.get(tid)
                if arr is None:
                    raise ValueError(f"{node.id}: missing quantized tensor {tid!r}")
                if arr.dtype != dtype:
                    raise ValueError(f"{tid!r}: dtype {arr.dtype}, expected {dtype}")
                spec = self.graph.tensors.get(tid)
                if spec is not None and tuple(arr.shape) != spec.shape:
                    raise ValueError(f"{tid!r}: shape {arr.shape} != {spec.shape}")
            if node.weight_id not in self.weight_qparams:
                raise ValueError(f"{node.id}: missing weight qparams")
            if self.weight_qparams[node.weight_id].zero_point != 0:
                raise ValueError(f"{node.weight_id}: weight zero_point must be 0")
            if node.id not in self.requant:
                raise ValueError(f"{node.id}: missing requant multiplier")
        for tid in (self.graph.input.id, self.graph.output.id):
            if tid not in self.act_qparams:
                raise ValueError(f"missing activation qparams for {tid!r}")


#: Ops whose output tensor shares the input tensor's quantization parameters.
_QPARAMS_INHERIT = (OpKind.RELU, OpKind.MAXPOOL2D, OpKind.FLATTEN)


def _requant_spec(spec: TensorSpec, dtype: DataType) -> TensorSpec:
    return TensorSpec(spec.id, spec.shape, dtype)


def quantize_model(model: ModelGraph, stats: CalibrationStats) -> QuantizedModel:
    """Post-training quantization of a (head-stripped) float model."""
    model = infer_shapes(model)

    def stats_qparams(tid):
        r = stats.ranges.get(tid)
        if r is None:
            raise MissingStats(f"no calibration range for tensor {tid!r}")
        return compute_qparams(r.min_val, r.max_val)

    act_qparams: dict[str, QuantParams] = {model.input.id: stats_qparams(model.input.id)}
    for node in model.nodes:
        if node.kind in _QPARAMS_INHERIT:
            act_qparams[node.output] = act_qparams[node.inputs[0]]
        else:
            act_qparams[node.output] = stats_qparams(node.output)

    weight_q: dict[str, np.ndarray] = {}
    bias_q: dict[str, np.ndarray] = {}
    weight_qparams: dict[str, QuantParams] = {}
    requant: dict[str, RequantMultiplier] = {}
    tensors = {
        tid: _requant_spec(spec, DataType.I8) for tid, spec in model.tensors.items()
    }
    for node in model.nodes:
        if node.kind not in (OpKind.CONV2D, OpKind.DENSE):
            continue
        w = model.weights[node.weight_id].astype(np.float64)
        b = model.weights[node.bias_id].astype(np.float64)
        w_absmax = float(np.max(np.abs(w))) if w.size else 0.0
        w_scale = w_absmax / 127.0 if w_absmax > 0 else 1.0
        wp = QuantParams(scale=w_scale, zero_point=0)
        weight_qparams[node.weight_id] = wp
        weight_q[node.weight_id] = np.clip(
            round_half_away_array(w / w_scale), -128, 127
        ).astype(np.int8)

        in_scale = act_qparams[node.inputs[0]].scale
        out_scale = act_qparams[node.output].scale
        bias_scale = in_scale * w_scale
        bias_q[node.bias_id] = np.clip(
            round_half_away_array(b / bias_scale), I32_MIN, I32_MAX
        ).astype(np.int32)
        requant[node.id] = compute_requant(bias_scale / out_scale)
        tensors[node.bias_id] = _requant_spec(model.tensors[node.bias_id], DataType.I32)

    qgraph = ModelGraph(
        name=model.name,
        input=tensors[model.input.id],
        output=tensors[model.output.id],
        nodes=model.nodes,
        weights={},
        tensors=tensors,
    )
    qm = QuantizedModel(
        graph=qgraph,
        weight_q=weight_q,
        bias_q=bias_q,
        act_qparams=act_qparams,
        weight_qparams=weight_qparams,
        requant=requant,
    )
    qm.check_invariants()
    return qm


def prune_magnitude(model: ModelGraph, sparsity: float) -> ModelGraph:
    """Zero the floor(sparsity * n) smallest-magnitude entries per weight tensor.

    Ties break toward lower flat index. Biases are left alone.
    """
    if not (0.0 <= sparsity < 1.0) or not math.isfinite(sparsity):
        raise InvalidSparsity(f"sparsity must be in [0, 1), got {sparsity}")
    new_weights = {}
    for node in model.nodes:
        if node.weight_id is None:
            continue
        w = model.weights[node.weight_id]
        n_zero = int(math.floor(sparsity * w.size))
        if n_zero == 0:
            continue
        flat = w.ravel().copy()
        order = np.argsort(np.abs(flat), kind="stable")
        flat[order[:n_zero]] = 0.0
        new_weights[node.weight_id] = flat.reshape(w.shape)
    return model.with_weights(new_weights) if new_weights else model


def lloyd1d(values: np.ndarray, k: int, max_iters: int):
    """Scalar k-means with deterministic evenly-spaced init.

    Returns (centroids, assignments, sse_history); sse_history holds the SSE
    after each completed assign+update iteration and is non-increasing.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    centroids = np.linspace(v.min(), v.max(), k)
    assign = None
    history = []
    for _ in range(max_iters):
        dist = np.abs(v[:, None] - centroids[None, :])
        new_assign = np.argmin(dist, axis=1)  # ties -> lowest centroid index
        for ci in range(k):
            members = v[new_assign == ci]
            if members.size:
                centroids[ci] = members.mean()
        history.append(float(np.sum((v - centroids[new_assign]) ** 2)))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    if assign is None:  # max_iters == 0: nearest-centroid assignment only
        assign = np.argmin(np.abs(v[:, None] - centroids[None, :]), axis=1)
    return centroids, assign, history


def cluster_weights(model: ModelGraph, k: int, max_iters: int = 50) -> ModelGraph:
    """Replace each weight tensor's values by k shared centroids (1-d k-means).

    Tensors with at most k distinct values already satisfy the goal and pass
    through unchanged. Biases are left alone.
    """
    if k < 2:
        raise InvalidK(f"k must be >= 2, got {k}")
    new_weights = {}
    for node in model.nodes:
        if node.weight_id is None:
            continue
        w = model.weights[node.weight_id]
        if np.unique(w).size <= k:
            continue
        centroids, assign, _ = lloyd1d(w, k, max_iters)
        new_weights[node.weight_id] = (
            centroids[assign].astype(np.float32).reshape(w.shape)
        )
    return model.with_weights(new_weights) if new_weights else model
