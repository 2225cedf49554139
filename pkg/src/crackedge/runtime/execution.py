"""Graph executors: float64 reference chain and the integer-only device path.

The float executor defines reference semantics for calibration and accuracy
baselines. The quantized executor consumes a QuantizedModel (normally
unpacked from an archive) and performs int8/int32 arithmetic only — floats
appear solely in the host-side pre/post-processing, mirroring the split
between host CPU and NPU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NotDeployable, ShapeMismatch
from ..graph import ModelGraph, OpKind
from ..optimize import QuantParams, QuantizedModel, quantize_array
from .backend import get_kernels

#: Ops the integer executor can lower.
INT8_OPS = frozenset(
    (OpKind.CONV2D, OpKind.MAXPOOL2D, OpKind.RELU, OpKind.FLATTEN, OpKind.DENSE)
)


@dataclass(frozen=True)
class RawOutput:
    """Device-side result before host post-processing."""

    logits_q: np.ndarray  # int8, one entry per class
    qparams: QuantParams


def _check_input(graph: ModelGraph, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    expected = graph.input.shape
    if len(expected) == 4:
        if x.shape != expected[1:]:
            raise ShapeMismatch(f"input shape {x.shape} != expected {expected[1:]}")
    elif x.shape != expected:
        raise ShapeMismatch(f"input shape {x.shape} != expected {expected}")
    return x


def _run_float_nodes(model: ModelGraph, x, kernels):
    """Yields (node, activation) pairs; activations are float64."""
    k = get_kernels() if kernels is None else kernels
    cur = np.asarray(x, dtype=np.float64)
    for node in model.nodes:
        kind = node.kind
        if kind is OpKind.CONV2D:
            cur = k.conv2d_float(
                cur, model.weights[node.weight_id], model.weights[node.bias_id],
                int(node.param("stride")), node.param("padding") == "Same",
            )
        elif kind is OpKind.MAXPOOL2D:
            cur = k.maxpool_float(cur, int(node.param("window")), int(node.param("stride")))
        elif kind is OpKind.RELU:
            cur = np.maximum(cur, 0.0)
        elif kind is OpKind.FLATTEN:
            cur = np.asarray(cur).reshape(-1)
        elif kind is OpKind.DENSE:
            cur = k.dense_float(
                cur, model.weights[node.weight_id], model.weights[node.bias_id]
            )
        elif kind is OpKind.SOFTMAX:
            shifted = cur - np.max(cur)
            e = np.exp(shifted)
            cur = e / e.sum()
        else:
            raise ShapeMismatch(f"{node.id}: cannot execute {kind}")
        yield node, cur


def run_float(model: ModelGraph, x, kernels=None) -> np.ndarray:
    """Evaluate the float chain; returns the final activation (float64)."""
    cur = _check_input(model, x).astype(np.float64)
    for _, cur in _run_float_nodes(model, cur, kernels):
        pass
    return cur


def run_float_trace(model: ModelGraph, x, kernels=None) -> dict[str, np.ndarray]:
    """Like run_float but returns every activation keyed by tensor id."""
    cur = _check_input(model, x).astype(np.float64)
    trace = {model.input.id: cur}
    for node, act in _run_float_nodes(model, cur, kernels):
        trace[node.output] = act
    return trace


def run_quant(qm: QuantizedModel, x, kernels=None) -> RawOutput:
    """Integer-only inference: quantize input, run int8 kernels, return raw logits."""
    k = get_kernels() if kernels is None else kernels
    graph = qm.graph
    for node in graph.nodes:
        if node.kind not in INT8_OPS:
            raise NotDeployable(f"{node.id}: {node.kind.value} has no int8 kernel")

    x = _check_input(graph, x)
    cur = quantize_array(x, qm.act_qparams[graph.input.id])
    for node in graph.nodes:
        kind = node.kind
        if kind in (OpKind.CONV2D, OpKind.DENSE):
            in_zp = qm.act_qparams[node.inputs[0]].zero_point
            out_zp = qm.act_qparams[node.output].zero_point
            rq = qm.requant[node.id]
            if kind is OpKind.CONV2D:
                cur = k.conv2d_int8(
                    cur, qm.weight_q[node.weight_id], qm.bias_q[node.bias_id],
                    in_zp, rq.m0, rq.shift, out_zp,
                    int(node.param("stride")), node.param("padding") == "Same",
                )
            else:
                cur = k.dense_int8(
                    cur, qm.weight_q[node.weight_id], qm.bias_q[node.bias_id],
                    in_zp, rq.m0, rq.shift, out_zp,
                )
        elif kind is OpKind.MAXPOOL2D:
            cur = k.maxpool_int8(cur, int(node.param("window")), int(node.param("stride")))
        elif kind is OpKind.RELU:
            cur = np.maximum(cur, np.int8(qm.act_qparams[node.output].zero_point))
        else:  # Flatten
            cur = np.asarray(cur).reshape(-1)
    return RawOutput(logits_q=np.asarray(cur, dtype=np.int8),
                     qparams=qm.act_qparams[graph.output.id])
