"""Device-profile checks: can this graph deploy to a given edge NPU?

The default profile models a small NPU with a 32 MB budget and a whitelist of
five ops; Softmax is deliberately absent and must be stripped from the chain
end before packing (the host applies it during post-processing instead).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import EmptyGraphAfterStrip, IoError, ParseError, ShapesNotInferred
from .graph import (
    ModelGraph,
    NodeSpec,
    OpKind,
    Violation,
    ViolationCode,
    infer_shapes,
)

GRAPH_SCOPE = "<graph>"

_PROFILE_FIELDS = {
    "name", "supported_ops", "max_activation_bytes",
    "memory_budget_bytes", "max_spatial_dim",
}

#: Per-tensor overhead of quantization parameters (f32 scale + i32 zero point).
QPARAMS_BYTES = 8


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    supported_ops: frozenset[str]
    memory_budget_bytes: int = 33_554_432  # 32 MB SDRAM
    max_spatial_dim: int = 640
    max_activation_bytes: int = 16_777_216

    def __post_init__(self):
        object.__setattr__(self, "supported_ops", frozenset(self.supported_ops))
        if not self.supported_ops:
            raise ValueError("supported_ops must be non-empty")
        if self.memory_budget_bytes <= 0:
            raise ValueError("memory_budget_bytes must be positive")
        unknown = self.supported_ops - {k.value for k in OpKind}
        if unknown:
            raise ValueError(f"unknown op kinds in profile: {sorted(unknown)}")

    def supports(self, kind: OpKind) -> bool:
        return kind.value in self.supported_ops


def default_kl520_profile() -> DeviceProfile:
    """Whitelist of the five ops the target NPU runs; no Softmax."""
    return DeviceProfile(
        name="kl520",
        supported_ops=frozenset(
            k.value for k in (OpKind.CONV2D, OpKind.MAXPOOL2D, OpKind.RELU,
                              OpKind.FLATTEN, OpKind.DENSE)
        ),
    )


def load_profile(path) -> DeviceProfile:
    try:
        text = open(path, "r", encoding="utf-8").read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: profile must be an object")
    unknown = set(doc) - _PROFILE_FIELDS
    if unknown:
        raise ParseError(f"{path}: unknown profile fields {sorted(unknown)}")
    missing = {"name", "supported_ops"} - set(doc)
    if missing:
        raise ParseError(f"{path}: missing profile fields {sorted(missing)}")
    if not isinstance(doc["supported_ops"], list):
        raise ParseError(f"{path}: supported_ops must be a list")
    defaults = default_kl520_profile()
    try:
        return DeviceProfile(
            name=doc["name"],
            supported_ops=frozenset(doc["supported_ops"]),
            memory_budget_bytes=int(doc.get("memory_budget_bytes",
                                            defaults.memory_budget_bytes)),
            max_spatial_dim=int(doc.get("max_spatial_dim", defaults.max_spatial_dim)),
            max_activation_bytes=int(doc.get("max_activation_bytes",
                                             defaults.max_activation_bytes)),
        )
    except (ValueError, TypeError) as e:
        raise ParseError(f"{path}: {e}") from None


def save_profile(profile: DeviceProfile, path) -> None:
    doc = {
        "name": profile.name,
        "supported_ops": sorted(profile.supported_ops),
        "memory_budget_bytes": profile.memory_budget_bytes,
        "max_spatial_dim": profile.max_spatial_dim,
        "max_activation_bytes": profile.max_activation_bytes,
    }
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _activation_bytes(spec, quantized: bool) -> int:
    return spec.elems * (1 if quantized else 4)


def estimate_memory(graph: ModelGraph, quantized: bool) -> int:
    """Deployment footprint in bytes: all weights + peak per-node activations.

    Float models count 4 bytes per weight/bias/activation element. Quantized
    models count 1 byte per weight element, 4 per bias element (biases stay
    32-bit), 8 bytes of qparams per parameter tensor, and 1 byte per
    activation element. Runtime scratch is ignored; the figure is advisory.
    """
    weight_bytes = 0
    for node in graph.nodes:
        if node.weight_id is None:
            continue
        for tid, is_bias in ((node.weight_id, False), (node.bias_id, True)):
            spec = graph.tensors.get(tid)
            if spec is None:
                raise ShapesNotInferred(f"no spec for weight tensor {tid!r}")
            if quantized:
                weight_bytes += spec.elems * (4 if is_bias else 1) + QPARAMS_BYTES
            else:
                weight_bytes += spec.elems * 4

    peak = 0
    for node in graph.nodes:
        in_spec = graph.tensors.get(node.inputs[0])
        out_spec = graph.tensors.get(node.output)
        if in_spec is None or out_spec is None:
            raise ShapesNotInferred(f"shapes not inferred around node {node.id!r}")
        live = _activation_bytes(in_spec, quantized) + _activation_bytes(out_spec, quantized)
        peak = max(peak, live)
    return weight_bytes + peak


def check_compat(graph: ModelGraph, profile: DeviceProfile) -> list[Violation]:
    """All deployability violations, deterministically ordered by node.

    Empty result means: every op is whitelisted, no tensor exceeds the
    spatial or per-activation limits, and the quantized footprint fits the
    memory budget.
    """
    graph = infer_shapes(graph)
    out: list[Violation] = []

    def check_tensor(node_id, spec):
        if spec.rank == 4:
            h, w = spec.shape[1], spec.shape[2]
            if max(h, w) > profile.max_spatial_dim:
                out.append(Violation(
                    node_id, ViolationCode.DIM_EXCEEDED,
                    f"tensor {spec.id!r} spatial {h}x{w} exceeds "
                    f"max_spatial_dim {profile.max_spatial_dim}",
                ))
        abytes = _activation_bytes(spec, quantized=True)
        if abytes > profile.max_activation_bytes:
            out.append(Violation(
                node_id, ViolationCode.MEMORY_EXCEEDED,
                f"tensor {spec.id!r} needs {abytes} activation bytes, "
                f"limit {profile.max_activation_bytes}",
            ))

    check_tensor(GRAPH_SCOPE, graph.input)
    for node in graph.nodes:
        if not profile.supports(node.kind):
            out.append(Violation(
                node.id, ViolationCode.UNSUPPORTED_OP,
                f"{node.kind.value} not in profile {profile.name!r}",
            ))
        check_tensor(node.id, graph.tensors[node.output])

    total = estimate_memory(graph, quantized=True)
    if total > profile.memory_budget_bytes:
        out.append(Violation(
            GRAPH_SCOPE, ViolationCode.MEMORY_EXCEEDED,
            f"estimated {total} bytes exceeds budget {profile.memory_budget_bytes}",
        ))
    return out


def strip_unsupported_head(
    graph: ModelGraph, profile: DeviceProfile
) -> tuple[ModelGraph, list[NodeSpec]]:
    """Drop the maximal trailing run of unsupported nodes from the chain.

    Interior unsupported nodes are left alone (they stay compat violations);
    only the tail is removable without changing upstream semantics. Returns
    the new graph and the removed nodes in original order.
    """
    graph = infer_shapes(graph)
    keep = len(graph.nodes)
    while keep > 0 and not profile.supports(graph.nodes[keep - 1].kind):
        keep -= 1
    if keep == len(graph.nodes):
        return graph, []
    if keep == 0 and graph.nodes:
        raise EmptyGraphAfterStrip(
            f"every node of {graph.name!r} is unsupported by {profile.name!r}"
        )
    removed = list(graph.nodes[keep:])
    kept = graph.nodes[:keep]

    removed_outs = {n.output for n in removed}
    weights = {
        wid: arr for wid, arr in graph.weights.items()
        if not any(wid in (n.weight_id, n.bias_id) for n in removed)
    }
    tensors = {
        tid: spec for tid, spec in graph.tensors.items()
        if tid not in removed_outs and tid in
        ({graph.input.id} | set(weights) | {n.output for n in kept})
    }
    stripped = ModelGraph(
        name=graph.name,
        input=graph.input,
        output=graph.tensors[kept[-1].output],
        nodes=kept,
        weights=weights,
        tensors=tensors,
    )
    return infer_shapes(stripped), removed
