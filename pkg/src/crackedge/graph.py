"""In-memory CNN representation: typed tensors, chain topology, shape inference.

Graphs are single-input single-output chains of Conv2D / MaxPool2D / Relu /
Flatten / Dense / Softmax nodes. Activation layout is NHWC with batch fixed
at 1; conv weights are [outC, kH, kW, inC], dense weights [outC, inC].
A ModelGraph is immutable after construction: passes build new graphs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArity, NonPositiveDim, ShapeMismatch

NET_INPUT_HW = 224
NET_INPUT_CHANNELS = 3
NUM_CLASSES = 2


class DataType(enum.Enum):
    F32 = "F32"
    I8 = "I8"
    I32 = "I32"


class OpKind(str, enum.Enum):
    CONV2D = "Conv2D"
    MAXPOOL2D = "MaxPool2D"
    RELU = "Relu"
    FLATTEN = "Flatten"
    DENSE = "Dense"
    SOFTMAX = "Softmax"


class Padding(str, enum.Enum):
    SAME = "Same"
    VALID = "Valid"


#: Ops that carry a weight and a bias tensor.
PARAMETRIC_OPS = (OpKind.CONV2D, OpKind.DENSE)


@dataclass(frozen=True)
class TensorSpec:
    id: str
    shape: tuple[int, ...]
    dtype: DataType = DataType.F32

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def elems(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: OpKind
    inputs: tuple[str, ...]  # activation first, then weight, bias for parametric ops
    output: str
    params: tuple[tuple[str, object], ...] = ()

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default

    @property
    def weight_id(self) -> str | None:
        return self.inputs[1] if self.kind in PARAMETRIC_OPS else None

    @property
    def bias_id(self) -> str | None:
        return self.inputs[2] if self.kind in PARAMETRIC_OPS else None


def make_params(**kwargs) -> tuple[tuple[str, object], ...]:
    return tuple(sorted(kwargs.items()))


class ViolationCode(str, enum.Enum):
    UNSUPPORTED_OP = "UnsupportedOp"
    MEMORY_EXCEEDED = "MemoryExceeded"
    DIM_EXCEEDED = "DimExceeded"
    MISSING_TENSOR = "MissingTensor"
    DUPLICATE_ID = "DuplicateId"
    SHAPE_MISMATCH = "ShapeMismatch"


@dataclass(frozen=True)
class Violation:
    node_id: str  # "<graph>" for whole-graph findings
    code: ViolationCode
    detail: str

    def __str__(self):
        return f"{self.code.value}({self.node_id}): {self.detail}"


@dataclass
class ModelGraph:
    """A chain of ops plus every tensor spec and the float weight payloads.

    ``tensors`` indexes every known TensorSpec (activations and weights).
    Activation specs for node outputs may be absent until infer_shapes runs.
    """

    name: str
    input: TensorSpec
    output: TensorSpec
    nodes: tuple[NodeSpec, ...]
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    tensors: dict[str, TensorSpec] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        self.tensors.setdefault(self.input.id, self.input)
        self.tensors.setdefault(self.output.id, self.output)
        for wid, arr in list(self.weights.items()):
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            arr.setflags(write=False)
            self.weights[wid] = arr

    def __eq__(self, other):
        if not isinstance(other, ModelGraph):
            return NotImplemented
        return (
            self.name == other.name
            and self.input == other.input
            and self.output == other.output
            and self.nodes == other.nodes
            and self.tensors == other.tensors
            and set(self.weights) == set(other.weights)
            and all(
                self.weights[k].tobytes() == other.weights[k].tobytes()
                for k in self.weights
            )
        )

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def with_weights(self, new_weights: dict[str, np.ndarray]) -> "ModelGraph":
        """New graph with some weight payloads replaced."""
        merged = dict(self.weights)
        for wid, arr in new_weights.items():
            if wid not in merged:
                raise KeyError(f"unknown weight tensor {wid!r}")
            merged[wid] = np.ascontiguousarray(arr, dtype=np.float32)
        return ModelGraph(
            name=self.name,
            input=self.input,
            output=self.output,
            nodes=self.nodes,
            weights=merged,
            tensors=dict(self.tensors),
        )

    def with_name(self, name: str) -> "ModelGraph":
        return ModelGraph(
            name=name,
            input=self.input,
            output=self.output,
            nodes=self.nodes,
            weights=dict(self.weights),
            tensors=dict(self.tensors),
        )


def _require_positive(dims, context):
    for d in dims:
        if d < 1:
            raise NonPositiveDim(f"{context}: dimension {d} < 1")


def conv_out_hw(in_hw: int, kernel: int, stride: int, padding: Padding) -> int:
    if padding is Padding.SAME:
        out = -(-in_hw // stride)
    else:
        out = (in_hw - kernel) // stride + 1
    if out < 1:
        raise NonPositiveDim(
            f"conv/pool output collapses to {out} (in={in_hw}, k={kernel}, s={stride})"
        )
    return out


def forward_spec(node: NodeSpec, in_spec: TensorSpec, w_spec: TensorSpec | None,
                 b_spec: TensorSpec | None) -> TensorSpec:
    """Output spec of one node given its input (and weight/bias) specs."""
    kind = node.kind
    if kind is OpKind.CONV2D:
        if in_spec.rank != 4:
            raise ShapeMismatch(f"{node.id}: Conv2D input must be rank-4 NHWC, got {in_spec.shape}")
        _, h, w, c = in_spec.shape
        out_c, kh, kw, in_c = w_spec.shape
        if in_c != c:
            raise ShapeMismatch(f"{node.id}: weight inC {in_c} != activation channels {c}")
        if b_spec.shape != (out_c,):
            raise ShapeMismatch(f"{node.id}: bias shape {b_spec.shape} != ({out_c},)")
        stride = int(node.param("stride"))
        padding = Padding(node.param("padding"))
        oh = conv_out_hw(h, kh, stride, padding)
        ow = conv_out_hw(w, kw, stride, padding)
        return TensorSpec(node.output, (1, oh, ow, out_c), in_spec.dtype)
    if kind is OpKind.MAXPOOL2D:
        if in_spec.rank != 4:
            raise ShapeMismatch(f"{node.id}: MaxPool2D input must be rank-4, got {in_spec.shape}")
        _, h, w, c = in_spec.shape
        window = int(node.param("window"))
        stride = int(node.param("stride"))
        oh = conv_out_hw(h, window, stride, Padding.VALID)
        ow = conv_out_hw(w, window, stride, Padding.VALID)
        return TensorSpec(node.output, (1, oh, ow, c), in_spec.dtype)
    if kind is OpKind.RELU:
        return TensorSpec(node.output, in_spec.shape, in_spec.dtype)
    if kind is OpKind.FLATTEN:
        if in_spec.rank == 1:
            return TensorSpec(node.output, in_spec.shape, in_spec.dtype)
        n = 1
        for d in in_spec.shape[1:]:
            n *= d
        return TensorSpec(node.output, (n,), in_spec.dtype)
    if kind is OpKind.DENSE:
        out_c, in_c = w_spec.shape
        if in_spec.shape != (in_c,):
            raise ShapeMismatch(
                f"{node.id}: Dense input {in_spec.shape} != expected ({in_c},)"
            )
        if b_spec.shape != (out_c,):
            raise ShapeMismatch(f"{node.id}: bias shape {b_spec.shape} != ({out_c},)")
        return TensorSpec(node.output, (out_c,), in_spec.dtype)
    if kind is OpKind.SOFTMAX:
        return TensorSpec(node.output, in_spec.shape, in_spec.dtype)
    raise ShapeMismatch(f"{node.id}: cannot infer through {kind}")


def infer_shapes(graph: ModelGraph) -> ModelGraph:
    """Concretize every activation TensorSpec by walking the chain.

    Idempotent. Raises ShapeMismatch / NonPositiveDim on inconsistency.
    """
    _require_positive(graph.input.shape, "graph input")
    tensors = {graph.input.id: graph.input}
    for wid, spec in graph.tensors.items():
        if wid in graph.weights:
            _require_positive(spec.shape, wid)
            tensors[wid] = spec
    cur = graph.input
    for node in graph.nodes:
        if node.inputs[0] not in tensors:
            raise ShapeMismatch(f"{node.id}: input tensor {node.inputs[0]!r} is undefined")
        in_spec = tensors[node.inputs[0]]
        w_spec = b_spec = None
        if node.kind in PARAMETRIC_OPS:
            try:
                w_spec = tensors[node.weight_id]
                b_spec = tensors[node.bias_id]
            except KeyError as e:
                raise ShapeMismatch(f"{node.id}: missing weight tensor {e.args[0]!r}") from None
        out_spec = forward_spec(node, in_spec, w_spec, b_spec)
        tensors[node.output] = out_spec
        cur = out_spec
    return ModelGraph(
        name=graph.name,
        input=graph.input,
        output=cur,
        nodes=graph.nodes,
        weights=dict(graph.weights),
        tensors=tensors,
    )


def validate_graph(graph: ModelGraph) -> list[Violation]:
    """Structural checks. Returns violations instead of raising.

    Empty result means: node and tensor ids are unique, every referenced
    tensor is defined before use, and weight payload sizes match their
    declared shapes.
    """
    out: list[Violation] = []
    seen_nodes: set[str] = set()
    defined: set[str] = {graph.input.id} | set(graph.weights)
    declared_outputs: set[str] = {graph.input.id}
    for node in graph.nodes:
        if node.id in seen_nodes:
            out.append(Violation(node.id, ViolationCode.DUPLICATE_ID, "duplicate node id"))
        seen_nodes.add(node.id)
        for tid in node.inputs:
            if tid not in defined:
                out.append(Violation(
                    node.id, ViolationCode.MISSING_TENSOR,
                    f"references undefined tensor {tid!r}",
                ))
        if node.output in declared_outputs:
            out.append(Violation(
                node.id, ViolationCode.DUPLICATE_ID,
                f"output tensor id {node.output!r} already defined",
            ))
        declared_outputs.add(node.output)
        defined.add(node.output)
        if node.kind in PARAMETRIC_OPS:
            for tid in (node.weight_id, node.bias_id):
                if tid not in graph.weights:
                    continue  # already reported as missing above if undefined
                spec = graph.tensors.get(tid)
                if spec is None:
                    out.append(Violation(
                        node.id, ViolationCode.MISSING_TENSOR,
                        f"weight {tid!r} has no declared spec",
                    ))
                elif graph.weights[tid].size != spec.elems:
                    out.append(Violation(
                        node.id, ViolationCode.SHAPE_MISMATCH,
                        f"weight {tid!r} holds {graph.weights[tid].size} elems, "
                        f"spec says {spec.elems}",
                    ))
    return out


def build_reference_net(channels: list[int], hidden: int) -> ModelGraph:
    """Zero-weight classifier chain: six conv/pool stages, two dense layers,
    softmax head. 224x224x3 input, two output classes.

    Convs are 3x3 stride-1 Same; pools 2x2 stride-2, so the spatial trace is
    224, 112, 56, 28, 14, 7, 3. Caller installs real weights afterwards.
    """
    if len(channels) != 6:
        raise InvalidArity(f"need exactly 6 channel widths, got {len(channels)}")
    if any(c < 1 for c in channels) or hidden < 1:
        raise InvalidArity("channel widths and hidden size must be >= 1")

    inp = TensorSpec("input", (1, NET_INPUT_HW, NET_INPUT_HW, NET_INPUT_CHANNELS))
    nodes: list[NodeSpec] = []
    tensors: dict[str, TensorSpec] = {inp.id: inp}
    weights: dict[str, np.ndarray] = {}
    cur_id, cur_c = inp.id, NET_INPUT_CHANNELS

    def add_weight(tid, shape):
        tensors[tid] = TensorSpec(tid, shape)
        weights[tid] = np.zeros(shape, dtype=np.float32)

    for i, out_c in enumerate(channels, start=1):
        conv = f"conv{i}"
        add_weight(f"{conv}.w", (out_c, 3, 3, cur_c))
        add_weight(f"{conv}.b", (out_c,))
        nodes.append(NodeSpec(
            conv, OpKind.CONV2D,
            (cur_id, f"{conv}.w", f"{conv}.b"), f"{conv}.out",
            make_params(stride=1, padding=Padding.SAME.value),
        ))
        nodes.append(NodeSpec(f"relu{i}", OpKind.RELU, (f"{conv}.out",), f"relu{i}.out"))
        nodes.append(NodeSpec(
            f"pool{i}", OpKind.MAXPOOL2D, (f"relu{i}.out",), f"pool{i}.out",
            make_params(window=2, stride=2),
        ))
        cur_id, cur_c = f"pool{i}.out", out_c

    nodes.append(NodeSpec("flatten", OpKind.FLATTEN, (cur_id,), "flatten.out"))
    flat_len = 3 * 3 * channels[-1]
    add_weight("fc1.w", (hidden, flat_len))
    add_weight("fc1.b", (hidden,))
    nodes.append(NodeSpec("fc1", OpKind.DENSE, ("flatten.out", "fc1.w", "fc1.b"), "fc1.out"))
    nodes.append(NodeSpec("fc1_relu", OpKind.RELU, ("fc1.out",), "fc1_relu.out"))
    add_weight("fc2.w", (NUM_CLASSES, hidden))
    add_weight("fc2.b", (NUM_CLASSES,))
    nodes.append(NodeSpec("fc2", OpKind.DENSE, ("fc1_relu.out", "fc2.w", "fc2.b"), "fc2.out"))
    nodes.append(NodeSpec("softmax", OpKind.SOFTMAX, ("fc2.out",), "softmax.out"))

    graph = ModelGraph(
        name="reference-net",
        input=inp,
        output=TensorSpec("softmax.out", (NUM_CLASSES,)),
        nodes=tuple(nodes),
        weights=weights,
        tensors=tensors,
    )
    return infer_shapes(graph)
