"""Float-model exchange format and self-contained image codecs.

Models travel as two files: a strict JSON graph descriptor plus a raw blob of
little-endian float32 weights concatenated in graph declaration order.
Activation tensor ids are not persisted; they are derived as ``input`` and
``<node_id>.out``, which every builder in this package follows.

Images are binary PPM (P6, RGB) or PGM (P5, gray) with maxval 255.
"""

from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    IoError,
    MissingClassDir,
    ParseError,
    UnknownOpKind,
    UnsupportedMaxval,
    WeightLengthMismatch,
)
from .graph import (
    ModelGraph,
    NodeSpec,
    OpKind,
    Padding,
    TensorSpec,
    forward_spec,
    infer_shapes,
    make_params,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

_NODE_FIELDS = {"id", "kind", "params", "weight_id", "bias_id"}
_PARAM_FIELDS = {
    OpKind.CONV2D: {"stride", "padding", "out_channels", "kernel"},
    OpKind.MAXPOOL2D: {"window", "stride"},
    OpKind.DENSE: {"units"},
    OpKind.RELU: set(),
    OpKind.FLATTEN: set(),
    OpKind.SOFTMAX: set(),
}


class Label(enum.IntEnum):
    NEGATIVE = 0  # intact surface
    POSITIVE = 1  # crack


@dataclass(frozen=True)
class ImageBuffer:
    width: int
    height: int
    channels: int
    pixels: bytes  # row-major, interleaved

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.pixels) != expected:
            raise ValueError(f"pixel payload {len(self.pixels)} != {expected}")

    def as_array(self) -> np.ndarray:
        """(height, width, channels) uint8 view."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )


@dataclass(frozen=True)
class LabeledSample:
    image: ImageBuffer
    label: Label
    source_path: str


# ---------------------------------------------------------------- model files


def _expect_int(value, where, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{where}: expected integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ParseError(f"{where}: {value} < {minimum}")
    return value


def _check_fields(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ParseError(f"{where}: missing fields {sorted(missing)}")


def _parse_node(entry, index, cur_spec, tensors):
    where = f"nodes[{index}]"
    _check_fields(entry, _NODE_FIELDS, {"id", "kind", "params"}, where)
    node_id = entry["id"]
    if not isinstance(node_id, str) or not node_id:
        raise ParseError(f"{where}: bad id {node_id!r}")
    try:
        kind = OpKind(entry["kind"])
    except ValueError:
        raise UnknownOpKind(f"{where}: unknown op kind {entry['kind']!r}") from None
    params = entry["params"]
    _check_fields(params, _PARAM_FIELDS[kind], _PARAM_FIELDS[kind], f"{where}.params")

    parametric = kind in (OpKind.CONV2D, OpKind.DENSE)
    if parametric and ("weight_id" not in entry or "bias_id" not in entry):
        raise ParseError(f"{where}: {kind.value} requires weight_id and bias_id")
    if not parametric and ("weight_id" in entry or "bias_id" in entry):
        raise ParseError(f"{where}: {kind.value} carries no weights")

    out_id = f"{node_id}.out"
    if kind is OpKind.CONV2D:
        stride = _expect_int(params["stride"], f"{where}.stride", 1)
        padding = params["padding"]
        if padding not in (Padding.SAME.value, Padding.VALID.value):
            raise ParseError(f"{where}: padding must be Same or Valid, got {padding!r}")
        out_c = _expect_int(params["out_channels"], f"{where}.out_channels", 1)
        kernel = params["kernel"]
        if (not isinstance(kernel, list) or len(kernel) != 2
                or any(not isinstance(k, int) or k < 1 for k in kernel)):
            raise ParseError(f"{where}: kernel must be a pair of positive ints")
        if cur_spec.rank != 4:
            raise ParseError(f"{where}: Conv2D input is rank-{cur_spec.rank}")
        in_c = cur_spec.shape[3]
        w_spec = TensorSpec(entry["weight_id"], (out_c, kernel[0], kernel[1], in_c))
        b_spec = TensorSpec(entry["bias_id"], (out_c,))
        node = NodeSpec(node_id, kind, (cur_spec.id, w_spec.id, b_spec.id), out_id,
                        make_params(stride=stride, padding=padding))
    elif kind is OpKind.DENSE:
        units = _expect_int(params["units"], f"{where}.units", 1)
        if cur_spec.rank != 1:
            raise ParseError(f"{where}: Dense input is rank-{cur_spec.rank}; flatten first")
        w_spec = TensorSpec(entry["weight_id"], (units, cur_spec.shape[0]))
        b_spec = TensorSpec(entry["bias_id"], (units,))
        node = NodeSpec(node_id, kind, (cur_spec.id, w_spec.id, b_spec.id), out_id)
    else:
        w_spec = b_spec = None
        if kind is OpKind.MAXPOOL2D:
            window = _expect_int(params["window"], f"{where}.window", 1)
            stride = _expect_int(params["stride"], f"{where}.stride", 1)
            node = NodeSpec(node_id, kind, (cur_spec.id,), out_id,
                            make_params(window=window, stride=stride))
        else:
            node = NodeSpec(node_id, kind, (cur_spec.id,), out_id)

    out_spec = forward_spec(node, cur_spec, w_spec, b_spec)
    new_specs = [out_spec] if w_spec is None else [w_spec, b_spec, out_spec]
    for spec in new_specs:
        if spec.id in tensors:
            raise ParseError(f"{where}: duplicate tensor id {spec.id!r}")
        tensors[spec.id] = spec
    return node, out_spec, (w_spec, b_spec)


def parse_descriptor(doc):
    """Validate a descriptor document and rebuild the graph skeleton.

    Returns (name, input_spec, nodes, output_spec, tensors, weight_order)
    where weight_order lists weight/bias TensorSpecs in declaration order.
    Raises ParseError / UnknownOpKind; weight payloads are not touched.
    """
    _check_fields(doc, {"format_version", "name", "input", "nodes"},
                  {"format_version", "name", "input", "nodes"}, "document")
    if doc["format_version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {doc['format_version']!r}")
    if not isinstance(doc["name"], str):
        raise ParseError("name must be a string")
    _check_fields(doc["input"], {"shape"}, {"shape"}, "input")
    shape = doc["input"]["shape"]
    if (not isinstance(shape, list) or len(shape) not in (1, 2, 4)
            or any(not isinstance(d, int) or d < 1 for d in shape)):
        raise ParseError(f"input.shape must be a rank-1/2/4 list of positive ints, got {shape!r}")
    if not isinstance(doc["nodes"], list):
        raise ParseError("nodes must be a list")

    inp = TensorSpec("input", tuple(shape))
    tensors: dict[str, TensorSpec] = {inp.id: inp}
    nodes: list[NodeSpec] = []
    weight_order: list[TensorSpec] = []
    seen_ids: set[str] = set()
    cur = inp
    for i, entry in enumerate(doc["nodes"]):
        node, cur, (w_spec, b_spec) = _parse_node(entry, i, cur, tensors)
        if node.id in seen_ids:
            raise ParseError(f"nodes[{i}]: duplicate node id {node.id!r}")
        seen_ids.add(node.id)
        nodes.append(node)
        if w_spec is not None:
            weight_order.extend((w_spec, b_spec))
    return doc["name"], inp, nodes, cur, tensors, weight_order


def load_model(graph_path, weights_path) -> ModelGraph:
    """Parse descriptor + weight blob into a shape-inferred ModelGraph."""
    try:
        text = open(graph_path, "r", encoding="utf-8").read()
    except OSError as e:
        raise IoError(f"cannot read {graph_path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{graph_path}: line {e.lineno} col {e.colno}: {e.msg}") from None

    name, inp, nodes, out, tensors, weight_order = parse_descriptor(doc)

    try:
        blob = open(weights_path, "rb").read()
    except OSError as e:
        raise IoError(f"cannot read {weights_path}: {e}") from e
    total = sum(s.elems for s in weight_order)
    if len(blob) != 4 * total:
        raise WeightLengthMismatch(
            f"{weights_path}: blob is {len(blob)} bytes, expected {4 * total}"
        )
    flat = np.frombuffer(blob, dtype="<f4")
    weights: dict[str, np.ndarray] = {}
    offset = 0
    for spec in weight_order:
        weights[spec.id] = flat[offset:offset + spec.elems].reshape(spec.shape)
        offset += spec.elems

    graph = ModelGraph(
        name=name,
        input=inp,
        output=out,
        nodes=tuple(nodes),
        weights=weights,
        tensors=tensors,
    )
    return infer_shapes(graph)


def graph_to_descriptor(graph: ModelGraph) -> dict:
    """The JSON-serializable descriptor document for a graph."""
    entries = []
    for node in graph.nodes:
        entry = {"id": node.id, "kind": node.kind.value, "params": {}}
        if node.kind is OpKind.CONV2D:
            w = graph.tensors[node.weight_id]
            entry["params"] = {
                "stride": int(node.param("stride")),
                "padding": str(node.param("padding")),
                "out_channels": int(w.shape[0]),
                "kernel": [int(w.shape[1]), int(w.shape[2])],
            }
        elif node.kind is OpKind.MAXPOOL2D:
            entry["params"] = {
                "window": int(node.param("window")),
                "stride": int(node.param("stride")),
            }
        elif node.kind is OpKind.DENSE:
            entry["params"] = {"units": int(graph.tensors[node.weight_id].shape[0])}
        if node.kind in (OpKind.CONV2D, OpKind.DENSE):
            entry["weight_id"] = node.weight_id
            entry["bias_id"] = node.bias_id
        entries.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "name": graph.name,
        "input": {"shape": list(graph.input.shape)},
        "nodes": entries,
    }


def save_model(graph: ModelGraph, graph_path, weights_path) -> None:
    """Inverse of load_model; the weight blob round-trips bit-exactly."""
    doc = graph_to_descriptor(graph)
    blob_parts = []
    for node in graph.nodes:
        if node.kind in (OpKind.CONV2D, OpKind.DENSE):
            blob_parts.append(graph.weights[node.weight_id].ravel())
            blob_parts.append(graph.weights[node.bias_id].ravel())
    blob = (
        np.concatenate(blob_parts).astype("<f4", copy=False).tobytes()
        if blob_parts else b""
    )
    try:
        with open(graph_path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
        with open(weights_path, "wb") as f:
            f.write(blob)
    except OSError as e:
        raise IoError(f"cannot write model files: {e}") from e


# --------------------------------------------------------------- image codecs


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next header token, skipping whitespace and # comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise ParseError("unexpected end of header")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_image(path) -> ImageBuffer:
    """Read a binary PPM (P6) or PGM (P5) file, maxval 255."""
    try:
        data = open(path, "rb").read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    return decode_image(data)


def decode_image(data: bytes) -> ImageBuffer:
    magic, pos = _next_token(data, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise ParseError(f"not a P5/P6 file (magic {magic[:8]!r})")
    dims = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_token(data, pos)
        try:
            value = int(token)
        except ValueError:
            raise ParseError(f"bad {name} token {token[:16]!r}") from None
        dims.append(value)
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise ParseError(f"non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval} not supported (only 255)")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval")
    pos += 1
    payload = data[pos:]
    expected = width * height * channels
    if len(payload) < expected:
        raise ParseError(f"payload truncated: {len(payload)} < {expected} bytes")
    if len(payload) > expected:
        raise ParseError(f"{len(payload) - expected} trailing bytes after payload")
    return ImageBuffer(width, height, channels, bytes(payload))


def write_image(img: ImageBuffer, path) -> None:
    """Write P6 for 3-channel buffers, P5 for single-channel."""
    try:
        with open(path, "wb") as f:
            f.write(encode_image(img))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def encode_image(img: ImageBuffer) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    return magic + b"\n%d %d\n255\n" % (img.width, img.height) + img.pixels


def image_from_array(arr: np.ndarray) -> ImageBuffer:
    """uint8 (H, W) or (H, W, C) array -> ImageBuffer."""
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    return ImageBuffer(w, h, c, np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


# ------------------------------------------------------------------- datasets

_CLASS_DIRS = (("negative", Label.NEGATIVE), ("positive", Label.POSITIVE))


def load_dataset_dir(root_path) -> list[LabeledSample]:
    """Load a directory-per-class dataset (``positive/``, ``negative/``).

    Files are ordered lexicographically by relative path; unreadable images
    are skipped with a logged warning count.
    """
    root = os.fspath(root_path)
    for name, _ in _CLASS_DIRS:
        if not os.path.isdir(os.path.join(root, name)):
            raise MissingClassDir(f"{root} lacks a {name}/ directory")
    samples: list[LabeledSample] = []
    skipped = 0
    for name, label in _CLASS_DIRS:
        class_dir = os.path.join(root, name)
        for fname in sorted(os.listdir(class_dir)):
            fpath = os.path.join(class_dir, fname)
            if not os.path.isfile(fpath):
                continue
            try:
                img = read_image(fpath)
            except ParseError as e:
                skipped += 1
                log.warning("skipping %s: %s", fpath, e)
                continue
            samples.append(LabeledSample(img, label, fpath))
    if skipped:
        log.warning("%d file(s) skipped while loading %s", skipped, root)
    return samples
