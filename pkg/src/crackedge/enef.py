"""ENEF: the single-file binary container the device side executes from.

Layout (all integers little-endian; full byte map in docs/enef-format.md):

    header     magic "ENEF", version u16, flags u16, section count u16,
               reserved u16, directory offset u32                 (16 bytes)
    directory  per section: kind u32, offset u32, length u32      (12 bytes)
    sections   each one 8-byte aligned, zero padding in the gaps
    trailer    CRC-32 (IEEE, zlib) of every preceding byte         (4 bytes)

Sections: 1 topology (the model-io JSON descriptor, UTF-8), 2 activation
qparams, 3 weight qparams, 4 int8 weight payloads, 5 int32 bias payloads,
6 requant multipliers, 7 metadata JSON. Tables are sorted by id, so packing
the same model always produces identical bytes.

unpack() is total: any byte string yields either a QuantizedModel or one of
the typed EnefError subclasses, never a crash.
"""

from __future__ import annotations

import json
import struct
import zlib

from .errors import (
    BadMagic,
    ChecksumMismatch,
    CrackEdgeError,
    InvariantViolation,
    MalformedTable,
    TruncatedSection,
    UnsupportedVersion,
)
from .graph import DataType, ModelGraph, OpKind, TensorSpec
from .model_io import graph_to_descriptor, parse_descriptor
from .optimize import QuantizedModel, QuantParams, RequantMultiplier

import numpy as np

MAGIC = b"ENEF"
VERSION = 1

SEC_TOPOLOGY = 1
SEC_ACT_QPARAMS = 2
SEC_WEIGHT_QPARAMS = 3
SEC_WEIGHTS = 4
SEC_BIASES = 5
SEC_REQUANT = 6
SEC_METADATA = 7

_ALL_SECTIONS = (
    SEC_TOPOLOGY, SEC_ACT_QPARAMS, SEC_WEIGHT_QPARAMS,
    SEC_WEIGHTS, SEC_BIASES, SEC_REQUANT, SEC_METADATA,
)

#: Largest zero-point-corrected int8 product: |q - zp| <= 255, |w| <= 127.
_MAX_PRODUCT = 255 * 127


def _check_accumulators(qm: QuantizedModel) -> None:
    """Packing refuses models whose int32 accumulators could overflow."""
    for node in qm.graph.nodes:
        if node.kind not in (OpKind.CONV2D, OpKind.DENSE):
            continue
        w = qm.weight_q[node.weight_id]
        k = int(np.prod(w.shape[1:]))  # MACs per output element
        bias_mag = int(np.max(np.abs(qm.bias_q[node.bias_id].astype(np.int64))))
        worst = k * _MAX_PRODUCT + bias_mag
        if worst >= 2 ** 31:
            raise InvariantViolation(
                f"{node.id}: worst-case accumulator {worst} >= 2^31"
            )


# -------------------------------------------------------------------- packing


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvariantViolation(f"id too long to serialize ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def _pack_qparams_table(table: dict[str, QuantParams]) -> bytes:
    out = [struct.pack("<I", len(table))]
    for tid in sorted(table):
        p = table[tid]
        out.append(_pack_str(tid))
        out.append(struct.pack("<di", p.scale, p.zero_point))
    return b"".join(out)


def _pack_array_table(table: dict[str, np.ndarray], dtype) -> bytes:
    out = [struct.pack("<I", len(table))]
    for tid in sorted(table):
        arr = np.ascontiguousarray(table[tid], dtype=dtype)
        out.append(_pack_str(tid))
        out.append(struct.pack("<I", arr.size))
        out.append(arr.tobytes())
    return b"".join(out)


def _pack_requant_table(table: dict[str, RequantMultiplier]) -> bytes:
    out = [struct.pack("<I", len(table))]
    for nid in sorted(table):
        r = table[nid]
        out.append(_pack_str(nid))
        out.append(struct.pack("<Ii", r.m0, r.shift))
    return b"".join(out)


def pack(qm: QuantizedModel, metadata: dict | None = None) -> bytes:
    """Serialize a QuantizedModel; deterministic, unpack() inverts exactly."""
    try:
        qm.check_invariants()
    except ValueError as e:
        raise InvariantViolation(str(e)) from None
    _check_accumulators(qm)

    meta = {"model": qm.graph.name, "profile": ""}
    if metadata:
        meta.update(metadata)
    topo = json.dumps(graph_to_descriptor(qm.graph), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    sections = [
        (SEC_TOPOLOGY, topo),
        (SEC_ACT_QPARAMS, _pack_qparams_table(qm.act_qparams)),
        (SEC_WEIGHT_QPARAMS, _pack_qparams_table(qm.weight_qparams)),
        (SEC_WEIGHTS, _pack_array_table(qm.weight_q, np.int8)),
        (SEC_BIASES, _pack_array_table(qm.bias_q, "<i4")),
        (SEC_REQUANT, _pack_requant_table(qm.requant)),
        (SEC_METADATA, json.dumps(meta, sort_keys=True,
                                  separators=(",", ":")).encode("utf-8")),
    ]

    dir_offset = 16
    body_start = dir_offset + 12 * len(sections)
    blob = bytearray()
    blob += struct.pack("<4sHHHHI", MAGIC, VERSION, 0, len(sections), 0, dir_offset)
    directory = bytearray()
    payload = bytearray()
    cursor = body_start
    for kind, data in sections:
        pad = (-cursor) % 8
        payload += b"\x00" * pad
        cursor += pad
        directory += struct.pack("<III", kind, cursor, len(data))
        payload += data
        cursor += len(data)
    blob += directory
    blob += payload
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    return bytes(blob)


# ------------------------------------------------------------------ unpacking


class _Cursor:
    """Bounds-checked little reader over one section's bytes."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedTable(f"{self.what}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def take_str(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedTable(f"{self.what}: id is not valid UTF-8") from None

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedTable(
                f"{self.what}: {len(self.data) - self.pos} trailing bytes"
            )


def _read_qparams_table(data: bytes, what: str) -> dict[str, QuantParams]:
    cur = _Cursor(data, what)
    (count,) = cur.unpack("<I")
    table = {}
    for _ in range(count):
        tid = cur.take_str()
        scale, zp = cur.unpack("<di")
        if tid in table:
            raise MalformedTable(f"{what}: duplicate id {tid!r}")
        try:
            table[tid] = QuantParams(scale=scale, zero_point=zp)
        except ValueError as e:
            raise MalformedTable(f"{what}[{tid!r}]: {e}") from None
    cur.done()
    return table


def _read_array_table(data: bytes, what: str, dtype, itemsize: int):
    cur = _Cursor(data, what)
    (count,) = cur.unpack("<I")
    table = {}
    for _ in range(count):
        tid = cur.take_str()
        (n,) = cur.unpack("<I")
        raw = cur.take(n * itemsize)
        if tid in table:
            raise MalformedTable(f"{what}: duplicate id {tid!r}")
        table[tid] = np.frombuffer(raw, dtype=dtype).copy()
    cur.done()
    return table


def _read_requant_table(data: bytes, what: str) -> dict[str, RequantMultiplier]:
    cur = _Cursor(data, what)
    (count,) = cur.unpack("<I")
    table = {}
    for _ in range(count):
        nid = cur.take_str()
        m0, shift = cur.unpack("<Ii")
        if nid in table:
            raise MalformedTable(f"{what}: duplicate id {nid!r}")
        try:
            table[nid] = RequantMultiplier(m0=m0, shift=shift)
        except ValueError as e:
            raise MalformedTable(f"{what}[{nid!r}]: {e}") from None
    cur.done()
    return table


def _rebuild_graph(topo_bytes: bytes) -> ModelGraph:
    try:
        doc = json.loads(topo_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedTable(f"topology: {e}") from None
    try:
        name, inp, nodes, out, tensors, _ = parse_descriptor(doc)
    except CrackEdgeError as e:
        raise MalformedTable(f"topology: {e}") from None

    bias_ids = {n.bias_id for n in nodes if n.bias_id is not None}
    tensors = {
        tid: TensorSpec(tid, spec.shape,
                        DataType.I32 if tid in bias_ids else DataType.I8)
        for tid, spec in tensors.items()
    }
    return ModelGraph(
        name=name,
        input=tensors[inp.id],
        output=TensorSpec(out.id, out.shape, DataType.I8),
        nodes=tuple(nodes),
        weights={},
        tensors=tensors,
    )


def unpack(data: bytes) -> QuantizedModel:
    """Parse archive bytes. Total: typed EnefError on any malformed input."""
    qm, _ = unpack_with_metadata(data)
    return qm


def unpack_with_metadata(data: bytes) -> tuple[QuantizedModel, dict]:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"not an ENEF archive (got {data[:4]!r})")
    if len(data) < 20:
        raise TruncatedSection(f"archive is only {len(data)} bytes")
    version, flags, n_sections, _reserved, dir_offset = struct.unpack(
        "<HHHHI", data[4:16]
    )
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}, this reader handles {VERSION}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumMismatch(
            f"CRC-32 {actual_crc:#010x} != stored {stored_crc:#010x}"
        )

    body = data[:-4]
    dir_end = dir_offset + 12 * n_sections
    if dir_offset < 16 or dir_end > len(body):
        raise TruncatedSection("section directory does not fit in archive")
    found: dict[int, bytes] = {}
    for i in range(n_sections):
        kind, offset, length = struct.unpack(
            "<III", body[dir_offset + 12 * i: dir_offset + 12 * (i + 1)]
        )
        if kind in found:
            raise MalformedTable(f"duplicate section kind {kind}")
        if kind not in _ALL_SECTIONS:
            raise MalformedTable(f"unknown section kind {kind}")
        if offset % 8 != 0:
            raise MalformedTable(f"section {kind} offset {offset} not 8-byte aligned")
        if offset < dir_end or offset + length > len(body):
            raise TruncatedSection(f"section {kind} [{offset}, +{length}) out of range")
        found[kind] = body[offset:offset + length]
    missing = [k for k in _ALL_SECTIONS if k not in found]
    if missing:
        raise MalformedTable(f"missing sections {missing}")

    graph = _rebuild_graph(found[SEC_TOPOLOGY])
    act_qparams = _read_qparams_table(found[SEC_ACT_QPARAMS], "act-qparams")
    weight_qparams = _read_qparams_table(found[SEC_WEIGHT_QPARAMS], "weight-qparams")
    weight_q = _read_array_table(found[SEC_WEIGHTS], "weights", np.int8, 1)
    bias_q = _read_array_table(found[SEC_BIASES], "biases", "<i4", 4)
    requant = _read_requant_table(found[SEC_REQUANT], "requant")
    try:
        meta = json.loads(found[SEC_METADATA].decode("utf-8"))
        if not isinstance(meta, dict):
            raise MalformedTable("metadata: expected a JSON object")
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedTable(f"metadata: {e}") from None

    known_nodes = {n.id for n in graph.nodes}
    for what, ids in (
        ("act-qparams", act_qparams), ("weight-qparams", weight_qparams),
        ("weights", weight_q), ("biases", bias_q),
    ):
        for tid in ids:
            if tid not in graph.tensors:
                raise MalformedTable(f"{what}: id {tid!r} not in topology")
    for nid in requant:
        if nid not in known_nodes:
            raise MalformedTable(f"requant: node {nid!r} not in topology")

    for tid, spec in graph.tensors.items():
        if tid in weight_q:
            if weight_q[tid].size != spec.elems:
                raise MalformedTable(
                    f"weights[{tid!r}]: {weight_q[tid].size} elems, spec says {spec.elems}"
                )
            weight_q[tid] = weight_q[tid].reshape(spec.shape)
        if tid in bias_q and bias_q[tid].size != spec.elems:
            raise MalformedTable(
                f"biases[{tid!r}]: {bias_q[tid].size} elems, spec says {spec.elems}"
            )

    qm = QuantizedModel(
        graph=graph,
        weight_q=weight_q,
        bias_q=bias_q,
        act_qparams=act_qparams,
        weight_qparams=weight_qparams,
        requant=requant,
    )
    try:
        qm.check_invariants()
    except ValueError as e:
        raise MalformedTable(str(e)) from None
    return qm, meta


def write_archive(qm: QuantizedModel, path, metadata: dict | None = None) -> None:
    from .errors import IoError

    blob = pack(qm, metadata)
    try:
        with open(path, "wb") as f:
            f.write(blob)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_archive(path) -> tuple[QuantizedModel, dict]:
    from .errors import IoError

    try:
        data = open(path, "rb").read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    return unpack_with_metadata(data)
