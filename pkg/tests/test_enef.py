import os
import struct
import zlib

import numpy as np
import pytest

import oracles
from crackedge import enef
from crackedge.errors import (
    BadMagic,
    ChecksumMismatch,
    EnefError,
    InvariantViolation,
    IoError,
    MalformedTable,
    TruncatedSection,
    UnsupportedVersion,
)
from crackedge.graph import (
    DataType,
    ModelGraph,
    NodeSpec,
    OpKind,
    TensorSpec,
    infer_shapes,
    make_params,
)
from crackedge.optimize import (
    QuantizedModel,
    QuantParams,
    RequantMultiplier,
    collect_calibration_stats,
    quantize_model,
)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
GOLDEN = os.path.join(DATA_DIR, "tiny.enef")


def build_golden_model() -> QuantizedModel:
    """Small deterministic conv net; the source of tests/data/tiny.enef."""
    inp = TensorSpec("input", (1, 6, 6, 1))
    nodes = (
        NodeSpec("conv", OpKind.CONV2D, ("input", "conv.w", "conv.b"), "conv.out",
                 make_params(stride=2, padding="Same")),
        NodeSpec("relu", OpKind.RELU, ("conv.out",), "relu.out"),
        NodeSpec("flatten", OpKind.FLATTEN, ("relu.out",), "flatten.out"),
        NodeSpec("fc", OpKind.DENSE, ("flatten.out", "fc.w", "fc.b"), "fc.out"),
    )
    conv_w = (np.arange(18, dtype=np.float32).reshape(2, 3, 3, 1) - 8.0) / 16.0
    fc_w = (np.arange(36, dtype=np.float32).reshape(2, 18) - 17.0) / 40.0
    g = ModelGraph(
        "tiny-golden", inp, TensorSpec("fc.out", (2,)), nodes,
        weights={
            "conv.w": conv_w,
            "conv.b": np.array([0.125, -0.25], np.float32),
            "fc.w": fc_w,
            "fc.b": np.array([0.0, 0.5], np.float32),
        },
        tensors={
            "input": inp,
            "conv.w": TensorSpec("conv.w", (2, 3, 3, 1)),
            "conv.b": TensorSpec("conv.b", (2,)),
            "fc.w": TensorSpec("fc.w", (2, 18)),
            "fc.b": TensorSpec("fc.b", (2,)),
        },
    )
    g = infer_shapes(g)
    xs = [
        np.linspace(0.0, 1.0, 36).reshape(6, 6, 1),
        np.linspace(-0.5, 0.5, 36).reshape(6, 6, 1)[::-1].copy(),
    ]
    return quantize_model(g, collect_calibration_stats(g, xs))


def _qm_equal(a: QuantizedModel, b: QuantizedModel) -> bool:
    if a.graph != b.graph:
        return False
    if a.act_qparams != b.act_qparams or a.weight_qparams != b.weight_qparams:
        return False
    if a.requant != b.requant:
        return False
    for mine, theirs in ((a.weight_q, b.weight_q), (a.bias_q, b.bias_q)):
        if set(mine) != set(theirs):
            return False
        if any(mine[k].tobytes() != theirs[k].tobytes() for k in mine):
            return False
    return True


def _patched(data: bytes, offset: int, new: bytes) -> bytes:
    """Byte-surgery helper that re-signs the CRC trailer."""
    body = bytearray(data[:-4])
    body[offset:offset + len(new)] = new
    return bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)


def test_roundtrip_golden_model():
    qm = build_golden_model()
    qm2, meta = enef.unpack_with_metadata(enef.pack(qm))
    assert _qm_equal(qm, qm2)
    assert meta == {"model": "tiny-golden", "profile": ""}


def test_roundtrip_random_models(rng):
    for _ in range(10):
        g = oracles.random_small_net(rng, softmax=False)
        calib = [rng.uniform(-1, 1, size=g.input.shape[1:]) for _ in range(2)]
        qm = quantize_model(g, collect_calibration_stats(g, calib))
        assert _qm_equal(qm, enef.unpack(enef.pack(qm)))


def test_roundtrip_preserves_quant_outputs(rng):
    # the unpacked model computes bit-identical logits
    g = oracles.random_small_net(rng, softmax=False)
    calib = [rng.uniform(-1, 1, size=g.input.shape[1:]) for _ in range(2)]
    qm = quantize_model(g, collect_calibration_stats(g, calib))
    qm2 = enef.unpack(enef.pack(qm))
    from crackedge.runtime.execution import run_quant
    x = rng.uniform(-1, 1, size=g.input.shape[1:])
    np.testing.assert_array_equal(
        run_quant(qm, x).logits_q, run_quant(qm2, x).logits_q
    )


def test_pack_deterministic():
    a = enef.pack(build_golden_model())
    b = enef.pack(build_golden_model())
    assert a == b


def test_pack_ignores_dict_insertion_order():
    qm = build_golden_model()
    scrambled = QuantizedModel(
        graph=qm.graph,
        weight_q=dict(reversed(list(qm.weight_q.items()))),
        bias_q=dict(reversed(list(qm.bias_q.items()))),
        act_qparams=dict(reversed(list(qm.act_qparams.items()))),
        weight_qparams=dict(reversed(list(qm.weight_qparams.items()))),
        requant=dict(reversed(list(qm.requant.items()))),
    )
    assert enef.pack(scrambled) == enef.pack(qm)


def test_metadata_roundtrip():
    qm = build_golden_model()
    blob = enef.pack(qm, {"profile": "kl520", "note": "hello"})
    _, meta = enef.unpack_with_metadata(blob)
    assert meta == {"model": "tiny-golden", "profile": "kl520", "note": "hello"}


def test_golden_file_bytes():
    # format freeze: packing the fixed model reproduces the committed archive
    with open(GOLDEN, "rb") as f:
        want = f.read()
    assert enef.pack(build_golden_model()) == want
    assert _qm_equal(enef.unpack(want), build_golden_model())


def test_golden_file_layout():
    data = open(GOLDEN, "rb").read()
    magic, version, flags, n_sections, reserved, dir_offset = struct.unpack(
        "<4sHHHHI", data[:16]
    )
    assert magic == b"ENEF"
    assert (version, flags, reserved) == (1, 0, 0)
    assert n_sections == 7
    assert dir_offset == 16
    (crc,) = struct.unpack("<I", data[-4:])
    assert crc == zlib.crc32(data[:-4]) & 0xFFFFFFFF
    kinds = []
    for i in range(n_sections):
        kind, offset, length = struct.unpack(
            "<III", data[16 + 12 * i: 28 + 12 * i]
        )
        assert offset % 8 == 0
        kinds.append(kind)
    assert kinds == [1, 2, 3, 4, 5, 6, 7]


# --------------------------------------------------------------- error paths


def test_bad_magic():
    with pytest.raises(BadMagic):
        enef.unpack(b"\x89PNG\r\n\x1a\n")
    with pytest.raises(BadMagic):
        enef.unpack(b"")


def test_truncated_header():
    blob = enef.pack(build_golden_model())
    with pytest.raises(TruncatedSection):
        enef.unpack(blob[:12])


def test_checksum_mismatch():
    blob = bytearray(enef.pack(build_golden_model()))
    blob[60] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        enef.unpack(bytes(blob))


def test_unsupported_version():
    blob = enef.pack(build_golden_model())
    with pytest.raises(UnsupportedVersion):
        enef.unpack(_patched(blob, 4, struct.pack("<H", 2)))


def test_unknown_section_kind():
    blob = enef.pack(build_golden_model())
    with pytest.raises(MalformedTable):
        enef.unpack(_patched(blob, 16, struct.pack("<I", 99)))


def test_duplicate_section_kind():
    blob = enef.pack(build_golden_model())
    # make the second directory entry claim kind 1 as well
    with pytest.raises(MalformedTable):
        enef.unpack(_patched(blob, 28, struct.pack("<I", 1)))


def test_misaligned_section():
    blob = enef.pack(build_golden_model())
    kind, offset, length = struct.unpack("<III", blob[16:28])
    with pytest.raises(MalformedTable):
        enef.unpack(_patched(blob, 20, struct.pack("<I", offset + 1)))


def test_section_out_of_range():
    blob = enef.pack(build_golden_model())
    with pytest.raises(TruncatedSection):
        enef.unpack(_patched(blob, 24, struct.pack("<I", 2 ** 30)))


def test_stray_table_id_rejected():
    qm = build_golden_model()
    qm.act_qparams["ghost"] = QuantParams(scale=1.0, zero_point=0)
    blob = enef.pack(qm)  # structurally fine, semantically stray
    with pytest.raises(MalformedTable):
        enef.unpack(blob)


def test_requant_for_unknown_node_rejected():
    qm = build_golden_model()
    qm.requant["phantom"] = RequantMultiplier(m0=2 ** 30, shift=0)
    with pytest.raises(MalformedTable):
        enef.unpack(enef.pack(qm))


def test_pack_refuses_incomplete_model():
    qm = build_golden_model()
    del qm.requant["conv"]
    with pytest.raises(InvariantViolation):
        enef.pack(qm)


def test_pack_refuses_accumulator_overflow():
    # 66400 MACs x 32385 worst-case product overflows a signed 32-bit acc
    n = 66400
    inp = TensorSpec("input", (n,), DataType.I8)
    out = TensorSpec("d.out", (2,), DataType.I8)
    node = NodeSpec("d", OpKind.DENSE, ("input", "d.w", "d.b"), "d.out")
    graph = ModelGraph(
        "overflow", inp, out, (node,), weights={},
        tensors={
            "input": inp, "d.out": out,
            "d.w": TensorSpec("d.w", (2, n), DataType.I8),
            "d.b": TensorSpec("d.b", (2,), DataType.I32),
        },
    )
    qp = QuantParams(scale=1.0, zero_point=0)
    qm = QuantizedModel(
        graph=graph,
        weight_q={"d.w": np.zeros((2, n), np.int8)},
        bias_q={"d.b": np.zeros(2, np.int32)},
        act_qparams={"input": qp, "d.out": qp},
        weight_qparams={"d.w": qp},
        requant={"d": RequantMultiplier(m0=2 ** 30, shift=0)},
    )
    qm.check_invariants()  # the model itself is well-formed
    with pytest.raises(InvariantViolation):
        enef.pack(qm)


def test_unpack_total_on_fuzz(rng):
    blob = enef.pack(build_golden_model())
    for _ in range(500):
        n = int(rng.integers(0, 300))
        data = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
        try:
            enef.unpack(data)
        except EnefError:
            pass
    for _ in range(500):
        mutated = bytearray(blob)
        for _ in range(int(rng.integers(1, 4))):
            mutated[int(rng.integers(0, len(blob)))] = int(rng.integers(0, 256))
        try:
            enef.unpack(bytes(mutated))
        except EnefError:
            pass


# -------------------------------------------------------------------- archive


def test_write_read_archive(tmp_path):
    qm = build_golden_model()
    path = tmp_path / "m.enef"
    enef.write_archive(qm, path, {"profile": "kl520"})
    qm2, meta = enef.read_archive(path)
    assert _qm_equal(qm, qm2)
    assert meta["profile"] == "kl520"


def test_read_archive_missing_file(tmp_path):
    with pytest.raises(IoError):
        enef.read_archive(tmp_path / "nope.enef")


if __name__ == "__main__":
    # regenerate the golden archive after a deliberate format change
    os.makedirs(DATA_DIR, exist_ok=True)
    with open(GOLDEN, "wb") as f:
        f.write(enef.pack(build_golden_model()))
    print(f"wrote {GOLDEN} ({os.path.getsize(GOLDEN)} bytes)")
