import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from crackedge.errors import InvalidArity, NonPositiveDim, ShapeMismatch
from crackedge.graph import (
    ModelGraph,
    NodeSpec,
    OpKind,
    Padding,
    TensorSpec,
    ViolationCode,
    build_reference_net,
    conv_out_hw,
    forward_spec,
    infer_shapes,
    make_params,
    validate_graph,
)

CHANNELS = [8, 8, 16, 16, 32, 32]


def test_reference_net_spatial_trace():
    g = build_reference_net(CHANNELS, 64)
    trace = [g.tensors[f"pool{i}.out"].shape[1] for i in range(1, 7)]
    assert g.input.shape == (1, 224, 224, 3)
    assert trace == [112, 56, 28, 14, 7, 3]
    assert g.tensors["flatten.out"].shape == (3 * 3 * 32,)
    assert g.tensors["fc1.out"].shape == (64,)
    assert g.output.shape == (2,)
    assert g.output.id == "softmax.out"


def test_reference_net_structure():
    g = build_reference_net(CHANNELS, 64)
    kinds = [n.kind for n in g.nodes]
    assert kinds.count(OpKind.CONV2D) == 6
    assert kinds.count(OpKind.MAXPOOL2D) == 6
    assert kinds.count(OpKind.DENSE) == 2
    assert kinds[-1] is OpKind.SOFTMAX
    assert g.weights["conv1.w"].shape == (8, 3, 3, 3)
    assert g.weights["fc2.w"].shape == (2, 64)
    assert validate_graph(g) == []


def test_reference_net_bad_arity():
    with pytest.raises(InvalidArity):
        build_reference_net([8, 8, 16], 64)
    with pytest.raises(InvalidArity):
        build_reference_net(CHANNELS, 0)


@pytest.mark.parametrize("in_hw,k,s,expected", [
    (224, 3, 1, 224),  # Same keeps size at stride 1
    (224, 3, 2, 112),
    (7, 2, 2, 4),      # Same: ceil(7/2)
    (5, 3, 1, 5),
])
def test_conv_out_hw_same(in_hw, k, s, expected):
    assert conv_out_hw(in_hw, k, s, Padding.SAME) == expected


@pytest.mark.parametrize("in_hw,k,s,expected", [
    (224, 2, 2, 112),
    (7, 2, 2, 3),      # Valid: floor((7-2)/2)+1
    (5, 3, 1, 3),
    (3, 3, 1, 1),
])
def test_conv_out_hw_valid(in_hw, k, s, expected):
    assert conv_out_hw(in_hw, k, s, Padding.VALID) == expected


def test_conv_out_hw_collapse():
    with pytest.raises(NonPositiveDim):
        conv_out_hw(2, 3, 1, Padding.VALID)


@given(st.integers(1, 512), st.integers(1, 7), st.integers(1, 4))
def test_conv_out_hw_same_is_ceil_div(h, k, s):
    assert conv_out_hw(h, k, s, Padding.SAME) == -(-h // s)


def _conv_node(stride=1, padding="Same"):
    return NodeSpec("c", OpKind.CONV2D, ("x", "w", "b"), "c.out",
                    make_params(stride=stride, padding=padding))


def test_forward_spec_channel_mismatch():
    node = _conv_node()
    in_spec = TensorSpec("x", (1, 8, 8, 3))
    w = TensorSpec("w", (4, 3, 3, 2))  # inC 2 != 3
    b = TensorSpec("b", (4,))
    with pytest.raises(ShapeMismatch):
        forward_spec(node, in_spec, w, b)


def test_forward_spec_bias_mismatch():
    node = _conv_node()
    in_spec = TensorSpec("x", (1, 8, 8, 3))
    w = TensorSpec("w", (4, 3, 3, 3))
    b = TensorSpec("b", (5,))
    with pytest.raises(ShapeMismatch):
        forward_spec(node, in_spec, w, b)


def test_forward_spec_dense_wants_rank1():
    node = NodeSpec("d", OpKind.DENSE, ("x", "w", "b"), "d.out")
    in_spec = TensorSpec("x", (1, 2, 2, 3))
    w = TensorSpec("w", (4, 12))
    b = TensorSpec("b", (4,))
    with pytest.raises(ShapeMismatch):
        forward_spec(node, in_spec, w, b)


def test_forward_spec_flatten():
    node = NodeSpec("f", OpKind.FLATTEN, ("x",), "f.out")
    out = forward_spec(node, TensorSpec("x", (1, 3, 3, 32)), None, None)
    assert out.shape == (288,)
    # flatten of an already-flat tensor is the identity
    out = forward_spec(node, TensorSpec("x", (17,)), None, None)
    assert out.shape == (17,)


def test_infer_shapes_idempotent(rng):
    for _ in range(25):
        g = oracles.random_small_net(rng)
        again = infer_shapes(g)
        assert again == g
        assert infer_shapes(again) == again


def test_infer_shapes_undefined_input():
    inp = TensorSpec("input", (4,))
    node = NodeSpec("r", OpKind.RELU, ("ghost",), "r.out")
    g = ModelGraph("bad", inp, TensorSpec("r.out", (4,)), (node,))
    with pytest.raises(ShapeMismatch):
        infer_shapes(g)


def test_infer_shapes_rejects_bad_input_dim():
    inp = TensorSpec("input", (0,))
    g = ModelGraph("bad", inp, inp, ())
    with pytest.raises(NonPositiveDim):
        infer_shapes(g)


def _tiny_dense_graph():
    inp = TensorSpec("input", (3,))
    w = TensorSpec("d.w", (2, 3))
    b = TensorSpec("d.b", (2,))
    node = NodeSpec("d", OpKind.DENSE, ("input", "d.w", "d.b"), "d.out")
    return ModelGraph(
        "tiny", inp, TensorSpec("d.out", (2,)), (node,),
        weights={"d.w": np.zeros((2, 3), np.float32), "d.b": np.zeros(2, np.float32)},
        tensors={"input": inp, "d.w": w, "d.b": b},
    )


def test_validate_graph_clean():
    assert validate_graph(_tiny_dense_graph()) == []


def test_validate_duplicate_node_id():
    g = _tiny_dense_graph()
    dup = ModelGraph(g.name, g.input, g.output,
                     (g.nodes[0], g.nodes[0]), dict(g.weights), dict(g.tensors))
    codes = [v.code for v in validate_graph(dup)]
    assert ViolationCode.DUPLICATE_ID in codes


def test_validate_missing_tensor():
    inp = TensorSpec("input", (3,))
    node = NodeSpec("r", OpKind.RELU, ("later.out",), "r.out")
    later = NodeSpec("later", OpKind.RELU, ("input",), "later.out")
    g = ModelGraph("order", inp, TensorSpec("later.out", (3,)), (node, later))
    violations = validate_graph(g)
    assert [v.code for v in violations] == [ViolationCode.MISSING_TENSOR]
    assert violations[0].node_id == "r"


def test_validate_weight_size_mismatch():
    g = _tiny_dense_graph()
    bad = dict(g.weights)
    bad["d.w"] = np.zeros((2, 4), np.float32)  # spec says (2, 3)
    g2 = ModelGraph(g.name, g.input, g.output, g.nodes, bad, dict(g.tensors))
    codes = [v.code for v in validate_graph(g2)]
    assert ViolationCode.SHAPE_MISMATCH in codes


def test_model_graph_weights_become_float32_readonly():
    g = _tiny_dense_graph()
    assert g.weights["d.w"].dtype == np.float32
    with pytest.raises(ValueError):
        g.weights["d.w"][0, 0] = 1.0


def test_with_weights_replaces_and_preserves():
    g = _tiny_dense_graph()
    new_w = np.ones((2, 3), np.float32)
    g2 = g.with_weights({"d.w": new_w})
    assert np.array_equal(g2.weights["d.w"], new_w)
    assert np.array_equal(g.weights["d.w"], np.zeros((2, 3)))  # original untouched
    with pytest.raises(KeyError):
        g.with_weights({"nope": new_w})


def test_make_params_sorted_and_lookup():
    p = make_params(stride=2, padding="Same")
    assert p == (("padding", "Same"), ("stride", 2))
    node = NodeSpec("c", OpKind.CONV2D, ("x", "w", "b"), "c.out", p)
    assert node.param("stride") == 2
    assert node.param("missing", 7) == 7


def test_tensor_spec_helpers():
    t = TensorSpec("t", (1, 4, 4, 2))
    assert t.rank == 4
    assert t.elems == 32
    assert TensorSpec("s", (5,)).elems == 5
