import numpy as np
import pytest

import oracles
from crackedge.errors import (
    EmptyBatch,
    NotDeployable,
    ShapeMismatch,
    WrongChannelCount,
)
from crackedge.graph import build_reference_net
from crackedge.model_io import Label, image_from_array
from crackedge.optimize import (
    QuantParams,
    collect_calibration_stats,
    compute_requant,
    quantize_model,
)
from crackedge.runtime.backend import available_backends, get_kernels
from crackedge.runtime.execution import RawOutput, run_float, run_float_trace, run_quant
from crackedge.runtime.pre_post import (
    postprocess,
    preprocess,
    quant_predictor,
    resize_bilinear,
)
from crackedge.runtime.timing import time_pipeline

BACKENDS = available_backends()


@pytest.fixture(params=BACKENDS)
def backend_kernels(request):
    return get_kernels(request.param)


# ------------------------------------------------------------- float kernels


def test_conv2d_float_matches_oracle(backend_kernels, rng):
    for _ in range(12):
        h = int(rng.integers(3, 9))
        c = int(rng.integers(1, 4))
        out_c = int(rng.integers(1, 4))
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 2]))
        pad_same = bool(rng.random() < 0.5)
        if not pad_same and h < k:
            pad_same = True
        x = rng.standard_normal((h, h, c))
        w = rng.standard_normal((out_c, k, k, c))
        b = rng.standard_normal(out_c)
        got = backend_kernels.conv2d_float(x, w, b, stride, pad_same)
        want = oracles.conv2d_float(x, w, b, stride, "Same" if pad_same else "Valid")
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_maxpool_float_matches_oracle(backend_kernels, rng):
    for _ in range(8):
        h = int(rng.integers(2, 9))
        c = int(rng.integers(1, 4))
        window = int(rng.integers(1, min(h, 3) + 1))
        stride = int(rng.choice([1, 2]))
        x = rng.standard_normal((h, h, c))
        got = backend_kernels.maxpool_float(x, window, stride)
        want = oracles.maxpool_float(x, window, stride)
        np.testing.assert_array_equal(got, want)


def test_dense_float_matches_oracle(backend_kernels, rng):
    for _ in range(8):
        n, m = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        x = rng.standard_normal(m)
        w = rng.standard_normal((n, m))
        b = rng.standard_normal(n)
        got = backend_kernels.dense_float(x, w, b)
        want = oracles.dense_float(x, w, b)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


# ----------------------------------------------------------- integer kernels


def _rand_q(rng, shape):
    return rng.integers(-128, 128, size=shape, dtype=np.int64).astype(np.int8)


def test_conv2d_int8_bit_exact(backend_kernels, rng):
    for _ in range(12):
        h = int(rng.integers(3, 8))
        c = int(rng.integers(1, 4))
        out_c = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        pad_same = bool(rng.random() < 0.5)
        if not pad_same and h < k:
            pad_same = True
        xq = _rand_q(rng, (h, h, c))
        wq = _rand_q(rng, (out_c, k, k, c))
        bq = rng.integers(-50_000, 50_000, size=out_c, dtype=np.int32)
        x_zp = int(rng.integers(-128, 128))
        out_zp = int(rng.integers(-128, 128))
        r = compute_requant(float(rng.uniform(2.0 ** -10, 2.0 ** -2)))
        got = backend_kernels.conv2d_int8(xq, wq, bq, x_zp, r.m0, r.shift, out_zp,
                                          stride, pad_same)
        want = oracles.conv2d_int(xq, wq, bq, x_zp, r.m0, r.shift, out_zp,
                                  stride, "Same" if pad_same else "Valid")
        assert got.dtype == np.int8
        np.testing.assert_array_equal(got, want)


def test_dense_int8_bit_exact(backend_kernels, rng):
    for _ in range(10):
        n, m = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        xq = _rand_q(rng, m)
        wq = _rand_q(rng, (n, m))
        bq = rng.integers(-10_000, 10_000, size=n, dtype=np.int32)
        x_zp = int(rng.integers(-128, 128))
        out_zp = int(rng.integers(-128, 128))
        r = compute_requant(float(rng.uniform(2.0 ** -10, 2.0 ** -2)))
        got = backend_kernels.dense_int8(xq, wq, bq, x_zp, r.m0, r.shift, out_zp)
        want = oracles.dense_int(xq, wq, bq, x_zp, r.m0, r.shift, out_zp)
        np.testing.assert_array_equal(got, want)


def test_maxpool_int8_bit_exact(backend_kernels, rng):
    for _ in range(8):
        h = int(rng.integers(2, 8))
        c = int(rng.integers(1, 4))
        window = int(rng.integers(1, min(h, 3) + 1))
        stride = int(rng.choice([1, 2]))
        xq = _rand_q(rng, (h, h, c))
        got = backend_kernels.maxpool_int8(xq, window, stride)
        want = oracles.maxpool_int(xq, window, stride)
        np.testing.assert_array_equal(got, want)


def test_requant_extreme_shifts(backend_kernels, rng):
    # every legal shift including the ts >= 63 underflow-to-zero branch
    accs = rng.integers(-(2 ** 31) + 1, 2 ** 31, size=64, dtype=np.int64)
    for shift in range(-8, 41):
        m0 = int(rng.integers(2 ** 30, 2 ** 31))
        want = [oracles.requant_scalar(int(a), m0, shift) for a in accs]
        if hasattr(backend_kernels, "requantize_i64"):
            got = backend_kernels.requantize_i64(accs.copy(), m0, shift)
            assert [int(v) for v in got] == want
        if shift >= 32:  # ts = 31 + shift >= 63: everything underflows to 0
            assert all(v == 0 for v in want)


# ------------------------------------------------------------ whole networks


def test_run_float_matches_oracle(rng):
    for _ in range(40):
        g = oracles.random_small_net(rng)
        x = rng.uniform(-1.0, 1.0, size=g.input.shape[1:])
        got = run_float(g, x)
        want = oracles.run_float_graph(g, x)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-5)


def test_run_float_trace_keys(rng):
    g = oracles.random_small_net(rng)
    x = rng.uniform(-1.0, 1.0, size=g.input.shape[1:])
    trace = run_float_trace(g, x)
    assert set(trace) == {"input"} | {n.output for n in g.nodes}
    np.testing.assert_array_equal(trace[g.output.id], run_float(g, x))


def test_run_quant_matches_integer_oracle(rng):
    for _ in range(30):
        g = oracles.random_small_net(rng, softmax=False)
        calib = [rng.uniform(-1.0, 1.0, size=g.input.shape[1:]) for _ in range(2)]
        qm = quantize_model(g, collect_calibration_stats(g, calib))
        x = rng.uniform(-1.0, 1.0, size=g.input.shape[1:])
        got = run_quant(qm, x)
        want = oracles.run_quant_graph(qm, x)
        np.testing.assert_array_equal(got.logits_q, want)
        assert got.qparams == qm.act_qparams[g.output.id]


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
def test_backend_parity(rng):
    ks = [get_kernels(name) for name in BACKENDS]
    for _ in range(15):
        g = oracles.random_small_net(rng, softmax=False)
        calib = [rng.uniform(-1.0, 1.0, size=g.input.shape[1:]) for _ in range(2)]
        qm = quantize_model(g, collect_calibration_stats(g, calib))
        x = rng.uniform(-1.0, 1.0, size=g.input.shape[1:])
        outs_q = [run_quant(qm, x, kernels=k).logits_q for k in ks]
        outs_f = [run_float(g, x, kernels=k) for k in ks]
        np.testing.assert_array_equal(outs_q[0], outs_q[1])  # integers: identical
        np.testing.assert_allclose(outs_f[0], outs_f[1], rtol=1e-12, atol=1e-12)


def test_run_float_shape_mismatch(rng):
    g = oracles.random_small_net(rng)
    with pytest.raises(ShapeMismatch):
        run_float(g, np.zeros((2, 2, 2)))


def test_run_quant_rejects_softmax(rng):
    g = oracles.random_small_net(rng, softmax=True)
    calib = [rng.uniform(-1.0, 1.0, size=g.input.shape[1:]) for _ in range(2)]
    qm = quantize_model(g, collect_calibration_stats(g, calib))
    with pytest.raises(NotDeployable):
        run_quant(qm, rng.uniform(-1, 1, size=g.input.shape[1:]))


# ----------------------------------------------------------------- pre / post


def test_resize_matches_oracle(rng):
    for out_hw in ((4, 4), (7, 5), (224, 224), (3, 9)):
        src = rng.uniform(0, 255, size=(int(rng.integers(2, 12)),
                                        int(rng.integers(2, 12)), 3))
        got = resize_bilinear(src, *out_hw)
        want = oracles.bilinear_resize(src, *out_hw)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_resize_identity():
    rng = np.random.default_rng(3)
    src = rng.uniform(0, 255, size=(16, 16, 3))
    np.testing.assert_array_equal(resize_bilinear(src, 16, 16), src)


def test_preprocess_checkerboard_corners():
    # 2x2 -> 4x4 with half-pixel centers: every corner pixel is preserved
    board = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    arr = np.stack([board] * 3, axis=-1)
    out = resize_bilinear(arr.astype(np.float64), 4, 4)
    assert out[0, 0, 0] == 0 and out[3, 3, 0] == 0
    assert out[0, 3, 0] == 255 and out[3, 0, 0] == 255
    assert 0 < out[1, 1, 0] < 255  # interior is interpolated


def test_preprocess_shapes_and_range(rng):
    arr = rng.integers(0, 256, size=(227, 227, 3), dtype=np.uint8)
    x = preprocess(image_from_array(arr))
    assert x.shape == (224, 224, 3)
    assert x.dtype == np.float32
    assert 0.0 <= float(x.min()) and float(x.max()) <= 1.0


def test_preprocess_identity_size_skips_resize(rng):
    arr = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    x = preprocess(image_from_array(arr))
    np.testing.assert_allclose(x, arr.astype(np.float32) / 255.0, rtol=0, atol=1e-7)


def test_preprocess_rejects_gray():
    img = image_from_array(np.zeros((10, 10), dtype=np.uint8))
    with pytest.raises(WrongChannelCount):
        preprocess(img)


def test_postprocess_picks_positive():
    raw = RawOutput(logits_q=np.array([0, 10], dtype=np.int8),
                    qparams=QuantParams(scale=0.5, zero_point=0))
    probs, label = postprocess(raw)
    assert label is Label.POSITIVE
    assert probs[1] > 0.99
    assert probs.sum() == pytest.approx(1.0)


def test_postprocess_tie_is_negative():
    raw = RawOutput(logits_q=np.array([5, 5], dtype=np.int8),
                    qparams=QuantParams(scale=1.0, zero_point=0))
    probs, label = postprocess(raw)
    assert label is Label.NEGATIVE
    assert probs[0] == pytest.approx(0.5)


# --------------------------------------------------------------------- timing


def _tiny_qm(rng):
    g = oracles.random_small_net(rng, softmax=False)
    calib = [rng.uniform(0, 1, size=g.input.shape[1:]) for _ in range(2)]
    return quantize_model(g, collect_calibration_stats(g, calib))


def _images(rng, n):
    return [image_from_array(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
            for _ in range(n)]


def test_time_pipeline_counts(rng):
    g = build_reference_net([8, 8, 16, 16, 32, 32], 64)
    from crackedge.compat import default_kl520_profile, strip_unsupported_head
    g, _ = strip_unsupported_head(g, default_kl520_profile())
    calib = [rng.uniform(0, 1, size=(224, 224, 3))]
    qm = quantize_model(g, collect_calibration_stats(g, calib))
    stats = time_pipeline(qm, _images(rng, 5), warmup=2)
    assert stats.n == 3
    assert stats.min_ms <= stats.p50_ms <= stats.p95_ms <= stats.max_ms
    assert stats.mean_ms > 0
    # per-image total is the sum of the three stages, so means must add up
    assert stats.mean_ms == pytest.approx(
        stats.pre_ms + stats.infer_ms + stats.post_ms, rel=1e-9
    )
    d = stats.as_dict()
    assert set(d) == {"n", "mean_ms", "p50_ms", "p95_ms", "pre_ms", "infer_ms", "post_ms"}


def test_time_pipeline_empty_batch(rng):
    g = build_reference_net([8, 8, 16, 16, 32, 32], 64)
    from crackedge.compat import default_kl520_profile, strip_unsupported_head
    g, _ = strip_unsupported_head(g, default_kl520_profile())
    calib = [rng.uniform(0, 1, size=(224, 224, 3))]
    qm = quantize_model(g, collect_calibration_stats(g, calib))
    with pytest.raises(EmptyBatch):
        time_pipeline(qm, _images(rng, 2), warmup=2)
    with pytest.raises(EmptyBatch):
        time_pipeline(qm, [], warmup=0)


def test_quant_predictor_end_to_end(rng):
    g = build_reference_net([8, 8, 16, 16, 32, 32], 64)
    from crackedge.compat import default_kl520_profile, strip_unsupported_head
    g, _ = strip_unsupported_head(g, default_kl520_profile())
    calib = [rng.uniform(0, 1, size=(224, 224, 3))]
    qm = quantize_model(g, collect_calibration_stats(g, calib))
    probs, label = quant_predictor(qm)(_images(rng, 1)[0])
    assert probs.shape == (2,)
    assert label in (Label.NEGATIVE, Label.POSITIVE)


# ------------------------------------------------------------------- backends


def test_available_backends_always_has_numpy():
    assert "numpy" in BACKENDS


def test_get_kernels_unknown():
    with pytest.raises(ValueError):
        get_kernels("fortran")


def test_get_kernels_env_override(monkeypatch):
    monkeypatch.setenv("CRACKEDGE_KERNELS", "numpy")
    assert get_kernels().BACKEND_NAME == "numpy"


def test_get_kernels_explicit_names():
    for name in BACKENDS:
        assert get_kernels(name).BACKEND_NAME == name
