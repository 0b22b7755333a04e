import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from capcompress import nn
from capcompress.caption import sample_generator
from capcompress.errors import AccumulatorOverflowError, DomainError, ShapeError
from capcompress.quant import (MinMaxObserver, QuantizedTensor, QuantParams, calibrate,
                               compute_params_asymmetric, compute_params_symmetric, dequantize,
                               fake_quant_backward, fake_quant_forward, qmatmul, quantize)

from helpers import tiny_model

F32_01 = np.float32(0.1)


def per_tensor(scale, zp=0, symmetric=None):
    if symmetric is None:
        symmetric = zp == 0
    return QuantParams([scale], [zp], None, symmetric)


def test_symmetric_params_examples():
    p = compute_params_symmetric(np.array([1.0, -12.7, 3.0]))
    assert p.scale[0] == F32_01 and p.zero_point[0] == 0
    z = compute_params_symmetric(np.zeros(5))
    assert z.scale[0] == 1.0 and z.zero_point[0] == 0
    w = np.array([[1.0, -2.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.0], [-6.35, 1.0, 2.0, 3.0]])
    pa = compute_params_symmetric(w, axis=0)
    assert pa.slices == 3
    assert pa.scale[1] == 1.0
    for s, m in zip(pa.scale, [2.0, None, 6.35]):
        if m is not None:
            # smallest float32 at or above max|w| / 127
            assert float(s) >= m / 127 and float(np.nextafter(s, np.float32(0))) < m / 127


def test_asymmetric_params_examples():
    p = compute_params_asymmetric(0.0, 25.5)
    assert p.scale[0] == F32_01 and p.zero_point[0] == -128
    d = compute_params_asymmetric(0.0, 0.0)
    assert d.scale[0] == 1.0
    assert dequantize(QuantizedTensor(np.array([d.zero_point[0]], np.int8), d))[0] == 0.0
    pm = compute_params_asymmetric(-1.0, 1.0)
    assert abs(pm.scale[0] - 2 / 255) < 1e-8
    assert quantize(np.array([0.0]), pm).values[0] == pm.zero_point[0]
    with pytest.raises(DomainError):
        compute_params_asymmetric(1.0, -1.0)


def test_quantize_examples():
    p = per_tensor(0.1)
    assert quantize(np.array([1e9]), p).values[0] == 127
    assert quantize(np.array([-1e9]), p).values[0] == -127
    assert quantize(np.array([0.0]), per_tensor(0.37, -5, False)).values[0] == -5
    # half-way cases round away from zero; these operands are exact in binary
    q = quantize(np.array([6.375, -6.375, 0.125]), per_tensor(0.25))
    assert q.values.tolist() == [26, -26, 1]
    # 6.35 / 0.1 is not a tie in binary: float32(6.35) lies just below 63.5 steps
    assert quantize(np.array([6.35], np.float32), p).values[0] == 63


def test_dequantize_examples():
    p = per_tensor(0.1)
    assert dequantize(QuantizedTensor(np.array([0], np.int8), p))[0] == 0.0
    assert dequantize(QuantizedTensor(np.array([64], np.int8), p))[0] == pytest.approx(6.4, rel=1e-7)
    a = per_tensor(0.05, 17, False)
    assert dequantize(QuantizedTensor(np.array([17], np.int8), a))[0] == 0.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, st.integers(1, 60),
              elements=st.floats(-1e4, 1e4, width=32, allow_nan=False)),
       st.booleans())
def test_round_trip_bound_property(x, symmetric):
    if symmetric:
        p = compute_params_symmetric(x)
    else:
        p = compute_params_asymmetric(float(x.min()), float(x.max()))
    err = np.abs(dequantize(quantize(x, p)) - x.astype(np.float64))
    assert np.all(err <= np.float64(p.scale[0]) / 2)


def test_per_axis_round_trip(rng):
    w = (rng.standard_normal((7, 11)) * rng.random((7, 1)) * 10).astype(np.float32)
    for axis in (0, 1):
        p = compute_params_symmetric(w, axis=axis)
        q = quantize(w, p)
        scale = np.expand_dims(p.scale.astype(np.float64), 1 - axis)
        assert np.all(np.abs(dequantize(q) - w) <= scale / 2)
    with pytest.raises(ShapeError):
        quantize(w, compute_params_symmetric(w.T, axis=0))


def test_qmatmul_hand_case():
    a = QuantizedTensor(np.array([[1, 2], [3, 4]], np.int8), per_tensor(0.1))
    b = QuantizedTensor(np.array([[5, 6], [7, 8]], np.int8), per_tensor(0.1))
    out = qmatmul(a, b, per_tensor(0.2))
    # accumulators [[19, 22], [43, 50]] times 0.1 * 0.1 / 0.2
    assert out.values.tolist() == [[1, 1], [2, 3]]


def test_qmatmul_zero_input_gives_output_zero_point(rng):
    pa = per_tensor(0.3, 4, False)
    a = QuantizedTensor(np.full((3, 5), 4, np.int8), pa)
    b = quantize(rng.standard_normal((5, 2)), compute_params_symmetric(np.ones((5, 2))))
    out = qmatmul(a, b, per_tensor(0.05, -9, False))
    assert np.all(out.values == -9)


def test_qmatmul_with_bias_and_per_column_weights(rng):
    for _ in range(20):
        x = rng.standard_normal((2, 9))
        w = rng.standard_normal((9, 4))
        bias = rng.standard_normal(4)
        px = compute_params_asymmetric(x.min(), x.max())
        pw = compute_params_symmetric(w, axis=1)
        qx, qw = quantize(x, px), quantize(w, pw)
        ref = dequantize(qx) @ dequantize(qw) + bias
        po = compute_params_asymmetric(ref.min(), ref.max())
        got = dequantize(qmatmul(qx, qw, po, bias=bias))
        bias_err = 0.5 * px.scale[0] * pw.scale.astype(np.float64)
        assert np.all(np.abs(got - ref) <= po.scale[0] / 2 + bias_err + 1e-12)


def test_qmatmul_overflow_detected():
    k = 70000
    p = per_tensor(1.0, -128, False)
    a = QuantizedTensor(np.full((1, k), 127, np.int8), p)
    b = QuantizedTensor(np.full((k, 1), 127, np.int8), per_tensor(1.0))
    with pytest.raises(AccumulatorOverflowError):
        qmatmul(a, b, per_tensor(1.0))


def test_qmatmul_rejects_bad_operands():
    a = QuantizedTensor(np.zeros((2, 3), np.int8), per_tensor(1.0))
    with pytest.raises(ShapeError):
        qmatmul(a, a, per_tensor(1.0))
    w = QuantizedTensor(np.zeros((3, 2), np.int8), compute_params_symmetric(np.ones((3, 2)), axis=0))
    with pytest.raises(ShapeError):
        qmatmul(a, w, per_tensor(1.0))


def test_fake_quant_forward_grid_and_idempotent(rng):
    p = compute_params_asymmetric(-2.0, 3.0)
    on_grid = (np.arange(-128, 128) - p.zero_point[0]) * np.float64(p.scale[0])
    assert np.array_equal(fake_quant_forward(on_grid, p), on_grid)
    t = rng.uniform(-4, 4, 500)
    y = fake_quant_forward(t, p)
    steps = y / np.float64(p.scale[0]) + p.zero_point[0]
    assert np.array_equal(steps, np.round(steps))
    assert np.array_equal(fake_quant_forward(y, p), y)


def test_fake_quant_backward_ste(rng):
    p = per_tensor(0.1)
    t = rng.uniform(-12, 12, 50)
    up = rng.standard_normal(50)
    assert np.array_equal(fake_quant_backward(up, t, p), up)
    t[3] = 1e9
    g = fake_quant_backward(up, t, p)
    assert g[3] == 0.0 and np.array_equal(np.delete(g, 3), np.delete(up, 3))


def test_observer_merges_ranges():
    obs = MinMaxObserver()
    obs("s", np.array([1.0, 4.0]))
    obs("s", np.array([-2.0, 3.0]))
    assert obs.ranges["s"] == (-2.0, 4.0)


def test_calibrate_single_dense_layer(rng):
    model = tiny_model()
    raws = [rng.standard_normal(6).astype(np.float32) for _ in range(2)]
    one = calibrate(model, raws[:1], part="encoder")
    layer = model["enc_dense"]

    def pre_activation(r):
        return nn.dense_forward(r, layer.params["W"], layer.params["b"])

    out = pre_activation(raws[0])
    assert one.ranges["enc_dense.out"] == (float(out.min()), float(out.max()))
    two = calibrate(model, raws, part="encoder")
    outs = [pre_activation(r) for r in raws]
    assert two.ranges["enc_dense.out"] == (min(float(o.min()) for o in outs),
                                            max(float(o.max()) for o in outs))


def test_calibration_contains_replay(toy_data, toy_baseline):
    model, _, features = toy_baseline
    samples = [(f, p) for f, p, _ in sample_generator(features, toy_data.train, toy_data.vocab)]
    samples = samples[:100]
    cal = calibrate(model, samples)
    replay = MinMaxObserver()
    for f, p in samples:
        nn.decoder_forward(model, f, p, observer=replay, use_int8=False)
    assert set(replay.ranges) == set(cal.ranges)
    for site, (lo, hi) in replay.ranges.items():
        clo, chi = cal.ranges[site]
        assert clo <= lo and hi <= chi
        # zero-point rounding may shift the int8 window by half a step
        qlo, qhi = cal.params[site].real_range()
        half = float(cal.params[site].scale[0]) / 2
        assert qlo[0] - half <= lo and hi <= qhi[0] + half


def test_one_qat_epoch_reduces_loss(toy_data, toy_baseline):
    _, _, features = toy_baseline
    samples = list(sample_generator(features, toy_data.train, toy_data.vocab))
    model = tiny_model(len(toy_data.vocab), raw_dim=64, feature_dim=128, hidden=32, embed=16,
                       encoder=False)
    before = nn.evaluate_loss(model, samples)
    result = nn.train(model, samples, nn.TrainConfig(lr=0.05, epochs=1, qat=True))
    after = nn.evaluate_loss(model, samples, qat_ranges=result.qat_ranges)
    assert after < before
