import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ups.gradkit as gk
from ups.gradkit import fftlib
from ups.gradkit.check import gradcheck, rel_error


def _scalarize(out: gk.Node, seed: int = 99) -> gk.Node:
    """Contract an arbitrary node against a fixed random weight to a scalar."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(out.shape)
    if np.iscomplexobj(out.value):
        w = w + 1j * rng.standard_normal(out.shape)
        return gk.sum(gk.real(gk.mul_const(out, w)))
    return gk.sum(gk.mul_const(out, w))


def _check(build, params, tol=1e-6):
    results = gradcheck(build, params, h=1e-5, entries_per_param=3)
    worst = max(results, key=lambda r: r.rel_error)
    assert worst.rel_error < tol, worst


# ------------------------------------------------------------------ matmul


def test_matmul_identity_and_hand_values():
    g = gk.Graph()
    eye = g.const(np.eye(2))
    a = g.const([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((eye @ a).value, [[1, 2], [3, 4]])
    out = g.const([[1.0, 2.0]]) @ g.const([[3.0], [4.0]])
    np.testing.assert_array_equal(out.value, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    g = gk.Graph()
    with pytest.raises(gk.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        g.const(np.ones((2, 3))) @ g.const(np.ones((2, 3)))


def test_matmul_gradient_of_sum_matches_central_differences():
    rng = np.random.default_rng(0)
    params = {"a": rng.standard_normal((5, 7)), "b": rng.standard_normal((7, 3))}
    _check(lambda g, p: gk.sum(p["a"] @ p["b"]), params)


def test_matmul_batched_weight_broadcast_gradient():
    rng = np.random.default_rng(1)
    params = {"x": rng.standard_normal((2, 4, 5)), "w": rng.standard_normal((5, 3))}
    _check(lambda g, p: _scalarize(p["x"] @ p["w"]), params)


# ------------------------------------------------------------------ fft


def test_fft2_of_constant_is_dc_only():
    n, v = 8, 2.5
    g = gk.Graph()
    spec = gk.fft2(g.const(np.full((1, n, n), v))).value
    expected = np.zeros((1, n, n), dtype=complex)
    expected[0, 0, 0] = v * n * n
    np.testing.assert_allclose(spec, expected, atol=1e-12)


def test_fft2_round_trip():
    x = np.random.default_rng(2).standard_normal((8, 8))
    g = gk.Graph()
    back = gk.real(gk.ifft2(gk.fft2(g.const(x)))).value
    np.testing.assert_allclose(back, x, atol=1e-12, rtol=0)


def test_fft2_matches_direct_dft():
    x = np.random.default_rng(3).standard_normal((1, 8, 8))
    np.testing.assert_allclose(fftlib.fft2(x), fftlib.dft2_direct(x), atol=1e-10, rtol=0)
    np.testing.assert_allclose(fftlib.ifft2(x), fftlib.dft2_direct(x, inverse=True), atol=1e-10, rtol=0)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        fftlib.fft(np.ones(12))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_fft2_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 16, 16))
    lhs = fftlib.fft2(a * x + b * y)
    rhs = a * fftlib.fft2(x) + b * fftlib.fft2(y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10, rtol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([4, 8, 16, 32]))
def test_parseval(seed, n):
    x = np.random.default_rng(seed).standard_normal((n, n))
    lhs = np.sum(x**2)
    rhs = np.sum(np.abs(fftlib.fft2(x)) ** 2) / n**2
    assert abs(lhs - rhs) <= 1e-8 * lhs


@pytest.mark.parametrize("n,modes", [(8, 2), (8, 4), (16, 3)])
def test_truncated_dft_ops_match_fft_path(n, modes):
    x = np.random.default_rng(4).standard_normal((2, 3, n))
    idx = gk.mode_indices(n, modes)
    g = gk.Graph()
    xn = g.const(x)
    via_fft = gk.take(gk.fft(gk.to_complex(xn), -1), idx, -1).value
    np.testing.assert_allclose(gk.dft_modes(xn, -1, modes).value, via_fft, atol=1e-12)
    spec = g.const(via_fft)
    back_fft = gk.ifft(gk.put(spec, idx, n, -1), -1).value
    np.testing.assert_allclose(gk.idft_modes(spec, -1, n).value, back_fft, atol=1e-12)
    np.testing.assert_allclose(gk.idft_modes_real(spec, -1, n).value, back_fft.real, atol=1e-12)


def test_truncated_dft_along_rows_matches_columns():
    x = np.random.default_rng(5).standard_normal((2, 16, 8))
    g = gk.Graph()
    rows = gk.dft_modes(g.const(x), -2, 3).value
    cols = gk.dft_modes(g.const(np.swapaxes(x, -1, -2)), -1, 3).value
    np.testing.assert_allclose(rows, np.swapaxes(cols, -1, -2), atol=1e-12)


# ------------------------------------------------------------------ elementwise suite


def test_softmax_uniform():
    g = gk.Graph()
    np.testing.assert_allclose(gk.softmax(g.const(np.zeros(3))).value, np.full(3, 1 / 3))


def test_softmax_rows_sum_to_one():
    g = gk.Graph()
    s = gk.softmax(g.const(np.random.default_rng(5).standard_normal((4, 6))), axis=1).value
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


def test_layernorm_constant_row_is_zero():
    g = gk.Graph()
    out = gk.layernorm(g.const(np.full((2, 8), 3.7)), axis=-1, eps=1e-5).value
    assert np.max(np.abs(out)) < 1e-3


def test_layernorm_moments():
    g = gk.Graph()
    out = gk.layernorm(g.const(np.random.default_rng(6).standard_normal((5, 32)) * 4 + 1), eps=0.0).value
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-10)


def test_gelu_gradient_at_17_points():
    x0 = np.random.default_rng(7).standard_normal(17) * 2
    g = gk.Graph()
    xn = g.param("x", x0)
    grad = g.backward(gk.sum(gk.gelu(xn)))["x"]
    h = 1e-5
    for i in range(17):
        up, dn = x0.copy(), x0.copy()
        up[i] += h
        dn[i] -= h
        g2 = gk.Graph(record=False)
        fd = (gk.sum(gk.gelu(g2.const(up))).value - gk.sum(gk.gelu(g2.const(dn))).value) / (2 * h)
        assert rel_error(grad[i], fd) < 1e-6


def test_axis_out_of_range():
    g = gk.Graph()
    x = g.const(np.ones((2, 3)))
    for op in (lambda: gk.softmax(x, axis=2), lambda: gk.layernorm(x, axis=-3),
               lambda: gk.mean(x, axis=5), lambda: gk.concat([x, x], axis=3)):
        with pytest.raises(gk.ShapeError, match="out of range"):
            op()


def test_add_requires_identical_shapes():
    g = gk.Graph()
    with pytest.raises(gk.ShapeError):
        g.const(np.ones((2, 3))) + g.const(np.ones((3,)))


_OP_CASES = {
    "add": ({"a": (3, 4), "b": (3, 4)}, lambda g, p: p["a"] + p["b"]),
    "sub": ({"a": (3, 4), "b": (3, 4)}, lambda g, p: p["a"] - p["b"]),
    "mul": ({"a": (3, 4), "b": (3, 4)}, lambda g, p: p["a"] * p["b"]),
    "scale": ({"a": (3, 4)}, lambda g, p: p["a"] * 1.7),
    "square": ({"a": (3, 4)}, lambda g, p: gk.square(p["a"])),
    "sqrt": ({"a": (3, 4)}, lambda g, p: gk.sqrt(gk.add_const(gk.square(p["a"]), 0.5))),
    "exp": ({"a": (3, 4)}, lambda g, p: gk.exp(p["a"])),
    "gelu": ({"a": (3, 4)}, lambda g, p: gk.gelu(p["a"])),
    "softmax": ({"a": (3, 5)}, lambda g, p: gk.softmax(p["a"], axis=1)),
    "layernorm": ({"a": (3, 6)}, lambda g, p: gk.layernorm(p["a"], axis=-1)),
    "mean": ({"a": (3, 4, 2)}, lambda g, p: gk.mean(p["a"], axis=1)),
    "sum": ({"a": (3, 4)}, lambda g, p: gk.sum(p["a"], axis=0, keepdims=True)),
    "reshape": ({"a": (3, 4)}, lambda g, p: gk.reshape(p["a"], (2, 6))),
    "transpose": ({"a": (2, 3, 4)}, lambda g, p: gk.transpose(p["a"], (2, 0, 1))),
    "concat": ({"a": (2, 3), "b": (2, 2)}, lambda g, p: gk.concat([p["a"], p["b"]], axis=1)),
    "broadcast": ({"a": (1, 4)}, lambda g, p: gk.broadcast_to(p["a"], (3, 4))),
    "take": ({"a": (5, 3)}, lambda g, p: gk.take(p["a"], [0, 2, 2, 4], axis=0)),
    "put": ({"a": (2, 3)}, lambda g, p: gk.put(p["a"], [0, 3, 4], 6, axis=1)),
    "gather_rows": ({"a": (2, 4, 3)}, lambda g, p: gk.gather_rows(p["a"], [[0, 3, 1], [2, 2, 0]])),
    "complex_multiply": (
        {"a": (3, 2), "b": (3, 2)},
        lambda g, p: gk.mul(gk.as_complex(p["a"]), gk.as_complex(p["b"])),
    ),
    "fft2": ({"a": (2, 8, 8)}, lambda g, p: gk.fft2(p["a"])),
    "ifft2": ({"a": (8, 8, 2)}, lambda g, p: gk.ifft2(gk.as_complex(p["a"]))),
    "dft_modes": ({"a": (2, 8)}, lambda g, p: gk.dft_modes(p["a"], -1, 3)),
    "idft_modes": ({"a": (6, 3, 2)}, lambda g, p: gk.idft_modes(gk.as_complex(p["a"]), 0, 8)),
    "idft_modes_real": ({"a": (3, 6, 2)}, lambda g, p: gk.idft_modes_real(gk.as_complex(p["a"]), -1, 8)),
    "dft_modes_rows": ({"a": (2, 8, 3)}, lambda g, p: gk.dft_modes(p["a"], -2, 2)),
    "channel_mix": (
        {"x": (2, 3, 4, 4, 2), "w": (3, 5, 4, 4, 2)},
        lambda g, p: gk.channel_mix(gk.as_complex(p["x"]), gk.as_complex(p["w"])),
    ),
    "real": ({"a": (4, 2)}, lambda g, p: gk.real(gk.as_complex(p["a"]))),
}


@pytest.mark.parametrize("name", sorted(_OP_CASES))
def test_every_op_matches_finite_differences(name):
    shapes, fn = _OP_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    params = {k: rng.standard_normal(s) for k, s in shapes.items()}
    _check(lambda g, p: _scalarize(fn(g, p)), params, tol=1e-6)


# ------------------------------------------------------------------ backward contract


def test_backward_of_sum_is_ones():
    g = gk.Graph()
    w = g.param("w", np.random.default_rng(9).standard_normal((3, 4)))
    np.testing.assert_array_equal(g.backward(gk.sum(w))["w"], np.ones((3, 4)))


def test_zero_times_loss_gives_zero_gradients():
    g = gk.Graph()
    w = g.param("w", np.random.default_rng(10).standard_normal((3, 4)))
    g.param("v", np.ones(2))
    grads = g.backward(gk.scale(gk.sum(gk.exp(w)), 0.0))
    assert np.all(grads["w"] == 0.0)
    assert np.all(grads["v"] == 0.0)  # untouched parameter


def test_backward_rejects_non_scalar():
    g = gk.Graph()
    w = g.param("w", np.ones(3))
    with pytest.raises(gk.ShapeError, match="scalar"):
        g.backward(gk.exp(w))


def test_frozen_parameters_get_no_gradient_entry():
    g = gk.Graph()
    w = g.param("w", np.ones(3))
    f = g.param("f", np.ones(3), trainable=False)
    grads = g.backward(gk.sum(w * f))
    assert set(grads) == {"w"}


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        g = gk.Graph()
        a = g.param("a", rng.standard_normal((4, 8, 8)))
        out = gk.sum(gk.square(gk.real(gk.ifft2(gk.fft2(gk.gelu(a))))))
        return out.value, g.backward(out)["a"]

    (v1, g1), (v2, g2) = run(), run()
    assert v1.tobytes() == v2.tobytes() and g1.tobytes() == g2.tobytes()


# ------------------------------------------------------------------ serialization


def test_weights_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    tensors = {
        "fno.0.spectral": rng.standard_normal((2, 3, 2)),
        "f32": rng.standard_normal(5).astype(np.float32),
        "cplx": rng.standard_normal(4) + 1j * rng.standard_normal(4),
        "scalar": np.array(3.0),
    }
    path = tmp_path / "w.upsw"
    gk.save_weights(path, tensors)
    assert path.read_bytes()[:4] == b"UPSW"
    back = gk.load_weights(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype
        assert back[k].tobytes() == tensors[k].tobytes()


def test_weights_errors(tmp_path):
    path = tmp_path / "w.upsw"
    gk.save_weights(path, {"a": np.arange(10.0)})
    raw = path.read_bytes()
    (tmp_path / "trunc.upsw").write_bytes(raw[:-7])
    with pytest.raises(gk.WeightFileError, match="truncated"):
        gk.load_weights(tmp_path / "trunc.upsw")
    (tmp_path / "bad.upsw").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(gk.WeightFileError, match="magic"):
        gk.load_weights(tmp_path / "bad.upsw")


def test_tape_frees_activations_without_cycle_collector():
    import gc
    import weakref

    gc.disable()
    try:
        g = gk.Graph()
        w = g.param("w", np.ones(3))
        h = gk.exp(w)
        dead_end = gk.square(w)
        probe = weakref.ref(h)
        side = weakref.ref(dead_end)
        del dead_end
        assert side() is None
        loss = gk.sum(h)
        np.testing.assert_allclose(g.backward(loss)["w"], np.e * np.ones(3))
        del h, loss
        assert probe() is None
    finally:
        gc.enable()
