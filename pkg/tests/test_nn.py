import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, relative_error, tensor_errors
from synthgen import nn
from synthgen.errors import FitError


def _grad_of(build, *arrays):
    ts = [nn.Tensor(a.copy(), True, f"t{i}") for i, a in enumerate(arrays)]
    return ts, tensor_errors(ts, lambda: build(*ts))


UNARY = ["exp", "tanh", "sigmoid", "softplus", "square", "relu"]


@pytest.mark.parametrize("op", UNARY)
def test_unary_gradients(op):
    x = np.random.default_rng(0).normal(size=(4, 3))
    x[np.abs(x) < 0.05] = 0.3  # keep relu away from its kink
    _, err = _grad_of(lambda t: getattr(t, op)().sum(), x)
    assert max(err.values()) < 1e-6


def test_log_pow_div_gradients():
    x = np.random.default_rng(1).uniform(0.5, 2.0, (3, 2))
    y = np.random.default_rng(2).uniform(0.5, 2.0, (3, 2))
    _, err = _grad_of(lambda a, b: (a.log() * (a**1.5) / b + 1.0 / a).mean(), x, y)
    assert max(err.values()) < 1e-6


def test_broadcast_matmul_and_sum_axis():
    rng = np.random.default_rng(3)
    A, B, c = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4,))
    _, err = _grad_of(lambda a, b, v: ((a @ b + v).tanh().sum(axis=0) * 2.0 - v).sum(), A, B, c)
    assert max(err.values()) < 1e-6


def test_concat_columns_transpose():
    rng = np.random.default_rng(4)
    A, B = rng.normal(size=(3, 2)), rng.normal(size=(3, 3))
    _, err = _grad_of(lambda a, b: (nn.concat([a, b]).columns([4, 0, 1]).T @ b).square().mean(), A, B)
    assert max(err.values()) < 1e-6


def test_shared_subexpression_accumulates():
    x = nn.Tensor(np.array([1.5, -0.5]), True, "x")
    y = x * x + x
    nn.backward(y.sum())
    assert np.allclose(x.grad, 2 * x.value + 1)


def test_backward_requires_scalar_graph():
    with pytest.raises(RuntimeError):
        nn.backward(nn.Tensor(1.0))
    x = nn.Tensor(np.ones(3), True)
    with pytest.raises(ValueError):
        nn.backward(x * 2.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from(nn.ACTIVATIONS))
def test_dense_layer_gradients(n_in, n_out, act):
    rng = np.random.default_rng(n_in * 10 + n_out)
    layer = nn.DenseLayer(n_in, n_out, act, rng)
    x = rng.normal(size=(4, n_in))
    if act == "relu":
        layer.b.value += 0.5
    err = tensor_errors(layer.parameters(), lambda: layer(x).square().sum())
    assert max(err.values()) < 1e-5


def test_glorot_bounds_and_seeding():
    a = nn.DenseLayer(30, 10, rng=1)
    b = nn.DenseLayer(30, 10, rng=1)
    assert np.array_equal(a.W.value, b.W.value)
    assert np.abs(a.W.value).max() <= np.sqrt(6 / 40)
    assert np.all(a.b.value == 0)
    with pytest.raises(ValueError):
        nn.DenseLayer(2, 2, "gelu")
    with pytest.raises(ValueError):
        a(np.zeros((1, 29)))


def test_mlp_output_activation():
    m = nn.Mlp([3, 5, 2], "tanh", out_activation="identity", rng=0)
    assert [l.activation for l in m.layers] == ["tanh", "identity"]
    assert m(np.ones((7, 3))).shape == (7, 2)


def test_adam_matches_hand_update():
    p = nn.Tensor(np.array([1.0, -2.0]), True, "p")
    opt = nn.Adam([p], lr=0.1)
    p.grad = np.array([0.5, -1.0])
    opt.step()
    # first step moves every coordinate by lr * sign(g) (up to eps)
    assert np.allclose(p.value, [0.9, -1.9], atol=1e-7)


def test_adam_minimizes_quadratic():
    p = nn.Tensor(np.array([3.0, -4.0]), True, "p")
    opt = nn.Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        nn.backward((p - 1.0).square().sum())
        opt.step()
    assert np.allclose(p.value, 1.0, atol=1e-3)


def test_adam_rejects_nonfinite_gradient():
    p = nn.Tensor(np.ones(2), True, "p")
    opt = nn.Adam([p])
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(FitError):
        opt.step()


def test_tensor_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(2.5)}
    path = tmp_path / "t.bin"
    nn.save_tensors(path, tensors, {"note": "x"})
    header, back = nn.load_tensors(path)
    assert header["note"] == "x"
    assert list(back) == ["w", "b", "s"]
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    raw = path.read_bytes()
    assert raw[:4] == b"SGNN"
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        nn.load_tensors(tmp_path / "bad.bin")


def test_gradcheck_helpers():
    x = np.array([1.0, 2.0])
    assert np.allclose(numeric_grad(lambda: float((x**3).sum()), x), 3 * x**2, rtol=1e-8)
    assert relative_error([1.0], [1.0]) == 0.0
