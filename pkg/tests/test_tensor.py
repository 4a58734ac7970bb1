import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphfolio import tensor as T
from oracles import numeric_grad, rel_err


def _leaf(rng, *shape, lo=-1.0, hi=1.0):
    return T.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _check_op(build, leaves, tol=1e-6):
    """Compare analytic and central-difference gradients of sum(out * G)."""
    rng = np.random.default_rng(99)
    for leaf in leaves:
        leaf.zero_grad()
    out = build()
    weights = rng.normal(size=out.shape)
    (out * T.Tensor(weights)).sum().backward()
    for leaf in leaves:
        analytic = leaf.grad.copy()

        def f():
            with T.no_grad():
                return float((build().data * weights).sum())

        assert rel_err(analytic, numeric_grad(f, leaf.data)) < tol


def test_conv1xk_shape_and_valid_padding():
    rng = np.random.default_rng(0)
    x = _leaf(rng, 3, 2, 5)
    w = _leaf(rng, 4, 3, 3)
    b = _leaf(rng, 4)
    assert T.conv1xk(x, w, b).shape == (4, 2, 3)


def test_conv1xk_matches_loop():
    rng = np.random.default_rng(1)
    x, w, b = _leaf(rng, 2, 3, 7), _leaf(rng, 3, 2, 4), _leaf(rng, 3)
    out = T.conv1xk(x, w, b).data
    for o in range(3):
        for r in range(3):
            for j in range(4):
                ref = (w.data[o] * x.data[:, r, j : j + 4]).sum() + b.data[o]
                assert out[o, r, j] == pytest.approx(ref, abs=1e-14)


def test_identity_and_zero():
    x = T.Tensor(np.arange(4.0))
    assert np.array_equal(T.matmul(T.Tensor(np.eye(4)), x).data, x.data)
    assert np.array_equal(T.add(x, T.Tensor(0.0)).data, x.data)


def test_activation_examples():
    assert T.relu(T.Tensor(-2.5)).item() == 0.0
    assert np.allclose(T.softmax(T.Tensor(np.zeros(3))).data, 1 / 3)
    assert T.tanh(T.Tensor(0.0)).item() == 0.0
    assert T.sigmoid(T.Tensor(0.0)).item() == 0.5


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)))
def test_softmax_on_simplex(x):
    p = T.softmax(T.Tensor(x)).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-12


def test_shape_errors_name_both_shapes():
    a, b = T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5)))
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(a, b)
    with pytest.raises(T.ShapeError):
        T.add(a, b)
    with pytest.raises(T.ShapeError):
        T.conv1xk(T.Tensor(np.zeros((3, 2, 2))), T.Tensor(np.zeros((1, 3, 3))))
    with pytest.raises(T.ShapeError):
        T.concat([a, b], axis=0)


def test_non_finite_rejected():
    with pytest.raises(T.NonFiniteError):
        T.Tensor([1.0, np.nan])
    x = T.Tensor([0.0])
    with T.debug_mode(), np.errstate(divide="ignore"):
        with pytest.raises(T.NonFiniteError):
            T.log(x)


@pytest.mark.parametrize("op", ["add", "mul", "sub", "div", "square", "exp", "log", "tanh", "relu",
                                "sigmoid", "softmax", "neg"])
def test_elementwise_gradients(op):
    rng = np.random.default_rng(2)
    a = _leaf(rng, 3, 4, lo=0.5, hi=2.0)
    b = _leaf(rng, 4, lo=0.5, hi=2.0)  # broadcast operand
    if op == "relu":
        a.data[np.abs(a.data - 1.0) < 0.05] += 0.1  # keep away from the kink after shifting
    build = {
        "add": lambda: a + b,
        "mul": lambda: a * b,
        "sub": lambda: a - b,
        "div": lambda: a / b,
        "square": lambda: T.square(a),
        "exp": lambda: T.exp(a),
        "log": lambda: T.log(a),
        "tanh": lambda: T.tanh(a),
        "relu": lambda: T.relu(a - 1.0),
        "sigmoid": lambda: T.sigmoid(a),
        "softmax": lambda: T.softmax(a, axis=1),
        "neg": lambda: -a,
    }[op]
    _check_op(build, [a, b] if op in ("add", "mul", "sub", "div") else [a])


def test_structural_gradients():
    rng = np.random.default_rng(3)
    a, b = _leaf(rng, 2, 3), _leaf(rng, 3, 3)
    _check_op(lambda: T.concat([a, b], axis=0), [a, b])
    _check_op(lambda: T.slice_(b, (slice(0, 2), 1)), [b])
    _check_op(lambda: b.reshape(9), [b])
    _check_op(lambda: T.swapaxes(a, 0, 1), [a])
    _check_op(lambda: T.sum_(b, axis=1), [b])
    _check_op(lambda: T.mean(b, axis=0, keepdims=True), [b])
    _check_op(lambda: a @ b, [a, b])
    v = _leaf(rng, 3)
    _check_op(lambda: b @ v, [b, v])


def test_conv1xk_gradients():
    rng = np.random.default_rng(4)
    for (c, h, w, o, k) in [(3, 2, 5, 4, 3), (2, 3, 6, 1, 6), (4, 1, 7, 2, 1)]:
        x, wt, b = _leaf(rng, c, h, w), _leaf(rng, o, c, k), _leaf(rng, o)
        _check_op(lambda: T.conv1xk(x, wt, b), [x, wt, b])


def test_shared_subexpression_accumulates():
    x = T.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_no_grad_builds_no_graph():
    x = T.Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_adam_step_matches_hand_formula():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.1])
    st0 = T.AdamState.zeros(2, lr=0.1)
    p1, st1 = T.adam_step(p, g, st0)
    m = 0.1 * g
    v = 0.001 * g * g
    expected = p - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    assert np.allclose(p1, expected, atol=1e-15)
    assert st1.step == 1
    p2, st2 = T.adam_step(p1, g, st1)
    m2 = 0.9 * m + 0.1 * g
    v2 = 0.999 * v + 0.001 * g * g
    expected2 = p1 - 0.1 * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999**2)) + 1e-8)
    assert np.allclose(p2, expected2, atol=1e-15)


def test_adam_state_validation():
    with pytest.raises(ValueError):
        T.AdamState.zeros(2, beta1=1.0)
    with pytest.raises(ValueError):
        T.AdamState.zeros(2, eps=0.0)
    with pytest.raises(T.ShapeError):
        T.adam_step(np.zeros(2), np.zeros(3), T.AdamState.zeros(2))


def test_adam_minimizes_quadratic():
    store = T.ParamStore()
    store.add("x", np.array([3.0, -4.0]))
    opt = T.Adam(store, lr=0.05)
    for _ in range(2000):
        store.zero_grad()
        T.square(store["x"] - T.Tensor(np.array([1.0, 2.0]))).sum().backward()
        opt.step()
    assert np.allclose(store["x"].data, [1.0, 2.0], atol=1e-3)


def test_param_store_load_checks_shape():
    s = T.ParamStore()
    s.add("w", np.zeros((2, 2)))
    with pytest.raises(T.ShapeError, match="w"):
        s.load({"w": np.zeros(3)})
    with pytest.raises(KeyError):
        s.load({})
    with pytest.raises(KeyError):
        s.add("w", np.zeros(1))


def test_uniform_init_bounds():
    a = T.uniform_init(np.random.default_rng(0), (1000,), fan_in=16)
    assert np.all(np.abs(a) <= 0.25)
