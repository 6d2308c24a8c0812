import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import fd_gradcheck, race_fd_mp
from qmet import autodiff as ad
from qmet.optim import Adam, AdamState, adam_step, cosine_lr


def test_primitive_examples():
    assert np.array_equal(ad.positive_part(ad.tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert ad.sigmoid(ad.tensor(0.0)).item() == 0.5
    m = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal((ad.tensor(np.eye(3)) @ ad.tensor(m)).data, m)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError) as e:
        ad.tensor(np.ones((2, 3))) @ ad.tensor(np.ones((2, 3)))
    assert e.value.op == "matmul"
    assert "(2, 3)" in str(e.value)
    with pytest.raises(ad.ShapeError):
        ad.add(ad.tensor(np.ones(3)), ad.tensor(np.ones(4)))


def test_backward_examples():
    x = ad.parameter([1.0, 2.0], "x")
    assert np.array_equal(ad.backward((x * x).sum())["x"], [2.0, 4.0])
    y = ad.parameter([1.0, 2.0], "y")
    g = ad.backward(ad.tensor(3.0) + 0.0 * y.sum(), {"y": y})
    assert np.array_equal(g["y"], [0.0, 0.0])
    z = ad.parameter([1.0], "z")
    g = ad.backward(ad.tensor(5.0), {"z": z})
    assert np.array_equal(g["z"], [0.0])


def test_backward_errors():
    x = ad.parameter([1.0, 2.0], "x")
    with pytest.raises(ValueError):
        ad.backward(x * 2.0)
    loss = (x * x).sum()
    ad.backward(loss)
    with pytest.raises(ad.TapeError):
        ad.backward(loss)


def test_subgradient_zero_at_kink():
    x = ad.parameter([0.0, 0.0], "x")
    loss = (ad.relu(x) + ad.positive_part(x)).sum()
    assert np.array_equal(ad.backward(loss)["x"], [0.0, 0.0])


def test_nonfinite_hook():
    with pytest.raises(FloatingPointError):
        ad.log(ad.tensor([0.0]))
    with ad.no_finite_check():
        assert ad.log(ad.tensor([0.0])).data[0] == -math.inf


def test_race_node_examples():
    out = ad.poisson_race(ad.tensor(np.zeros(4)), ad.tensor([0.0, 1.0, 2.0, 3.0]))
    assert np.array_equal(out.data, np.ones(4))
    out = ad.poisson_race(ad.tensor([2.0]), ad.tensor([0.0]))
    assert out.data[0] == math.exp(-2.0)


def test_race_node_backward_matches_fd():
    a, b = ad.parameter(1.0, "a"), ad.parameter(1.0, "b")
    g = ad.backward(ad.poisson_race(a, b))
    assert g["a"] == pytest.approx(race_fd_mp(1.0, 1.0, 0), rel=1e-5)
    assert g["b"] == pytest.approx(race_fd_mp(1.0, 1.0, 1), rel=1e-5)


def test_race_node_domain():
    with pytest.raises(ValueError):
        ad.poisson_race(ad.tensor([-1e-6]), ad.tensor([1.0]))
    # tiny float noise is clamped and the gradient passes through
    a = ad.parameter([-1e-12], "a")
    out = ad.poisson_race(a, ad.tensor([1.0]))
    assert out.data[0] == 1.0
    g = ad.backward(out.sum())
    assert g["a"][0] == pytest.approx(-math.exp(-1.0), rel=1e-12)
    with pytest.raises(ad.ShapeError):
        ad.poisson_race(ad.tensor([1.0, 2.0]), ad.tensor([1.0]))


def test_composite_gradcheck():
    rng = np.random.default_rng(3)
    params = {
        "W1": ad.parameter(rng.normal(size=(4, 6)), "W1"),
        "b1": ad.parameter(rng.normal(size=6), "b1"),
        "W2": ad.parameter(rng.normal(size=(6, 4)), "W2"),
    }
    x = ad.tensor(rng.normal(size=(5, 4)))

    def loss():
        h = ad.tanh(x @ params["W1"] + params["b1"])
        o = h @ params["W2"]
        u, v = ad.exp(o[:, :2]), ad.square(o[:, 2:])
        r = ad.poisson_race(u, v)
        p = ad.prod(ad.sigmoid(o), axis=1)
        c = ad.concat([r, ad.reshape(p, (5, 1))], axis=1)
        n = ad.norm(o, axis=1)
        return ad.mean(c) + ad.sum_(ad.clamp(n, 0.5, 3.0)) + ad.mean(ad.log_sigmoid(o)) + ad.sum_(ad.normal_cdf(o[:, 0]))

    assert fd_gradcheck(loss, params, n_probe=20) <= 1e-4


def test_matmul_broadcast_gradcheck():
    rng = np.random.default_rng(5)
    params = {"A": ad.parameter(rng.normal(size=(3, 2, 4)), "A"), "B": ad.parameter(rng.normal(size=(4, 5)), "B")}
    assert fd_gradcheck(lambda: ad.sum_(ad.square(params["A"] @ params["B"])), params) <= 1e-5


def test_gather_scatter_gradcheck():
    rng = np.random.default_rng(6)
    params = {"E": ad.parameter(rng.normal(size=(5, 3)), "E")}
    idx = np.array([0, 2, 2, 4, 0])
    assert fd_gradcheck(lambda: ad.sum_(ad.square(params["E"][idx]) * 0.5), params) <= 1e-6
    g = ad.backward(ad.sum_(params["E"][idx]))["E"]
    assert np.array_equal(g[:, 0], [2.0, 0.0, 2.0, 0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(0.05, 1.0)))
def test_prod_gradient_matches_closed_form(x):
    p = ad.parameter(x, "p")
    g = ad.backward(ad.prod(p))["p"]
    assert np.allclose(g, np.prod(x) / x, rtol=1e-12)


def test_prod_gradient_with_zero_entry():
    p = ad.parameter([0.0, 2.0, 3.0], "p")
    assert np.array_equal(ad.backward(ad.prod(p))["p"], [6.0, 0.0, 0.0])


# -- optimizer ------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = {"x": ad.parameter([1.0, -2.0], "x")}
    adam_step(p, {"x": np.zeros(2)}, AdamState(), 0.1)
    assert np.array_equal(p["x"].data, [1.0, -2.0])


def test_adam_descends():
    p = {"x": ad.parameter(1.0, "x")}
    opt = Adam(p, lr=0.1)
    opt.step({"x": 2.0 * p["x"].data})
    assert p["x"].data < 1.0


def test_adam_converges():
    p = {"x": ad.parameter(0.0, "x")}
    opt = Adam(p, lr=0.05)
    for _ in range(500):
        opt.step(ad.backward(ad.square(p["x"] - 3.0), p))
    assert abs(p["x"].item() - 3.0) < 1e-2


def test_adam_shape_mismatch():
    p = {"x": ad.parameter([1.0, 2.0], "x")}
    with pytest.raises(ad.ShapeError):
        adam_step(p, {"x": np.zeros(3)}, AdamState(), 0.1)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": ad.parameter(rng.normal(size=3), "w")}
        opt = Adam(p, lr=0.01)
        for _ in range(50):
            opt.step(ad.backward(ad.sum_(ad.exp(p["w"])), p))
        return p["w"].data.copy()

    assert np.array_equal(run(), run())


def test_cosine_lr():
    assert cosine_lr(0, 100, 0.3) == 0.3
    assert cosine_lr(100, 100, 0.3) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 100, 0.3) == pytest.approx(0.15, rel=1e-15)
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 0.3)
