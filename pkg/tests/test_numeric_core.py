import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import conv2d_loops, rand_tensor
from ddet.errors import DimensionError, NonFiniteGradientError, PreconditionError
from ddet.gradcheck import grad_check
from ddet.layers import down4, residual_block, up4
from ddet.ops import add, conv2d, l1_loss, relu, total, upsample_nearest2x
from ddet.optim import AdamState, adam_step
from ddet.tensor import GradTape, Tensor, no_grad


def conv_params(rng, co, ci, k=3, dtype=np.float64, prefix="c"):
    return {
        f"{prefix}.weight": Tensor(rng.standard_normal((co, ci, k, k)) * 0.2, requires_grad=True, dtype=dtype),
        f"{prefix}.bias": Tensor(rng.standard_normal(co) * 0.1, requires_grad=True, dtype=dtype),
    }


# -- conv2d ---------------------------------------------------------------

def test_conv2d_all_ones_3x3():
    x = Tensor(np.ones((1, 1, 3, 3)), dtype=np.float64)
    w = Tensor(np.ones((1, 1, 3, 3)), dtype=np.float64)
    out = conv2d(x, w, Tensor(np.zeros(1)), stride=1, padding=1).data[0, 0]
    oracle = conv2d_loops(x.data, w.data, np.zeros(1), 1, 1)[0, 0]
    np.testing.assert_array_equal(oracle, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])
    np.testing.assert_array_equal(out, oracle)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
def test_conv2d_matches_loops(rng, stride, padding):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
    np.testing.assert_allclose(out, conv2d_loops(x, w, b, stride, padding), atol=1e-12)


def test_conv2d_output_size_formula(rng):
    x = Tensor(rng.standard_normal((1, 2, 9, 11)))
    w = Tensor(rng.standard_normal((5, 2, 5, 5)))
    out = conv2d(x, w, None, stride=2, padding=1)
    assert out.shape == (1, 5, (9 + 2 - 5) // 2 + 1, (11 + 2 - 5) // 2 + 1)


def test_conv2d_zero_weights_gives_bias(rng):
    x = Tensor(rng.standard_normal((2, 3, 5, 5)))
    w = Tensor(np.zeros((4, 3, 3, 3)))
    b = Tensor(np.array([0.5, -1.0, 2.0, 0.0]))
    out = conv2d(x, w, b, 1, 1).data
    for c in range(4):
        assert np.all(out[:, c] == b.data[c])


def test_conv2d_channel_mismatch_names_axis(rng):
    x = Tensor(rng.standard_normal((1, 3, 5, 5)))
    w = Tensor(rng.standard_normal((4, 2, 3, 3)))
    with pytest.raises(DimensionError, match="channel axis"):
        conv2d(x, w, None, 1, 1)


def test_conv2d_even_kernel_rejected(rng):
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def delta_kernel(c, k):
    w = np.zeros((c, c, k, k))
    for i in range(c):
        w[i, i, k // 2, k // 2] = 1
    return w


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(1, 9), w=st.integers(1, 9),
       k=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2**16))
def test_conv2d_delta_is_identity(n, c, h, w, k, seed):
    x = np.random.default_rng(seed).standard_normal((n, c, h, w))
    out = conv2d(Tensor(x), Tensor(delta_kernel(c, k)), None, 1, k // 2).data
    np.testing.assert_array_equal(out, x)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_conv2d_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 1, 2, 6, 6))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    lhs = conv2d(Tensor(a * x + b * y), w, None, 1, 1).data
    rhs = a * conv2d(Tensor(x), w, None, 1, 1).data + b * conv2d(Tensor(y), w, None, 1, 1).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-9)


def test_conv2d_gradcheck_seed0():
    rng = np.random.default_rng(0)
    x = rand_tensor(rng, (1, 2, 5, 5))
    w = rand_tensor(rng, (3, 2, 3, 3))
    b = rand_tensor(rng, (3,))
    rep = grad_check(lambda x, w, b: conv2d(x, w, b, 1, 1), [x, w, b], eps=1e-5, tol=1e-3)
    assert rep.passed, rep


def test_conv2d_strided_gradcheck():
    rng = np.random.default_rng(11)
    x = rand_tensor(rng, (2, 2, 8, 8))
    w = rand_tensor(rng, (2, 2, 3, 3))
    rep = grad_check(lambda x, w: conv2d(x, w, None, 2, 1), [x, w])
    assert rep.passed, rep


# -- relu / l1 ----------------------------------------------------------------

def test_relu_values_and_grad():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    out = relu(x)
    np.testing.assert_array_equal(out.data, [0, 0, 2])
    out.backward(np.ones(3))
    np.testing.assert_array_equal(x.grad, [0, 0, 1])
    assert np.all(relu(Tensor(-np.arange(1.0, 6.0))).data == 0)


def test_relu_grad_at_plus_minus_three():
    x = Tensor(np.array([3.0, -3.0]), requires_grad=True)
    relu(x).backward(np.ones(2))
    assert x.grad.tolist() == [1.0, 0.0]


def test_l1_loss_values(rng):
    t = rng.uniform(size=(1, 3, 4, 4))
    assert l1_loss(Tensor(t), t).item() == 0.0
    assert l1_loss(Tensor(t + 0.5), t).item() == pytest.approx(0.5, abs=1e-12)


def test_l1_loss_gradient_is_sign_over_count():
    rng = np.random.default_rng(2)
    p = rand_tensor(rng, (1, 2, 3, 3))
    t = rng.standard_normal((1, 2, 3, 3))
    l1_loss(p, t).backward()
    np.testing.assert_allclose(p.grad, np.sign(p.data - t) / p.size)
    rep = grad_check(lambda p: l1_loss(p, t), [p])
    assert rep.passed, rep


def test_l1_loss_tie_subgradient_zero():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    l1_loss(p, np.array([1.0, 3.0])).backward()
    assert p.grad.tolist() == [0.0, -0.5]


def test_l1_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        l1_loss(Tensor(np.zeros(3)), np.zeros(4))


# -- composite blocks -------------------------------------------------------

def res_params(rng, c=64, dtype=np.float64, zero=False):
    p = {}
    p.update(conv_params(rng, c, c, prefix="rb.conv1", dtype=dtype))
    p.update(conv_params(rng, c, c, prefix="rb.conv2", dtype=dtype))
    if zero:
        for t in p.values():
            t.data[...] = 0
    return p


def test_residual_block_zero_weights_identity(rng):
    x = rand_tensor(rng, (1, 64, 5, 7))
    out = residual_block(x, res_params(rng, zero=True), "rb")
    np.testing.assert_array_equal(out.data, x.data)


@pytest.mark.parametrize("h,w", [(1, 1), (3, 5), (8, 8)])
def test_residual_block_shape(rng, h, w):
    x = rand_tensor(rng, (2, 64, h, w))
    assert residual_block(x, res_params(rng), "rb").shape == x.shape


def test_residual_block_zero_weights_grad_is_ones(rng):
    x = rand_tensor(rng, (1, 64, 4, 4))
    out = residual_block(x, res_params(rng, zero=True), "rb")
    total(out).backward()
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))
    # finite differences agree
    rep = grad_check(lambda x: total(residual_block(x, res_params(np.random.default_rng(0), zero=True), "rb")),
                     [x], max_elements=40)
    assert rep.passed


def test_residual_block_channel_mismatch(rng):
    with pytest.raises(DimensionError):
        residual_block(rand_tensor(rng, (1, 32, 4, 4)), res_params(rng), "rb")


def test_residual_block_gradcheck():
    rng = np.random.default_rng(5)
    x = rand_tensor(rng, (1, 8, 4, 4))
    p = res_params(rng, c=8)
    rep = grad_check(lambda x, *ws: residual_block(x, dict(zip(p, ws)), "rb"), [x, *p.values()])
    assert rep.passed, rep


def down_params(rng, ci=3, c=64, dtype=np.float64):
    p = conv_params(rng, c, ci, prefix="d.0", dtype=dtype)
    p.update(conv_params(rng, c, c, prefix="d.1", dtype=dtype))
    return p


def up_params(rng, co, c=64, dtype=np.float64):
    p = conv_params(rng, c, c, prefix="u.0", dtype=dtype)
    p.update(conv_params(rng, co, c, prefix="u.1", dtype=dtype))
    return p


@pytest.mark.parametrize("size,out", [(64, 16), (8, 2)])
def test_down4_shapes(rng, size, out):
    x = rand_tensor(rng, (1, 3, size, size), requires_grad=False, dtype=np.float32)
    assert down4(x, down_params(rng, dtype=np.float32), "d").shape == (1, 64, out, out)


def test_down4_requires_multiple_of_4(rng):
    with pytest.raises(PreconditionError):
        down4(rand_tensor(rng, (1, 3, 10, 8)), down_params(rng), "d")


def test_down4_gradcheck_seed0():
    rng = np.random.default_rng(0)
    x = rand_tensor(rng, (1, 3, 8, 8))
    p = down_params(rng, c=8)
    rep = grad_check(lambda x, *ws: down4(x, dict(zip(p, ws)), "d"), [x, *p.values()],
                     eps=1e-5, tol=1e-3)
    assert rep.passed, rep


def test_up4_shape(rng):
    x = rand_tensor(rng, (1, 64, 2, 2), dtype=np.float32)
    assert up4(x, up_params(rng, 83, dtype=np.float32), "u").shape == (1, 83, 8, 8)


def test_up4_zero_weights_constant_bias(rng):
    p = up_params(rng, 5)
    p["u.1.weight"].data[...] = 0
    p["u.1.bias"].data[...] = 0.25
    out = up4(rand_tensor(rng, (1, 64, 3, 2)), p, "u")
    assert out.shape == (1, 5, 12, 8)
    assert np.all(out.data == 0.25)


def test_up4_gradcheck_seed1():
    rng = np.random.default_rng(1)
    x = rand_tensor(rng, (1, 8, 2, 2))
    p = up_params(rng, 6, c=8)
    rep = grad_check(lambda x, *ws: up4(x, dict(zip(p, ws)), "u"), [x, *p.values()])
    assert rep.passed, rep


def test_upsample_nearest_gradcheck(rng):
    x = rand_tensor(rng, (1, 2, 3, 4))
    assert grad_check(upsample_nearest2x, [x]).passed


# -- tape semantics -----------------------------------------------------------

def test_backward_twice_accumulates_double(rng):
    x = rand_tensor(rng, (1, 2, 4, 4))
    w = rand_tensor(rng, (2, 2, 3, 3))
    out = total(relu(conv2d(x, w, None, 1, 1)))
    out.backward()
    once = w.grad.copy(), x.grad.copy()
    out.backward()
    np.testing.assert_array_equal(w.grad, 2 * once[0])
    np.testing.assert_array_equal(x.grad, 2 * once[1])


def test_shared_input_gradient_sums(rng):
    x = rand_tensor(rng, (3,))
    total(add(x, x)).backward()
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))


def test_tape_orders_operations_and_leaves(rng):
    x = rand_tensor(rng, (1, 1, 3, 3))
    w = rand_tensor(rng, (1, 1, 3, 3))
    y = relu(conv2d(x, w, None, 1, 1))
    tape = GradTape(total(y))
    ops = [e.op for e in tape.entries]
    assert ops.index("conv2d") < ops.index("relu") < ops.index("sum")
    assert {id(t) for t in tape.leaves()} == {id(x), id(w)}


def test_backward_is_bit_deterministic(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3))

    def grads():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        l1_loss(relu(conv2d(xt, wt, None, 1, 1)), np.zeros((2, 4, 6, 6))).backward()
        return xt.grad, wt.grad

    a, b = grads(), grads()
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_no_grad_records_nothing(rng):
    x = rand_tensor(rng, (1, 1, 3, 3))
    with no_grad():
        y = relu(x)
    assert not y.requires_grad and y.is_leaf


def test_ops_are_pure(rng):
    x = Tensor(rng.standard_normal((1, 3, 6, 6)))
    w = Tensor(rng.standard_normal((2, 3, 3, 3)))
    a = conv2d(x, w, None, 1, 1).data
    b = conv2d(x, w, None, 1, 1).data
    assert np.array_equal(a, b)


# -- grad_check itself ------------------------------------------------------------

def test_grad_check_linear_function_exact(rng):
    x = rand_tensor(rng, (1, 2, 3, 3))
    rep = grad_check(lambda x: x * 3.0, [x])
    assert rep.max_rel_err < 1e-9


def test_grad_check_reports_wrong_gradient(rng):
    from ddet.tensor import make_result

    def bad_square(x):
        return make_result(x.data ** 2, (x,), lambda g: (g * x.data,), "bad")  # missing factor 2

    rep = grad_check(bad_square, [rand_tensor(rng, (4,))])
    assert not rep.passed and rep.max_rel_err > 0.1


def test_grad_check_needs_float64(rng):
    with pytest.raises(TypeError):
        grad_check(relu, [rand_tensor(rng, (3,), dtype=np.float32)])


# -- Adam -------------------------------------------------------------------------

def test_adam_zero_grad_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    state = adam_step(p, {"w": np.zeros(2)}, lr=1e-3)
    assert p["w"].data.tolist() == [1.0, -2.0]
    assert state.step == 1
    state = adam_step(p, {"w": np.zeros(2)}, state, lr=1e-3)
    assert state.step == 2


def test_adam_first_step_closed_form():
    # m_hat = g, v_hat = g^2 at step 1, so the update is lr * g / (|g| + eps)
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    adam_step(p, {"w": np.array([1.0])}, lr=1e-3, eps=1e-8)
    assert p["w"].data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_nonfinite_gradient_names_parameter():
    p = {"a": Tensor(np.zeros(2), requires_grad=True), "b": Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        adam_step(p, {"a": np.ones(2), "b": np.array([np.nan, 1.0])})
    assert np.all(p["a"].data == 0)


def test_adam_is_deterministic_over_100_steps():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": Tensor(rng.standard_normal((3, 3)), requires_grad=True, dtype=np.float32)}
        state = AdamState()
        target = np.ones((3, 3), dtype=np.float32)
        for _ in range(100):
            p["w"].zero_grad()
            l1_loss(p["w"], target).backward()
            state = adam_step(p, state=state, lr=1e-2)
        return p["w"].data

    assert np.array_equal(run(), run())


def test_grad_check_reprobes_across_relu_kink():
    x = Tensor(np.array([2e-6, 0.5]), requires_grad=True)
    rep = grad_check(relu, [x], eps=1e-5)
    assert rep.passed and rep.reprobed == 1
