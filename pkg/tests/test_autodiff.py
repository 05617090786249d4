import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from usrgr import autodiff as ad
from usrgr import gradcheck
from usrgr.autodiff import Adam, AdamState, ShapeError, Tensor, adam_step, backward, check_gradients, grad, no_grad
from usrgr.losses import l1


def direct_conv2d(x, w, b):
    """Brute-force zero-padded 'same' cross-correlation."""
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.zeros((bsz, cout, h, wd))
    for n in range(bsz):
        for o in range(cout):
            for i in range(h):
                for j in range(wd):
                    out[n, o, i, j] = np.sum(xp[n, :, i:i + k, j:j + k] * w[o]) + b[o]
    return out


# -- conv2d ---------------------------------------------------------------------


def test_conv2d_unit_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 6))
    out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_all_ones_3x3_on_2x2():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    w, b = np.ones((1, 1, 3, 3)), np.zeros(1)
    expected = direct_conv2d(x, w, b)
    np.testing.assert_array_equal(expected[0, 0], [[10.0, 10.0], [10.0, 10.0]])
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, expected, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_matches_direct_summation(k):
    rng = np.random.default_rng(k)
    x, w, b = rng.normal(size=(2, 3, 6, 7)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, direct_conv2d(x, w, b), atol=1e-10)


def test_conv2d_weight_gradient_vs_finite_differences():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(1, 2, 5, 5)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3))
    assert check_gradients(lambda: ad.total(ad.conv2d(x, w, b)), [w], max_coords=54) <= 1e-6


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


def test_conv2d_rejects_even_kernel():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)))


# -- conv1d_axis ------------------------------------------------------------------


def test_conv1d_unit_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(1, 2, 5, 6))
    w = np.zeros((2, 2, 1))
    w[0, 0, 0] = w[1, 1, 0] = 1.0
    for axis in ("width", "height"):
        out = ad.conv1d_axis(Tensor(x), Tensor(w), Tensor(np.zeros(2)), axis)
        np.testing.assert_array_equal(out.data, x)


def test_conv1d_impulse_response():
    k = np.random.default_rng(2).normal(size=15)
    x = np.zeros((1, 1, 7, 7))
    x[0, 0, 3, 3] = 1.0
    out = ad.conv1d_axis(Tensor(x), Tensor(k.reshape(1, 1, 15)), Tensor(np.zeros(1)), "width").data
    # cross-correlation: out[j] = sum_t k[t] x[j + t - 7]; an impulse at 3 gives k[10 - j]
    expected = np.array([k[3 + 7 - j] for j in range(7)])
    np.testing.assert_allclose(out[0, 0, 3], expected, atol=1e-14)
    assert np.all(out[0, 0, np.arange(7) != 3] == 0)


def test_conv1d_separable_equals_outer_product_conv2d():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 1, 9, 10))
    w1, w2 = rng.normal(size=5), rng.normal(size=5)
    zero = Tensor(np.zeros(1))
    y = ad.conv1d_axis(Tensor(x), Tensor(w1.reshape(1, 1, 5)), zero, "width")
    y = ad.conv1d_axis(y, Tensor(w2.reshape(1, 1, 5)), zero, "height")
    z = ad.conv2d(Tensor(x), Tensor(np.outer(w2, w1).reshape(1, 1, 5, 5)), zero)
    np.testing.assert_allclose(y.data, z.data, rtol=1e-5, atol=1e-12)


def test_conv1d_rejects_bad_axis():
    with pytest.raises(ValueError):
        ad.conv1d_axis(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros(1)), "depth")


@pytest.mark.parametrize("op", ["conv2d", "width", "height"])
def test_convolutions_linear_in_input(op):
    rng = np.random.default_rng(4)
    x1, x2 = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(2, 2, 6, 6))
    b = Tensor(rng.normal(size=3))
    if op == "conv2d":
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        fn = lambda x: ad.conv2d(Tensor(x), w, b).data
    else:
        w = Tensor(rng.normal(size=(3, 2, 5)))
        fn = lambda x: ad.conv1d_axis(Tensor(x), w, b, op).data
    bias = b.data.reshape(1, 3, 1, 1)
    lhs = fn(2.0 * x1 - 3.0 * x2)
    rhs = 2.0 * fn(x1) - 3.0 * fn(x2) + 2.0 * bias
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-10)


# -- leaky_relu / pixel_shuffle ----------------------------------------------------


def test_leaky_relu_values():
    np.testing.assert_allclose(ad.leaky_relu(Tensor([-1.0, 0.0, 2.0]), 0.1).data, [-0.1, 0.0, 2.0])


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
def test_leaky_relu_slope_one_is_identity(x):
    np.testing.assert_array_equal(ad.leaky_relu(Tensor(x), 1.0).data, x)


def test_leaky_relu_gradient():
    assert gradcheck.leaky_relu(0) <= 1e-6


def test_pixel_shuffle_layout():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
    np.testing.assert_array_equal(ad.pixel_shuffle(Tensor(x), 2).data[0, 0], [[1.0, 2.0], [3.0, 4.0]])


def test_pixel_shuffle_r1_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
    np.testing.assert_array_equal(ad.pixel_shuffle(Tensor(x), 1).data, x)


@settings(max_examples=30)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_pixel_unshuffle_inverts_shuffle(b, c, r, h, seed):
    x = np.random.default_rng(seed).normal(size=(b, c * r * r, h, h + 1))
    y = ad.pixel_shuffle(Tensor(x), r)
    assert y.shape == (b, c, r * h, r * (h + 1))
    np.testing.assert_array_equal(np.sort(y.data, axis=None), np.sort(x, axis=None))
    np.testing.assert_array_equal(ad.pixel_unshuffle(y, r).data, x)


def test_pixel_shuffle_channel_check():
    with pytest.raises(ShapeError):
        ad.pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2))), 2)


# -- backward ---------------------------------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    grads = backward(ad.total(x))
    np.testing.assert_array_equal(grads[x], np.ones((3, 4)))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_of_l1_to_zero():
    x = Tensor(np.random.default_rng(0).uniform(0.1, 1.0, size=(2, 5)), requires_grad=True)
    (g,) = grad(l1(x, np.zeros((2, 5))), [x])
    np.testing.assert_allclose(g, np.full((2, 5), 0.1), rtol=0, atol=1e-15)


def test_backward_twice_gives_identical_gradients():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
    loss = ad.mean(ad.leaky_relu(ad.conv2d(x, w, Tensor(np.zeros(2)))) ** 2)
    g1 = grad(loss, [x, w])
    g2 = grad(loss, [x, w])
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a, b)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = x * x
    (g,) = grad(ad.total(y + y), [x])
    np.testing.assert_allclose(g, 4.0 * x.data)


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_gradient_shapes_match_values():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(2, 1, 4, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 1, 3, 3)), requires_grad=True)
    grads = backward(ad.mean(ad.pixel_shuffle(ad.conv2d(x, w, Tensor(np.zeros(4))), 2)))
    for leaf, g in grads.items():
        assert g.shape == leaf.shape


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_unreachable_parameter_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    z = Tensor(np.ones(2), requires_grad=True)
    gx, gz = grad(ad.total(x), [x, z])
    np.testing.assert_array_equal(gz, np.zeros(2))


def test_broadcast_gradient_is_reduced():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    ga, gb = grad(ad.total(a * b), [a, b])
    np.testing.assert_array_equal(gb, np.full(4, 3.0))


@pytest.mark.parametrize("name", sorted(gradcheck.SUITES))
def test_finite_difference_suite(name):
    # ten seeds for the elementary ops, three for the full networks
    seeds = range(3) if name in ("srnet", "gnet", "loss_fid", "loss_sinc", "loss_g", "loss_total") else range(10)
    assert max(gradcheck.SUITES[name](s) for s in seeds) <= 1e-4


# -- Adam -------------------------------------------------------------------------


def scalar_adam(theta, g, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return theta


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


@pytest.mark.parametrize("steps", [1, 2, 10])
def test_adam_scalar_reference(steps):
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)
    for _ in range(steps):
        adam_step([p], [np.array([1.0])], state)
    assert p.data[0] == pytest.approx(scalar_adam(0.0, 1.0, steps, 0.1), rel=1e-12)
    if steps == 1:
        assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    init = [rng.normal(size=(3, 3)), rng.normal(size=4)]
    grads = [[rng.normal(size=(3, 3)), rng.normal(size=4)] for _ in range(5)]
    results = []
    for _ in range(2):
        ps = [Tensor(a.copy(), requires_grad=True) for a in init]
        opt = Adam(ps, lr=1e-3)
        for g in grads:
            opt.step(g)
        results.append([p.data for p in ps])
    for a, b in zip(*results):
        np.testing.assert_array_equal(a, b)


def test_adam_moment_shapes_checked():
    p = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState.for_params([p])
    assert state.m[0].shape == p.shape and state.v[0].shape == p.shape
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(4)], state)
