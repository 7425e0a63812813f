import numpy as np
import pytest
from gradcheck import check_op
from hypothesis import given, settings
from hypothesis import strategies as st

from mpi_smr.nn import (
    Adam,
    AdamState,
    Conv3dParams,
    Tensor,
    adam_step,
    add,
    avg_pool3d,
    concat,
    conv3d,
    leaky_relu,
    mse_loss,
    nn_upsample,
    no_grad,
    scale,
    sum_all,
)

RNG = np.random.default_rng(0)


def rand(*shape):
    return RNG.standard_normal(shape)


def conv(x, w, b):
    return conv3d(x, Conv3dParams(w, b))


def naive_conv3d(x, w, b):
    """Nested-loop same-padded cross-correlation."""
    bsz, cin, z, y, xx = x.shape
    cout, _, kz, ky, kx = w.shape
    pz, py, px = kz // 2, ky // 2, kx // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pz, pz), (py, py), (px, px)))
    out = np.zeros((bsz, cout, z, y, xx))
    for n in range(bsz):
        for o in range(cout):
            for i in range(z):
                for j in range(y):
                    for k in range(xx):
                        out[n, o, i, j, k] = np.sum(xp[n, :, i:i + kz, j:j + ky, k:k + kx] * w[o]) + b[o]
    return out


class TestConv3d:
    def test_pointwise_identity(self):
        x = rand(2, 1, 3, 3, 3)
        out = conv(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_all_ones_center(self):
        out = conv(Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.zeros(1)))
        assert out.data[0, 0, 1, 1, 1] == 27
        assert out.data[0, 0, 0, 0, 0] == 8

    def test_matches_nested_loops(self):
        x, w, b = rand(2, 3, 4, 3, 5), rand(2, 3, 3, 3, 3), rand(2)
        np.testing.assert_allclose(conv(Tensor(x), Tensor(w), Tensor(b)).data, naive_conv3d(x, w, b), atol=1e-10)

    def test_anisotropic_kernel(self):
        x, w, b = rand(1, 2, 4, 4, 4), rand(3, 2, 1, 3, 5), rand(3)
        np.testing.assert_allclose(conv(Tensor(x), Tensor(w), Tensor(b)).data, naive_conv3d(x, w, b), atol=1e-10)

    def test_gradients(self):
        assert check_op(conv, [rand(2, 2, 4, 4, 4), rand(3, 2, 3, 3, 3), rand(3)]) <= 1e-4

    def test_gradient_of_sum_wrt_input(self):
        assert check_op(lambda x, w, b: sum_all(conv(x, w, b)), [rand(1, 1, 3, 3, 3), rand(1, 1, 3, 3, 3), rand(1)]) <= 1e-4

    def test_linearity(self):
        x1, x2, w = rand(1, 2, 4, 4, 4), rand(1, 2, 4, 4, 4), rand(2, 2, 3, 3, 3)
        zero = Tensor(np.zeros(2))
        f = lambda x: conv(Tensor(x), Tensor(w), zero).data  # noqa: E731
        np.testing.assert_allclose(f(2.5 * x1 + x2), 2.5 * f(x1) + f(x2), atol=1e-10)
        g = lambda ww: conv(Tensor(x1), Tensor(ww), zero).data  # noqa: E731
        np.testing.assert_allclose(g(-1.5 * w + w**2), -1.5 * g(w) + g(w**2), atol=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv(Tensor(rand(1, 2, 3, 3, 3)), Tensor(rand(1, 3, 3, 3, 3)), Tensor(rand(1)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            Conv3dParams(Tensor(rand(1, 1, 2, 3, 3)), Tensor(rand(1)))

    def test_float32_output(self):
        x = Tensor(rand(1, 1, 3, 3, 3).astype(np.float32))
        out = conv(x, Tensor(rand(1, 1, 3, 3, 3).astype(np.float32)), Tensor(np.zeros(1, np.float32)))
        assert out.dtype == np.float32


class TestPointwise:
    def test_leaky_values(self):
        out = leaky_relu(Tensor(np.array([1.0, -1.0])), 0.2).data
        np.testing.assert_allclose(out, [1.0, -0.2])

    def test_leaky_gradient(self):
        x = rand(1, 2, 3, 3, 3)
        x[np.abs(x) < 1e-2] = 0.5  # keep away from the kink
        assert check_op(lambda t: leaky_relu(t, 0.2), [x]) <= 1e-4

    def test_add_scale_concat_gradients(self):
        assert check_op(add, [rand(1, 2, 2, 2, 2), rand(1, 2, 2, 2, 2)]) <= 1e-4
        assert check_op(lambda t: scale(t, -0.3), [rand(1, 2, 2, 2, 2)]) <= 1e-4
        assert check_op(lambda a, b: concat([a, b]), [rand(1, 2, 2, 2, 2), rand(1, 3, 2, 2, 2)]) <= 1e-4

    def test_operator_sugar(self):
        a, b = Tensor(np.ones(3)), Tensor(np.full(3, 2.0))
        np.testing.assert_array_equal((a + b).data, 3)
        np.testing.assert_array_equal((2 * a).data, 2)

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError):
            add(Tensor(np.ones(2)), Tensor(np.ones(3)))


class TestUpsample:
    @pytest.mark.parametrize("factor", [2, 3])
    def test_shape_and_gradient(self, factor):
        x = rand(1, 2, 2, 3, 2)
        assert nn_upsample(Tensor(x), factor).shape == (1, 2, 2 * factor, 3 * factor, 2 * factor)
        assert check_op(lambda t: nn_upsample(t, factor), [x]) <= 1e-4

    def test_single_voxel_block(self):
        out = nn_upsample(Tensor(np.full((1, 1, 1, 1, 1), 7.0)), 3).data
        assert out.shape == (1, 1, 3, 3, 3) and np.all(out == 7)

    def test_unsupported_factor(self):
        with pytest.raises(ValueError):
            nn_upsample(Tensor(rand(1, 1, 2, 2, 2)), 4)

    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from([2, 3]), st.integers(1, 3), st.integers(0, 2**31))
    def test_pool_inverts_upsample(self, factor, n, seed):
        x = np.random.default_rng(seed).standard_normal((1, 2, n, n, n))
        np.testing.assert_allclose(avg_pool3d(nn_upsample(Tensor(x), factor), factor).data, x, atol=1e-12)

    def test_pool_gradient(self):
        assert check_op(lambda t: avg_pool3d(t, 2), [rand(1, 1, 4, 4, 4)]) <= 1e-4


class TestLoss:
    def test_zero_when_equal(self):
        x = rand(1, 1, 2, 2, 2)
        assert float(mse_loss(Tensor(x), x).data) == 0

    def test_constant_offset(self):
        x = rand(1, 1, 2, 2, 2)
        assert float(mse_loss(Tensor(x + 0.3), x).data) == pytest.approx(0.09)

    def test_gradient(self):
        target = rand(1, 2, 3, 3, 3)
        assert check_op(lambda t: mse_loss(t, target), [rand(1, 2, 3, 3, 3)]) <= 1e-4

    def test_analytic_gradient(self):
        p, t = rand(1, 1, 2, 2, 2), rand(1, 1, 2, 2, 2)
        pt = Tensor(p, requires_grad=True)
        mse_loss(pt, t).backward()
        np.testing.assert_allclose(pt.grad, 2 * (p - t) / p.size)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(Tensor(np.ones(2)), np.ones(3))


class TestTape:
    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = scale(w, 2.0)
        assert out._backward is None

    def test_shared_input_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        add(scale(x, 2.0), scale(x, 3.0)).backward(np.ones(2))
        np.testing.assert_allclose(x.grad, [5.0, 5.0])

    def test_composite_network_gradient(self):
        def net(x, w1, b1, w2, b2):
            h = leaky_relu(conv(x, w1, b1))
            h = nn_upsample(h, 2)
            return mse_loss(conv(concat([h, h]), w2, b2), np.zeros((1, 1, 4, 4, 4)))

        arrays = [rand(1, 1, 2, 2, 2), rand(2, 1, 3, 3, 3), rand(2), rand(1, 4, 3, 3, 3), rand(1)]
        assert check_op(net, arrays) <= 1e-4


class TestAdam:
    def test_first_step_is_lr_sign(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        g = {"w": np.array([0.5, -4.0, 1e-3])}
        st_ = AdamState(lr=0.01)
        before = p["w"].copy()
        adam_step(p, g, st_)
        np.testing.assert_allclose(before - p["w"], 0.01 * np.sign(g["w"]), atol=1e-5)
        assert st_.t == 1

    def test_zero_gradient_keeps_parameters(self):
        p = {"w": np.array([1.0, 2.0])}
        st_ = AdamState(lr=0.1)
        for _ in range(20):
            adam_step(p, {"w": np.zeros(2)}, st_)
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])

    def test_quadratic_descent(self):
        theta = {"t": np.array([1.0])}
        st_ = AdamState(lr=0.1)
        history = [1.0]
        for _ in range(10):
            adam_step(theta, {"t": 2 * theta["t"]}, st_)
            history.append(abs(theta["t"][0]))
        assert np.all(np.diff(history) < 0)

    def test_gradient_scale_invariance(self):
        g = rand(5)
        a, b = {"w": np.zeros(5)}, {"w": np.zeros(5)}
        adam_step(a, {"w": g}, AdamState(lr=0.1, eps=1e-12))
        adam_step(b, {"w": 1e3 * g}, AdamState(lr=0.1, eps=1e-12))
        np.testing.assert_allclose(a["w"], b["w"], rtol=1e-3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())

    def test_optimizer_wrapper(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.5)
        for _ in range(50):
            opt.zero_grad()
            mse_loss(w, np.zeros(1)).backward()
            opt.step()
        assert abs(w.data[0]) < 0.5 and opt.state.t == 50
