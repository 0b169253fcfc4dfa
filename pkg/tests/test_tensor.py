import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavedistill import functional as F
from wavedistill import tensor as T
from wavedistill.gradcheck import check_gradients
from wavedistill.io import decode_wdt1, encode_wdt1
from wavedistill.optim import SGD
from wavedistill.tensor import DimensionError, GraphError, NonFiniteError, Tensor


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


class TestTensor:
    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            T.log(Tensor([0.0]))

    def test_shape_and_data_agree(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert t.shape == (2, 3, 4) and t.data.size == 24 and t.data.dtype == np.float64


class TestBackward:
    def test_sum_gives_ones(self):
        x = param(np.random.default_rng(0).standard_normal((3, 4)))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_square_gives_identity(self):
        x = param(np.random.default_rng(1).standard_normal(5))
        (T.square(x).sum() * 0.5).backward()
        np.testing.assert_allclose(x.grad, x.data, rtol=0, atol=1e-15)

    def test_non_scalar_loss(self):
        x = param([1.0, 2.0])
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_second_backward_without_forward(self):
        x = param([1.0, 2.0])
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_shared_parameter_accumulates(self):
        rng = np.random.default_rng(2)
        w = param(rng.standard_normal((3, 3)))
        x = Tensor(rng.standard_normal((4, 3)))
        # w used twice in one graph
        (T.matmul(T.matmul(x, w), w).sum()).backward()
        twice = w.grad.copy()
        # single-use rewrite: two independent copies, summed adjoints
        w1, w2 = param(w.data), param(w.data)
        (T.matmul(T.matmul(x, w1), w2).sum()).backward()
        np.testing.assert_allclose(twice, w1.grad + w2.grad, rtol=1e-13)

    def test_no_grad_records_nothing(self):
        x = param([1.0])
        with T.no_grad():
            y = x * 3.0
        assert not y.requires_grad and y._parents == ()


class TestConv2d:
    def test_two_by_two_average(self):
        x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        k = Tensor(0.5 * np.ones((1, 1, 2, 2)))
        np.testing.assert_array_equal(F.conv2d(x, k, stride=2).data, [[[[5.0]]]])

    def test_identity_kernel(self):
        x = Tensor(np.random.default_rng(3).standard_normal((2, 3, 5, 4)))
        k = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        np.testing.assert_array_equal(F.conv2d(x, k).data, x.data)

    def test_output_extent(self):
        x = Tensor(np.zeros((1, 2, 9, 7)))
        k = Tensor(np.zeros((4, 2, 3, 3)))
        assert F.conv2d(x, k, stride=2, padding=1).shape == (1, 4, 5, 4)

    def test_shape_mismatch_message(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        k = Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(DimensionError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
            F.conv2d(x, k)

    @pytest.mark.parametrize("seed", range(5))
    def test_flip_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.standard_normal((5, 5))
        ker = rng.standard_normal((3, 3))
        got = F.conv2d(Tensor(img[None, None]), Tensor(ker[None, None])).data[0, 0]
        # true convolution with the flipped kernel, written out directly
        flipped = ker[::-1, ::-1]
        want = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                for a in range(3):
                    for b in range(3):
                        want[i, j] += img[i + a, j + b] * flipped[2 - a, 2 - b]
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-13)


class TestLinearPrelu:
    def test_linear_examples(self):
        x = Tensor([[1.0, 2.0]])
        np.testing.assert_array_equal(F.linear(x, Tensor(np.eye(2))).data, [[1.0, 2.0]])
        np.testing.assert_array_equal(F.linear(x, Tensor([[3.0], [4.0]])).data, [[11.0]])

    def test_linear_zero_input(self):
        w = param(np.ones((3, 2)))
        y = F.linear(Tensor(np.zeros((4, 3))), w)
        assert not y.data.any()
        y.sum().backward()
        assert not w.grad.any()

    def test_linear_mismatch(self):
        with pytest.raises(DimensionError):
            F.linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))))

    @pytest.mark.parametrize("slope,x,want", [
        (0.0, [-1.0, 2.0], [0.0, 2.0]),
        (1.0, [-3.0, 0.5], [-3.0, 0.5]),
        (0.25, [-4.0, 4.0], [-1.0, 4.0]),
    ])
    def test_prelu(self, slope, x, want):
        out = F.prelu(Tensor(np.array(x)[None]), Tensor([slope]))
        np.testing.assert_array_equal(out.data[0], want)

    def test_prelu_zero_takes_positive_branch(self):
        x = param([[0.0]])
        F.prelu(x, Tensor([0.1])).sum().backward()
        assert x.grad[0, 0] == 1.0


class TestBatchNorm:
    def _bn(self, x, c, eps=1e-5, gamma=None, beta=None):
        g = Tensor(np.ones(c) if gamma is None else gamma)
        b = Tensor(np.zeros(c) if beta is None else beta)
        return F.batch_norm2d(Tensor(x), g, b, np.zeros(c), np.ones(c), True, eps=eps)

    def test_standardizes(self):
        x = np.random.default_rng(4).normal(3.0, 2.0, (8, 3, 4, 4))
        y = self._bn(x, 3).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-5)

    def test_zero_gamma_gives_beta(self):
        x = np.random.default_rng(5).standard_normal((4, 2, 3, 3))
        y = self._bn(x, 2, gamma=np.zeros(2), beta=np.array([1.5, -2.0])).data
        np.testing.assert_array_equal(y[:, 0], 1.5)
        np.testing.assert_array_equal(y[:, 1], -2.0)

    def test_two_element_channel(self):
        y = self._bn(np.array([0.0, 2.0]).reshape(2, 1, 1, 1), 1, eps=0.0).data
        np.testing.assert_array_equal(y.reshape(-1), [-1.0, 1.0])

    def test_degenerate_batch(self):
        with pytest.raises(DimensionError):
            self._bn(np.zeros((1, 1, 1, 1)), 1)

    def test_running_stats_in_eval(self):
        rm, rv = np.array([1.0]), np.array([4.0])
        y = F.batch_norm2d(Tensor(np.full((1, 1, 1, 1), 5.0)), Tensor([1.0]), Tensor([0.0]), rm, rv,
                           False, eps=0.0)
        assert y.data.item() == 2.0


class TestSGD:
    def _step(self, p, g, **kw):
        t = param([p])
        opt = SGD({"p": t}, **kw)
        t.grad = np.array([g])
        opt.step()
        return t, opt

    def test_plain_step(self):
        t, _ = self._step(1.0, 1.0, lr=0.1)
        assert t.data[0] == pytest.approx(0.9, abs=1e-15)
        assert t.grad is None

    def test_zero_lr(self):
        t, _ = self._step(1.0, 123.0, lr=0.0)
        assert t.data[0] == 1.0

    def test_momentum_two_steps(self):
        t = param([0.0])
        opt = SGD({"p": t}, lr=0.1, momentum=0.9)
        for _ in range(2):
            t.grad = np.array([1.0])
            opt.step()
        # v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.29
        assert t.data[0] == pytest.approx(-0.29, abs=1e-15)

    def test_missing_grad_names_param(self):
        opt = SGD({"stem.conv.weight": param([1.0])}, lr=0.1)
        with pytest.raises(RuntimeError, match="stem.conv.weight"):
            opt.step()

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0, 1))
    def test_zero_momentum_is_gradient_descent(self, g, lr):
        p0 = np.linspace(-1, 1, len(g))
        t = param(p0)
        opt = SGD({"p": t}, lr=lr, momentum=0.0)
        t.grad = np.array(g)
        opt.step()
        np.testing.assert_array_equal(t.data, p0 - lr * np.array(g))


class TestWdt1:
    def test_layout(self):
        buf = encode_wdt1(np.array([[1.0, 2.0, 3.0]]))
        assert buf[:4] == b"WDT1" and buf[4] == 2
        assert buf[5:13] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert np.frombuffer(buf[13:], "<f8").tolist() == [1.0, 2.0, 3.0]

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=0, max_size=4))
    def test_round_trip(self, shape):
        a = np.random.default_rng(len(shape)).standard_normal(shape)
        np.testing.assert_array_equal(decode_wdt1(encode_wdt1(a)), a)

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            decode_wdt1(b"XXXX\x00" + b"\x00" * 8)


class TestGradients:
    """Finite-difference checks on the primitive ops."""

    @pytest.mark.parametrize("seed", range(3))
    def test_conv2d(self, seed):
        rng = np.random.default_rng(seed)
        x = param(rng.standard_normal((2, 2, 4, 4)))
        k = param(rng.standard_normal((3, 2, 3, 3)))
        proj = Tensor(rng.standard_normal((2, 3, 2, 2)))
        assert check_gradients(lambda a, b: (F.conv2d(a, b, stride=2, padding=1) * proj).sum(), [x, k]) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_batch_norm(self, seed):
        rng = np.random.default_rng(seed)
        x = param(rng.standard_normal((3, 2, 2, 2)))
        g, b = param(rng.standard_normal(2)), param(rng.standard_normal(2))
        proj = Tensor(rng.standard_normal((3, 2, 2, 2)))

        def fn(x, g, b):
            return (F.batch_norm2d(x, g, b, np.zeros(2), np.ones(2), True) * proj).sum()

        assert check_gradients(fn, [x, g, b]) < 1e-4

    def test_elementwise_chain(self):
        rng = np.random.default_rng(9)
        x = param(rng.uniform(0.2, 0.8, (3, 4)))
        y = param(rng.uniform(0.5, 1.5, (3, 4)))

        def fn(x, y):
            z = T.exp(x) / y - T.sqrt(y) * T.cos(x) + T.arccos(x) + T.log(y)
            return T.logsumexp(z, axis=1).sum() + T.log_softmax(z, axis=0).sum()

        assert check_gradients(fn, [x, y]) < 1e-4
