import numpy as np
import pytest

from wavedistill.gradcheck import numerical_grad, relative_error
from wavedistill.tensor import DimensionError, Tensor
from wavedistill.wavelet import (FILTER_BANK, WaveletSubbands, dwt2_forward, dwt2_inverse,
                                 subband_energies, waveconv_downsample)

SMALL = np.array([[1.0, 2.0], [3.0, 4.0]])


def img(a):
    return Tensor(np.asarray(a, dtype=float)[None, None])


def energy(t):
    return float((t.data ** 2).sum())


class TestFilterBank:
    def test_unit_norm_and_orthogonal(self):
        ks = list(FILTER_BANK.values())
        gram = np.array([[np.sum(a * b) for b in ks] for a in ks])
        np.testing.assert_array_equal(gram, np.eye(4))

    def test_matches_stride2_correlation(self):
        x = np.random.default_rng(0).standard_normal((6, 8))
        s = dwt2_forward(img(x))
        for name, k in FILTER_BANK.items():
            want = np.array([[np.sum(x[2 * i:2 * i + 2, 2 * j:2 * j + 2] * k) for j in range(4)]
                             for i in range(3)])
            np.testing.assert_allclose(getattr(s, name).data[0, 0], want, rtol=1e-14, atol=1e-14)


class TestForward:
    def test_two_by_two(self):
        s = dwt2_forward(img(SMALL))
        assert [t.data.item() for t in s] == [5.0, -2.0, -1.0, 0.0]

    def test_constant(self):
        s = dwt2_forward(img(np.full((4, 6), 3.0)))
        np.testing.assert_array_equal(s.ll.data, 6.0)
        for t in s[1:]:
            np.testing.assert_array_equal(t.data, 0.0)

    def test_energy_small(self):
        s = dwt2_forward(img(SMALL))
        assert [energy(t) for t in s] == [25.0, 4.0, 1.0, 0.0]
        assert sum(energy(t) for t in s) == 30.0 == np.sum(SMALL ** 2)

    @pytest.mark.parametrize("shape", [(3, 4), (4, 5), (1, 1)])
    def test_odd_dims_rejected(self, shape):
        with pytest.raises(DimensionError):
            dwt2_forward(img(np.zeros(shape)))
        with pytest.raises(DimensionError):
            waveconv_downsample(img(np.zeros(shape)))


class TestInverse:
    def test_round_trip_random(self):
        x = np.random.default_rng(1).standard_normal((2, 3, 8, 8))
        back = dwt2_inverse(dwt2_forward(Tensor(x)))
        assert np.max(np.abs(back.data - x)) < 1e-9

    def test_synthesis_then_analysis(self):
        rng = np.random.default_rng(2)
        bands = WaveletSubbands(*(Tensor(rng.standard_normal((1, 2, 16, 16))) for _ in range(4)))
        again = dwt2_forward(dwt2_inverse(bands))
        for a, b in zip(again, bands):
            assert np.max(np.abs(a.data - b.data)) < 1e-9

    def test_constant_subbands(self):
        z = np.zeros((1, 1, 2, 2))
        out = dwt2_inverse(WaveletSubbands(Tensor(np.full((1, 1, 2, 2), 6.0)), Tensor(z), Tensor(z), Tensor(z)))
        np.testing.assert_array_equal(out.data, 3.0)

    def test_zero(self):
        z = Tensor(np.zeros((1, 1, 3, 3)))
        assert not dwt2_inverse(WaveletSubbands(z, z, z, z)).data.any()

    def test_mismatched_subbands(self):
        a, b = Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3)))
        with pytest.raises(DimensionError):
            dwt2_inverse(WaveletSubbands(a, a, a, b))


class TestWaveConv:
    def test_two_by_two(self):
        assert waveconv_downsample(img(SMALL)).data.item() == 5.0

    def test_constant(self):
        out = waveconv_downsample(img(np.full((8, 4), 1.25)))
        assert out.shape == (1, 1, 4, 2)
        np.testing.assert_array_equal(out.data, 2.5)

    def test_equals_ll_bitwise(self):
        x = Tensor(np.random.default_rng(3).standard_normal((2, 4, 32, 32)))
        assert np.array_equal(waveconv_downsample(x).data, dwt2_forward(x).ll.data)

    def test_gradient_is_half(self):
        x = Tensor(np.random.default_rng(4).standard_normal((1, 2, 4, 6)), requires_grad=True)
        waveconv_downsample(x).sum().backward()
        np.testing.assert_array_equal(x.grad, 0.5)
        num = numerical_grad(lambda t: waveconv_downsample(t).sum(), [x], 0)
        assert relative_error(num, x.grad) < 1e-9

    def test_shift_by_two_equivariance(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((20, 20))
        shifted = np.roll(x, (2, 2), axis=(0, 1))
        a, b = dwt2_forward(img(x)), dwt2_forward(img(shifted))
        for sa, sb in zip(a, b):
            # interior: output (i+1, j+1) of shifted == output (i, j) of original
            np.testing.assert_allclose(sb.data[0, 0, 1:-1, 1:-1], sa.data[0, 0, :-2, :-2], atol=1e-14)


class TestParseval:
    def test_hundred_random_images(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rng.standard_normal((32, 32)) * rng.uniform(0.1, 100)
            e = subband_energies(x)
            total = np.sum(x ** 2)
            assert abs(sum(e.values()) - total) / total < 1e-9
