import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavedistill.gradcheck import check_gradients
from wavedistill.losses import (ArcFaceHead, DistillConfig, arcface_logits, arcface_loss,
                                distill_kl_loss, total_loss, wavesim_loss)
from wavedistill.tensor import DimensionError, NonFiniteError, Tensor


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def softmax_ce_oracle(logits, labels):
    """Plain-numpy softmax cross-entropy, written independently of the library."""
    out = []
    for row, y in zip(logits, labels):
        z = row - row.max()
        out.append(math.log(sum(math.exp(v) for v in z)) - z[y])
    return sum(out) / len(out)


class TestArcFace:
    def test_zero_margin_matches_softmax_ce(self):
        rng = np.random.default_rng(0)
        e, w = rng.standard_normal((6, 5)), rng.standard_normal((5, 4))
        labels = rng.integers(0, 4, 6)
        head = ArcFaceHead(Tensor(w), s=8.0, m=0.0)
        en = e / np.linalg.norm(e, axis=1, keepdims=True)
        wn = w / np.linalg.norm(w, axis=0, keepdims=True)
        want = softmax_ce_oracle(8.0 * en @ wn, labels)
        assert abs(arcface_loss(Tensor(e), head, labels).item() - want) < 1e-9

    def test_margin_on_target_only(self):
        rng = np.random.default_rng(1)
        e, w = rng.standard_normal((3, 4)), rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1])
        plain = arcface_logits(Tensor(e), ArcFaceHead(Tensor(w), 2.0, 0.0), labels).data
        marg = arcface_logits(Tensor(e), ArcFaceHead(Tensor(w), 2.0, 0.3), labels).data
        mask = np.zeros_like(plain, dtype=bool)
        mask[np.arange(3), labels] = True
        np.testing.assert_array_equal(plain[~mask], marg[~mask])
        theta = np.arccos(plain[mask] / 2.0)
        np.testing.assert_allclose(marg[mask], 2.0 * np.cos(theta + 0.3), atol=1e-12)

    def test_margin_raises_loss(self):
        rng = np.random.default_rng(2)
        e, w = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, 5)
        lo = arcface_loss(Tensor(e), ArcFaceHead(Tensor(w), 4.0, 0.0), labels).item()
        hi = arcface_loss(Tensor(e), ArcFaceHead(Tensor(w), 4.0, 0.5), labels).item()
        assert hi > lo

    def test_fallback_past_pi(self):
        # embedding pointing opposite its class column: theta = pi
        w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        logits = arcface_logits(Tensor([[-1.0, 0.0]]), ArcFaceHead(w, 1.0, 0.5), [0]).data
        assert logits[0, 0] == pytest.approx(-1.0 - 0.5 * math.sin(0.5), abs=1e-6)

    def test_label_out_of_range(self):
        head = ArcFaceHead(Tensor(np.ones((2, 3))))
        with pytest.raises(IndexError):
            arcface_loss(Tensor(np.ones((1, 2))), head, [3])

    @pytest.mark.parametrize("s,m", [(0.0, 0.5), (-1.0, 0.5), (64.0, -0.1), (64.0, 2.0)])
    def test_bad_hyperparameters(self, s, m):
        with pytest.raises(ValueError):
            ArcFaceHead(Tensor(np.ones((2, 2))), s, m)


class TestDistill:
    def test_identical_logits_give_zero(self):
        z = np.random.default_rng(3).standard_normal((4, 6)) * 5
        for t in (0.5, 1.0, 4.0):
            assert distill_kl_loss(Tensor(z), Tensor(z), t).item() == 0.0

    def test_two_class_reference(self):
        got = distill_kl_loss(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]), 1.0).item()
        e = math.e
        pt = [e / (e + 1), 1 / (e + 1)]
        ps = [1 / (e + 1), e / (e + 1)]
        want = sum(p * math.log(p / q) for p, q in zip(pt, ps))
        assert abs(got - want) < 1e-12
        assert got == pytest.approx(0.46212, abs=1e-5)

    def test_temperature_squared_scaling(self):
        zt, zs = np.array([[2.0, 0.0, -1.0]]), np.array([[0.0, 1.0, 0.5]])
        t = 3.0
        pt = np.exp(zt / t) / np.exp(zt / t).sum()
        ps = np.exp(zs / t) / np.exp(zs / t).sum()
        want = t * t * np.sum(pt * np.log(pt / ps))
        assert distill_kl_loss(Tensor(zt), Tensor(zs), t).item() == pytest.approx(want, rel=1e-12)

    def test_teacher_receives_no_gradient(self):
        zt, zs = param([[1.0, 2.0]]), param([[0.0, 0.0]])
        distill_kl_loss(zt, zs, 2.0).backward()
        assert zt.grad is None and zs.grad is not None

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=3, max_size=3),
           st.lists(st.floats(-20, 20), min_size=3, max_size=3),
           st.floats(0.1, 10))
    def test_non_negative(self, a, b, t):
        assert distill_kl_loss(Tensor([a]), Tensor([b]), t).item() >= -1e-12

    def test_mismatched_shapes(self):
        with pytest.raises(DimensionError):
            distill_kl_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 1.0)


class TestWaveSim:
    def feats(self, seed):
        rng = np.random.default_rng(seed)
        return [Tensor(rng.standard_normal((2, 3, 8, 8))), Tensor(rng.standard_normal((2, 4, 4, 4))),
                Tensor(rng.standard_normal((2, 5, 2, 2)))]

    def test_equal_features_zero(self):
        f = self.feats(4)
        assert wavesim_loss(f, f).item() == 0.0

    def test_zero_ll_detail_invariance(self):
        rng = np.random.default_rng(5)
        f = self.feats(5)
        g = []
        for t in f:
            # checkerboard-within-block pattern: every 2x2 block sums to zero
            d = rng.standard_normal(t.shape[:2] + (t.shape[2] // 2, t.shape[3] // 2))
            detail = np.kron(d, np.array([[1.0, -1.0], [-1.0, 1.0]]))
            g.append(Tensor(t.data + detail))
        assert abs(wavesim_loss(f, g).item()) <= 1e-9

    def test_value_against_direct_sum(self):
        f, g = self.feats(6), self.feats(7)
        want = 0.0
        for k in (0, 1):
            a, b = f[k].data, g[k].data
            lla = 0.5 * (a[..., ::2, ::2] + a[..., ::2, 1::2] + a[..., 1::2, ::2] + a[..., 1::2, 1::2])
            llb = 0.5 * (b[..., ::2, ::2] + b[..., ::2, 1::2] + b[..., 1::2, ::2] + b[..., 1::2, 1::2])
            want += np.sum((lla - llb) ** 2) / a.shape[0]
        assert wavesim_loss(f, g).item() == pytest.approx(want, rel=1e-12)

    def test_stage_shape_mismatch(self):
        f = self.feats(8)
        with pytest.raises(DimensionError):
            wavesim_loss(f, [f[1], f[0]])


class TestTotal:
    @pytest.mark.parametrize("l1, l2, expected", [(2.0, 0.5, 1 + 2 * 3 + 0.5 * 4), (1.0, 0.05, 1 + 3 + 0.05 * 4)])
    def test_weighted_sum(self, l1, l2, expected):
        cfg = DistillConfig(lambda1=l1, lambda2=l2)
        assert total_loss(Tensor(1.0), Tensor(3.0), Tensor(4.0), cfg).item() == pytest.approx(expected, abs=1e-12)

    def test_unit_weights_example(self):
        cfg = DistillConfig(lambda1=1.0, lambda2=0.05)
        assert total_loss(Tensor(1.0), Tensor(2.0), Tensor(4.0), cfg).item() == pytest.approx(3.2, abs=1e-12)

    def test_zero_weights_leave_arcface(self):
        cfg = DistillConfig(lambda1=0.0, lambda2=0.0)
        assert total_loss(Tensor(1.25), Tensor(7.0), Tensor(9.0), cfg).item() == 1.25

    def test_non_finite_component(self):
        with pytest.raises(NonFiniteError):
            total_loss(1.0, np.inf, 0.0, DistillConfig())

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            DistillConfig(temperature=0.0)
        with pytest.raises(ValueError):
            DistillConfig(lambda2=-1.0)


class TestLossGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_arcface(self, seed):
        rng = np.random.default_rng(seed)
        e, w = param(rng.standard_normal((4, 5))), param(rng.standard_normal((5, 3)))
        labels = rng.integers(0, 3, 4)
        assert check_gradients(lambda e, w: arcface_loss(e, ArcFaceHead(w, 4.0, 0.5), labels), [e, w]) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_distill(self, seed):
        rng = np.random.default_rng(seed)
        zt, zs = Tensor(rng.standard_normal((3, 4))), param(rng.standard_normal((3, 4)))
        assert check_gradients(lambda a: distill_kl_loss(zt, a, 2.0), [zs]) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_wavesim(self, seed):
        rng = np.random.default_rng(seed)
        t = [Tensor(rng.standard_normal((2, 2, 4, 4))), Tensor(rng.standard_normal((2, 2, 2, 2)))]
        s = [param(rng.standard_normal((2, 2, 4, 4))), param(rng.standard_normal((2, 2, 2, 2)))]
        assert check_gradients(lambda a, b: wavesim_loss(t, [a, b]), s) < 1e-4
