import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flatscan import oracles
from flatscan.losses import (LossWeights, ResidualOperator, Standardizer, cycle_loss,
                             focal_frequency_grad, focal_frequency_loss, full_loss, image_loss,
                             image_loss_grad, l1_grad, l1_loss, smooth_l1_grad,
                             smooth_l1_loss)
from flatscan.metrics import ShapeMismatchError

small = arrays(np.float64, (5, 6, 3), elements=st.floats(0, 1))

# 4x4 single-channel focal frequency value from the direct-summation DFT oracle
FFL_4x4_SEED0 = 0.13046452752352425


def test_default_weights():
    w = LossWeights()
    assert (w.lambda_l1, w.lambda_perc, w.lambda_freq, w.lambda_adv, w.lambda_cycle) == \
        (1.0, 0.3, 0.2, 0.15, 0.25)
    with pytest.raises(ValueError):
        LossWeights(lambda_l1=-1.0)


class TestL1:
    def test_values(self, rng):
        a = rng.uniform(size=(4, 4, 3))
        assert l1_loss(a, a) == 0.0
        assert l1_loss(a, a + 0.25) == pytest.approx(0.25)
        b = rng.uniform(size=(4, 4, 3))
        assert l1_loss(a, b) == pytest.approx(oracles.l1(a, b), abs=1e-12)

    def test_grad(self, rng):
        a, b = rng.uniform(size=(3, 3, 3)), rng.uniform(size=(3, 3, 3))
        g = l1_grad(a, b)
        np.testing.assert_allclose(g, np.sign(a - b) / a.size)


class TestSmoothL1:
    def test_zero_eps_is_l1(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        assert smooth_l1_loss(a, b, 0.0) == l1_loss(a, b)
        np.testing.assert_array_equal(smooth_l1_grad(a, b, 0.0), l1_grad(a, b))

    def test_bounds(self, rng):
        a, b = rng.uniform(size=(6, 6, 3)), rng.uniform(size=(6, 6, 3))
        eps = 1e-2
        val = smooth_l1_loss(a, b, eps)
        assert smooth_l1_loss(a, a, eps) == 0.0
        assert l1_loss(a, b) - eps <= val <= l1_loss(a, b)

    def test_grad_finite_differences(self, rng):
        a, b = rng.uniform(size=(3, 4, 3)), rng.uniform(size=(3, 4, 3))
        g = smooth_l1_grad(a, b, 0.05)
        h = 1e-6
        for idx in [(0, 0, 0), (1, 2, 1), (2, 3, 2)]:
            ap, am = a.copy(), a.copy()
            ap[idx] += h
            am[idx] -= h
            fd = (smooth_l1_loss(ap, b, 0.05) - smooth_l1_loss(am, b, 0.05)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-6)

    def test_in_image_loss(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        w = LossWeights(1.0, 0.0, 0.0, 0.0, 0.0)
        assert image_loss(a, b, w, l1_eps=0.1) == smooth_l1_loss(a, b, 0.1)
        val, g = image_loss_grad(a, b, w, l1_eps=0.1)
        assert val == smooth_l1_loss(a, b, 0.1)
        np.testing.assert_array_equal(g, smooth_l1_grad(a, b, 0.1))


class TestFocalFrequency:
    def test_identical(self, rng):
        a = rng.uniform(size=(5, 7, 3))
        assert focal_frequency_loss(a, a) == 0.0

    def test_constant_offset_dc_only(self):
        c = 0.3
        val = focal_frequency_loss(np.zeros((4, 4)), np.full((4, 4), c))
        assert val == pytest.approx(c * c, rel=1e-12)
        assert val == pytest.approx(oracles.focal_frequency(np.zeros((4, 4)),
                                                            np.full((4, 4), c)), rel=1e-12)

    def test_frozen_oracle_value(self):
        r = np.random.default_rng(0)
        a, b = r.uniform(size=(4, 4, 3)), r.uniform(size=(4, 4, 3))
        assert focal_frequency_loss(a, b) == pytest.approx(FFL_4x4_SEED0, rel=1e-12)

    @pytest.mark.parametrize("shape", [(3, 5, 1), (4, 4, 3), (6, 3, 2)])
    def test_dft_oracle_with_padding(self, rng, shape):
        a, b = rng.uniform(size=shape), rng.uniform(size=shape)
        assert focal_frequency_loss(a, b) == pytest.approx(oracles.focal_frequency(a, b),
                                                           rel=1e-10)

    def test_dft_oracle_matches_fft(self, rng):
        x = rng.uniform(size=(4, 8))
        np.testing.assert_allclose(oracles.dft2(x), np.fft.fft2(x, norm="ortho"), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            focal_frequency_loss(np.zeros((4, 4)), np.zeros((4, 5)))

    @given(small, small)
    @settings(max_examples=25, deadline=None)
    def test_symmetric_nonnegative(self, a, b):
        x, y = focal_frequency_loss(a, b), focal_frequency_loss(b, a)
        assert x >= 0.0 and x == pytest.approx(y, rel=1e-12, abs=1e-15)

    def test_circular_shift_invariance(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        sa, sb = (np.roll(x, (3, -2), axis=(0, 1)) for x in (a, b))
        assert focal_frequency_loss(sa, sb) == pytest.approx(focal_frequency_loss(a, b),
                                                             rel=1e-12)

    @pytest.mark.parametrize("shape", [(4, 4, 3), (5, 3, 2), (6, 7)])
    def test_gradient_finite_differences(self, rng, shape):
        a, b = rng.uniform(size=shape), rng.uniform(size=shape)
        val, g = focal_frequency_grad(a, b)
        assert val == pytest.approx(focal_frequency_loss(a, b), rel=1e-12)
        assert g.shape == a.shape
        h = 1e-6
        for _ in range(8):
            idx = tuple(int(rng.integers(n)) for n in shape)
            ap, am = a.copy(), a.copy()
            ap[idx] += h
            am[idx] -= h
            fd = (focal_frequency_loss(ap, b) - focal_frequency_loss(am, b)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_gradient_zero_at_match(self, rng):
        a = rng.uniform(size=(4, 4, 3))
        assert np.abs(focal_frequency_grad(a, a)[1]).max() == 0.0


class TestImageLoss:
    def test_l1_only(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        w = LossWeights(1.0, 0.0, 0.0, 0.0, 0.0)
        assert image_loss(a, b, w) == l1_loss(a, b)

    def test_default_weights_without_plugins(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        assert image_loss(a, b) == pytest.approx(
            l1_loss(a, b) + 0.2 * focal_frequency_loss(a, b), rel=1e-12)

    def test_all_zero_weights(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        w = LossWeights(0.0, 0.0, 0.0, 0.0, 0.0)
        assert image_loss(a, b, w, perceptual=lambda x, y: 5.0) == 0.0

    def test_plugins_weighted(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        base = image_loss(a, b)
        with_p = image_loss(a, b, perceptual=lambda x, y: 1.0, adversarial=lambda x, y: 2.0)
        assert with_p == pytest.approx(base + 0.3 + 0.15 * 2.0)

    def test_grad_matches_value(self, rng):
        a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        val, g = image_loss_grad(a, b)
        assert val == pytest.approx(image_loss(a, b), rel=1e-12)
        assert g.shape == a.shape


class TestCycle:
    def test_identity_operators(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        z = ResidualOperator.zero()
        assert cycle_loss(x, x, z, z) == 0.0
        assert full_loss(x, x, z, z) == 0.0

    def test_inverse_constants(self, rng):
        i_d = rng.uniform(size=(4, 5, 3))
        c = np.array([0.1, -0.05, 0.2])
        relight, delight = ResidualOperator.constant(c), ResidualOperator.constant(-c)
        assert cycle_loss(i_d, i_d + c, delight, relight) == pytest.approx(0.0, abs=1e-15)
        assert full_loss(i_d, i_d + c, delight, relight) == pytest.approx(0.0, abs=1e-15)

    def test_hand_composed_oracle(self, rng):
        i_d, i_l = rng.uniform(size=(6, 6, 3)), rng.uniform(size=(6, 6, 3))
        d_op = ResidualOperator(lambda x: -0.3 * x ** 2)
        r_op = ResidualOperator(lambda x: 0.1 * np.sin(x))
        d = lambda x: x - 0.3 * x ** 2  # noqa: E731
        r = lambda x: x + 0.1 * np.sin(x)  # noqa: E731
        w = LossWeights(lambda_cycle=0.4)
        cyc = image_loss(i_d, d(r(i_d)), w) + image_loss(i_l, r(d(i_l)), w)
        assert cycle_loss(i_d, i_l, d_op, r_op, w) == pytest.approx(cyc, abs=1e-12)
        full = image_loss(i_d, d(i_l), w) + image_loss(i_l, r(i_d), w) + 0.4 * cyc
        assert full_loss(i_d, i_l, d_op, r_op, w) == pytest.approx(full, abs=1e-12)

    def test_no_cycle_weight(self, rng):
        i_d, i_l = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        z = ResidualOperator.zero()
        w = LossWeights(lambda_cycle=0.0)
        assert full_loss(i_d, i_l, z, z, w) == pytest.approx(2 * image_loss(i_d, i_l, w))

    def test_monotone_in_cycle_weight(self, rng):
        i_d, i_l = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
        d_op, r_op = ResidualOperator.constant(0.1), ResidualOperator.constant(0.05)
        vals = [full_loss(i_d, i_l, d_op, r_op, LossWeights(lambda_cycle=c))
                for c in (0.0, 0.25, 0.5, 1.0)]
        assert vals == sorted(vals)

    def test_residual_shape_check(self):
        bad = ResidualOperator(lambda x: np.zeros((1, 1, 3)))
        with pytest.raises(ValueError):
            bad(np.zeros((2, 2, 3)))


def test_standardizer_roundtrip(rng):
    s = Standardizer((0.2, 0.3, 0.4), (0.1, 0.0, 0.2))
    x = rng.uniform(size=(3, 3, 3))
    np.testing.assert_allclose(s.invert(s.apply(x)), x)
    assert s.apply(np.full((1, 1, 3), 0.3))[0, 0, 1] == pytest.approx(0.0)
