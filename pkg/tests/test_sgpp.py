"""Tests for polar resampling, circumferential pooling and global averaging."""

import numpy as np
import pytest

from symnav import tensor as T
from symnav.oracles import bilinear_sample_oracle, extended_precision_mean
from symnav.sgpp import (cartesian_to_polar, circumferential_average,
                         global_average_pool, sgpp)
from symnav.tensor import GradientTape, ShapeError, Tensor


def _rot(x, m):
    return np.ascontiguousarray(np.rot90(x, m, axes=(-2, -1)))


class TestCartesianToPolar:
    def test_constant_input(self):
        out = cartesian_to_polar(Tensor(np.full((2, 8, 8), 3.25)), 4, 8)
        np.testing.assert_allclose(out.data.data, 3.25, atol=1e-12)

    def test_grid_invariants(self):
        p = cartesian_to_polar(Tensor(np.zeros((1, 64, 64))), 16, 32)
        assert len(p.angles) == 32
        np.testing.assert_allclose(np.diff(p.angles), 2 * np.pi / 32, atol=1e-12)
        assert np.all(np.diff(p.radii) > 0)
        assert p.radii[-1] <= (64 - 1) / 2.0  # inscribed disk only

    def test_concentric_rings_have_flat_rows(self):
        # a radius-dependent pattern should be nearly constant along each ring;
        # the 0.2 bound was measured for bilinear resampling at this resolution
        h = 64
        yy, xx = np.mgrid[0:h, 0:h]
        c = (h - 1) / 2.0
        rad = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
        ring = np.cos(rad * 1.1)[None]
        p = cartesian_to_polar(Tensor(ring), 16, 32).data.data
        spread = (p.max(axis=2) - p.min(axis=2)).max()
        assert spread < 0.2

    def test_impulse_matches_per_sample_oracle(self):
        img = np.zeros((9, 9))
        img[2, 5] = 1.0
        p = cartesian_to_polar(Tensor(img[None]), 5, 8)
        c = (9 - 1) / 2.0
        for ri, rho in enumerate(p.radii):
            for ai, ang in enumerate(p.angles):
                want = bilinear_sample_oracle(img, c + rho * np.sin(ang), c + rho * np.cos(ang))
                assert abs(p.data.data[0, ri, ai] - want) < 1e-12

    def test_random_image_matches_per_sample_oracle(self):
        rng = np.random.default_rng(1)
        img = rng.standard_normal((7, 7))
        p = cartesian_to_polar(Tensor(img[None]), 4, 12)
        c = (7 - 1) / 2.0
        for ri, rho in enumerate(p.radii):
            for ai, ang in enumerate(p.angles):
                want = bilinear_sample_oracle(img, c + rho * np.sin(ang), c + rho * np.cos(ang))
                assert abs(p.data.data[0, ri, ai] - want) < 1e-9

    def test_bad_arguments(self):
        with pytest.raises(ShapeError):
            cartesian_to_polar(Tensor(np.zeros((1, 4, 6))), 2, 4)   # not square
        with pytest.raises(ShapeError):
            cartesian_to_polar(Tensor(np.zeros((1, 4, 4))), 0, 4)
        with pytest.raises(ShapeError):
            cartesian_to_polar(Tensor(np.zeros((1, 4, 4))), 2, 6)   # A not mult of 4

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x = Tensor.param(rng.standard_normal((2, 8, 8)))
        fn = lambda t: T.reduce("sum", T.square(cartesian_to_polar(t, 4, 8).data))
        with GradientTape() as tape:
            loss = fn(x)
        tape.backward(loss)
        fd = T.finite_difference_gradient(fn, x)
        rel = np.abs(tape.gradient(x).data - fd.data) / np.maximum(np.abs(fd.data), 1e-6)
        assert rel.max() < 1e-3


class TestCircumferentialAverage:
    def test_all_ones(self):
        p = cartesian_to_polar(Tensor(np.ones((2, 6, 6))), 3, 4)
        out = circumferential_average(p).data.data
        np.testing.assert_allclose(out, 1.0, atol=1e-12)

    def test_alternating_row(self):
        p = cartesian_to_polar(Tensor(np.ones((1, 6, 6))), 1, 4)
        p.data = Tensor(np.array([[[0.0, 1.0, 0.0, 1.0]]]))
        out = circumferential_average(p).data.data
        np.testing.assert_allclose(out, [[0.5]])

    def test_matches_extended_precision_sum(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal((2, 3, 8))
        p = cartesian_to_polar(Tensor(np.zeros((2, 16, 16))), 3, 8)
        p.data = Tensor(vals)
        out = circumferential_average(p).data.data
        for c in range(2):
            for r in range(3):
                assert abs(out[c, r] - extended_precision_mean(vals[c, r])) < 1e-12


class TestSgpp:
    def test_quarter_turn_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            x = rng.standard_normal((3, 32, 32))
            base = sgpp(Tensor(x), 16, 16).data.data
            for m in range(4):
                got = sgpp(Tensor(_rot(x, m)), 16, 16).data.data
                assert np.abs(got - base).max() <= 1e-9

    def test_not_translation_invariant(self):
        # an off-center block moved radially lands in different rings
        x = np.zeros((1, 32, 32))
        x[0, 12:20, 18:26] = 1.0
        shifted = np.roll(x, 6, axis=2)
        a = sgpp(Tensor(x), 16, 16).data.data
        b = sgpp(Tensor(shifted), 16, 16).data.data
        assert np.abs(a - b).max() > 0.1
        assert np.argmax(a[0]) != np.argmax(b[0])

    def test_not_scale_invariant(self):
        # a 2x nearest-neighbor upsample of a ring moves energy outward
        h = 32
        yy, xx = np.mgrid[0:h, 0:h]
        c = (h - 1) / 2.0
        rad = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
        ring = ((rad > 4) & (rad < 6)).astype(float)[None]
        scaled = np.kron(ring[0], np.ones((2, 2)))[None, 8:40, 8:40]  # center crop
        a = sgpp(Tensor(ring), 16, 16).data.data
        b = sgpp(Tensor(scaled), 16, 16).data.data
        assert np.argmax(a[0]) != np.argmax(b[0])

    def test_output_shape(self):
        out = sgpp(Tensor(np.zeros((5, 16, 16))), 16, 16)
        assert out.data.shape == (5, 16)


class TestGlobalAveragePool:
    def test_constant(self):
        out = global_average_pool(Tensor(np.full((3, 4, 4), 2.5)))
        np.testing.assert_allclose(out.data, [2.5, 2.5, 2.5])

    def test_dihedral_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 6, 6))
        base = global_average_pool(Tensor(x)).data
        for m in range(4):
            np.testing.assert_array_equal(global_average_pool(Tensor(_rot(x, m))).data, base)
            flipped = np.ascontiguousarray(_rot(x, m)[:, ::-1])
            np.testing.assert_array_equal(global_average_pool(Tensor(flipped)).data, base)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 4, 4))
        perm = rng.permutation(16)
        shuffled = x.reshape(2, 16)[:, perm].reshape(2, 4, 4)
        np.testing.assert_allclose(global_average_pool(Tensor(shuffled)).data,
                                   global_average_pool(Tensor(x)).data, atol=1e-12)
