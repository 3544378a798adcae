import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zapslab.oracle import dense_transform_matrix
from zapslab.wavelet import (
    FAMILIES,
    WaveletBasis,
    apply_diagonalized_hessian,
    dwt2_forward,
    dwt2_inverse,
    from_transform_order,
    subband_levels,
    to_transform_order,
    transform_order,
)

# published db4 reconstruction low-pass taps (12 significant digits)
DB4_PUBLISHED = [0.230377813309, 0.714846570553, 0.630880767930, -0.027983769417,
                 -0.187034811719, 0.030841381836, 0.032883011667, -0.010597401785]


class TestFilters:
    def test_db4_matches_published(self):
        np.testing.assert_allclose(WaveletBasis("db4").lo, DB4_PUBLISHED, atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_normalization(self, family):
        lo = WaveletBasis(family).lo
        assert lo.sum() == pytest.approx(np.sqrt(2), abs=1e-15)
        assert np.sum(lo**2) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_double_shift_orthogonality(self, family):
        lo = WaveletBasis(family).lo
        for shift in range(2, lo.size, 2):
            assert np.dot(lo[:-shift], lo[shift:]) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_vanishing_moments(self, family):
        basis = WaveletBasis(family)
        k = np.arange(basis.hi.size)
        for m in range(basis.hi.size // 2):
            assert np.sum(basis.hi * k**m) == pytest.approx(0.0, abs=1e-8 * max(1, k.max() ** m))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            WaveletBasis("haar3")
        with pytest.raises(ValueError):
            WaveletBasis("db4", 0)


class TestTransform:
    def test_zero(self, db4):
        np.testing.assert_array_equal(dwt2_forward(np.zeros((1, 16, 16)), db4), 0)
        np.testing.assert_array_equal(dwt2_inverse(np.zeros((1, 16, 16)), db4), 0)

    def test_constant_has_no_details(self, db4):
        c = dwt2_forward(np.full((1, 32, 32), 0.7), db4)
        levels = subband_levels((32, 32), 2)
        np.testing.assert_allclose(c[0][levels > 0], 0.0, atol=1e-13)
        # orthonormal: all energy lands in the 8x8 coarse block
        assert np.sum(c**2) == pytest.approx(0.7**2 * 1024, rel=1e-13)
        np.testing.assert_allclose(c[0][levels == 0], 0.7 * 4.0, rtol=1e-13)

    def test_energy(self, db4, rng):
        for _ in range(10):
            x = rng.standard_normal((1, 32, 32))
            assert np.linalg.norm(dwt2_forward(x, db4)) == pytest.approx(np.linalg.norm(x), rel=1e-12)

    def test_round_trip_many(self, db4, rng):
        x = rng.standard_normal((100, 32, 32))
        np.testing.assert_allclose(dwt2_inverse(dwt2_forward(x, db4), db4), x, atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("levels", [1, 2, 3])
    def test_dense_orthogonal(self, family, levels):
        basis = WaveletBasis(family, levels)
        W = dense_transform_matrix(lambda c: dwt2_inverse(c, basis), (1, 8, 8))
        np.testing.assert_allclose(W.T @ W, np.eye(64), atol=1e-12)
        Wf = dense_transform_matrix(lambda x: dwt2_forward(x, basis), (1, 8, 8))
        np.testing.assert_allclose(Wf, W.T, atol=1e-13)

    def test_multichannel_independent(self, db4, rng):
        x = rng.standard_normal((3, 16, 16))
        c = dwt2_forward(x, db4)
        np.testing.assert_allclose(c[1], dwt2_forward(x[1:2], db4)[0], atol=1e-15)

    def test_rectangular(self, db4, rng):
        x = rng.standard_normal((2, 16, 32))
        np.testing.assert_allclose(dwt2_inverse(dwt2_forward(x, db4), db4), x, atol=1e-12)

    def test_indivisible(self):
        with pytest.raises(ValueError, match="divisible"):
            dwt2_forward(np.zeros((1, 12, 12)), WaveletBasis("db4", 3))

    @settings(max_examples=20, deadline=None)
    @given(family=st.sampled_from(FAMILIES), levels=st.integers(1, 3), k=st.integers(3, 6),
           seed=st.integers(0, 2**31))
    def test_round_trip_property(self, family, levels, k, seed):
        basis = WaveletBasis(family, levels)
        x = np.random.default_rng(seed).standard_normal((1, 2**k, 2**k))
        c = dwt2_forward(x, basis)
        np.testing.assert_allclose(dwt2_inverse(c, basis), x, atol=1e-11)
        assert np.sum(c**2) == pytest.approx(np.sum(x**2), rel=1e-11)


class TestDiagonalHessian:
    def test_ones_identity(self, db4, rng):
        v = rng.standard_normal((1, 16, 16))
        np.testing.assert_allclose(apply_diagonalized_hessian(np.ones((1, 16, 16)), v, db4), v, atol=1e-13)

    def test_constant_scales(self, db4, rng):
        v = rng.standard_normal((1, 16, 16))
        np.testing.assert_allclose(apply_diagonalized_hessian(np.full((1, 16, 16), -2.5), v, db4), -2.5 * v,
                                   atol=1e-12)

    def test_symmetric(self, db4, rng):
        d = rng.standard_normal((1, 16, 16))
        u, v = rng.standard_normal((2, 1, 16, 16))
        lhs = np.vdot(apply_diagonalized_hessian(d, u, db4), v)
        assert lhs == pytest.approx(np.vdot(u, apply_diagonalized_hessian(d, v, db4)), rel=1e-12)

    def test_channel_broadcast(self, db4, rng):
        d = rng.standard_normal((1, 16, 16))
        v = rng.standard_normal((3, 16, 16))
        out = apply_diagonalized_hessian(d, v, db4)
        np.testing.assert_allclose(out[2], apply_diagonalized_hessian(d, v[2:3], db4)[0], atol=1e-14)

    def test_bad_shape(self, db4):
        with pytest.raises(ValueError):
            apply_diagonalized_hessian(np.ones((2, 16, 16)), np.ones((3, 16, 16)), db4)


class TestOrdering:
    def test_permutation(self):
        order = transform_order((32, 32), 2)
        np.testing.assert_array_equal(np.sort(order), np.arange(1024))
        # coarse 8x8 block first, finest HH block last
        assert order[0] == 0 and order[63] == 7 * 32 + 7
        assert order[-1] == 31 * 32 + 31

    def test_round_trip(self, rng):
        c = rng.standard_normal((2, 16, 16))
        flat = to_transform_order(c, 2)
        assert flat.shape == (512,)
        np.testing.assert_array_equal(from_transform_order(flat, c.shape, 2), c)

    def test_levels_map(self):
        lv = subband_levels((8, 8), 2)
        assert lv[0, 0] == 0 and lv[0, 3] == 2 and lv[7, 7] == 1
        assert np.sum(lv == 0) == 4 and np.sum(lv == 1) == 48
