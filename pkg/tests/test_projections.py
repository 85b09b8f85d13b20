import math

import numpy as np
import pytest
from scipy import stats

from prpnet.linalg import SeededRng, rng_standard_normal
from prpnet.projections import (
    InitScheme,
    from_descriptor,
    init_gaussian,
    init_orthogonal,
    init_sparse_ternary,
    init_sparse_ternary_achlioptas,
    jl_distortion_stats,
    make_projection,
    regenerate,
    verify_against,
)


class TestGaussian:
    def test_variance_784x512(self):
        p = init_gaussian(784, 512, seed=1).p
        assert 0.9 / 784 <= p.var() <= 1.1 / 784
        assert abs(p.mean()) < 1e-3

    def test_deterministic(self):
        assert init_gaussian(30, 20, 5).p.tobytes() == init_gaussian(30, 20, 5).p.tobytes()

    def test_row_major_draw_order(self):
        z = rng_standard_normal(SeededRng(9), 12).reshape(3, 4)
        np.testing.assert_array_equal(init_gaussian(3, 4, 9).p, z / math.sqrt(3))

    def test_unit_fan_in_is_standard_normal(self):
        p = init_gaussian(1, 10_000, seed=3).p.ravel()
        assert stats.kstest(p, "norm").statistic < 0.02

    def test_zero_dims(self):
        with pytest.raises(ValueError):
            init_gaussian(0, 3, 1)


class TestTernary:
    def test_support(self):
        d_in = 50
        p = init_sparse_ternary(d_in, 40, 2).p
        a = math.sqrt(3 / d_in)
        assert set(np.unique(p).tolist()) <= {-a, 0.0, a}

    def test_zero_fraction(self):
        p = init_sparse_ternary(400, 250, 4).p
        assert abs(np.mean(p == 0.0) - 1 / 3) <= 0.01

    def test_unit_magnitude_for_three_inputs(self):
        p = init_sparse_ternary(3, 100, 0).p
        assert set(np.abs(p[p != 0]).tolist()) == {1.0}

    def test_literal_variance_is_two_over_d_in(self):
        d_in = 400
        p = init_sparse_ternary(d_in, 250, 6).p
        assert 0.9 * 2 / d_in <= p.var() <= 1.1 * 2 / d_in

    def test_achlioptas_variance(self):
        d_in = 400
        p = init_sparse_ternary_achlioptas(d_in, 250, 6).p
        assert 0.9 / d_in <= p.var() <= 1.1 / d_in
        assert abs(np.mean(p == 0.0) - 2 / 3) <= 0.01


class TestOrthogonal:
    def test_square(self):
        p = init_orthogonal(4, 4, 0).p
        np.testing.assert_allclose(p.T @ p, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(p @ p.T, np.eye(4), atol=1e-10)

    def test_isometry_of_columns(self):
        p = init_orthogonal(784, 512, 1).p
        z = rng_standard_normal(SeededRng(77), 100 * 512).reshape(100, 512)
        ratio = np.linalg.norm(z @ p.T, axis=1) / np.linalg.norm(z, axis=1)
        assert np.all(np.abs(ratio - 1.0) <= 1e-9)

    def test_wide_rejected(self):
        with pytest.raises(ValueError):
            init_orthogonal(3, 5, 0)

    @pytest.mark.parametrize("d_in,d_out", [(5, 5), (16, 16), (10, 3), (64, 32), (100, 99),
                                            (8, 1), (30, 30), (50, 7), (200, 120), (12, 11)])
    def test_orthonormal_columns(self, d_in, d_out):
        p = init_orthogonal(d_in, d_out, seed=d_in * 31 + d_out).p
        assert np.max(np.abs(p.T @ p - np.eye(d_out))) <= 1e-10


class TestRegenerate:
    def test_bit_exact(self):
        assert regenerate(InitScheme.GAUSSIAN, 7, 100, 50).p.tobytes() == init_gaussian(100, 50, 7).p.tobytes()

    @pytest.mark.parametrize("scheme", list(InitScheme))
    def test_descriptor_round_trip(self, scheme):
        proj = make_projection(scheme, 20, 10, 123)
        desc = proj.descriptor()
        back = from_descriptor(desc)
        assert back.checksum == desc["checksum"]
        assert back.p.tobytes() == proj.p.tobytes()

    def test_transposed_descriptor(self):
        proj = init_orthogonal(20, 10, 3).T()
        back = from_descriptor(proj.descriptor())
        assert back.transposed and back.p.tobytes() == np.ascontiguousarray(proj.p).tobytes()

    def test_mismatched_dims(self):
        proj = init_gaussian(10, 5, 1)
        desc = proj.descriptor() | {"d_in": 11}
        with pytest.raises(ValueError):
            verify_against(proj, desc)
        with pytest.raises(ValueError):
            from_descriptor(desc)

    def test_checksum_mismatch(self):
        desc = init_gaussian(10, 5, 1).descriptor() | {"checksum": "0" * 16}
        with pytest.raises(ValueError, match="checksum"):
            from_descriptor(desc)

    def test_immutable(self):
        proj = init_gaussian(4, 3, 0)
        with pytest.raises(ValueError):
            proj.p[0, 0] = 1.0

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            InitScheme.parse("hadamard")


class TestDistortion:
    def test_square_orthogonal_is_isometry(self):
        p = init_orthogonal(32, 32, 0)
        pts = rng_standard_normal(SeededRng(1), 40 * 32).reshape(40, 32)
        s = jl_distortion_stats(p, pts, 200, seed=2)
        assert s.max_distortion <= 1e-9

    def test_gaussian_1000_to_256(self):
        p = init_gaussian(1000, 256, 0)
        pts = rng_standard_normal(SeededRng(5), 50 * 1000).reshape(50, 1000)
        s = jl_distortion_stats(p, pts, 500, seed=3)
        assert s.mean_distortion < 0.15
        # oracle: direct computation on all pairs
        diffs = pts[:, None, :] - pts[None, :, :]
        iu = np.triu_indices(50, 1)
        d = diffs[iu]
        gain = 256 / 1000
        direct = np.abs(np.sum((d @ p.p) ** 2, axis=1) / (gain * np.sum(d ** 2, axis=1)) - 1)
        assert direct.mean() < 0.15

    def test_unnormalized_ratio_tracks_gain(self):
        p = init_gaussian(1000, 256, 0)
        pts = rng_standard_normal(SeededRng(5), 50 * 1000).reshape(50, 1000)
        s = jl_distortion_stats(p, pts, 500, seed=3, normalize=False)
        assert abs(s.mean_distortion - (1 - 256 / 1000)) < 0.05

    def test_identical_points_skipped(self):
        p = init_gaussian(3, 2, 0)
        s = jl_distortion_stats(p, np.ones((2, 3)), 1, seed=0)
        assert s.pairs_used == 0
        assert len(s.skipped_pairs) == 1

    def test_pure_function(self):
        p = init_gaussian(10, 5, 0)
        pts = rng_standard_normal(SeededRng(5), 100).reshape(10, 10)
        assert jl_distortion_stats(p, pts, 30, 1) == jl_distortion_stats(p, pts, 30, 1)
