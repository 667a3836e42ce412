import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hsettings, strategies as st
from hypothesis.extra.numpy import arrays

from vstap import error_codes as EC
from vstap.exceptions import InsufficientData, InvalidInput

from .services import (
    EmpiricalMarginal,
    PiecewiseTransform,
    apply_transform,
    empirical_cdf,
    empirical_quantile,
    equiprobable_breakpoints,
    fit_piecewise,
    gaussianize,
    ordinal_ranks,
    power_transform,
    rank_remap,
)


class EmpiricalMarginalTests(SimpleTestCase):
    def test_plotting_positions(self):
        mg = EmpiricalMarginal.from_sample([3.0, 1.0, 2.0])
        self.assertAlmostEqual(empirical_cdf(mg, 2.0), 0.5)
        self.assertAlmostEqual(empirical_cdf(mg, 1.0), 0.5 / 3)
        self.assertAlmostEqual(empirical_cdf(mg, 3.0), 2.5 / 3)

    def test_cdf_clamps_outside_range(self):
        mg = EmpiricalMarginal.from_sample([1.0, 2.0, 3.0, 4.0])
        self.assertAlmostEqual(empirical_cdf(mg, -100.0), 0.125)
        self.assertAlmostEqual(empirical_cdf(mg, 100.0), 0.875)

    def test_ties_share_averaged_position(self):
        mg = EmpiricalMarginal.from_sample([1.0, 2.0, 2.0, 3.0])
        self.assertAlmostEqual(empirical_cdf(mg, 2.0), 0.5)

    def test_sample_restores_time_order(self):
        x = np.array([0.3, -1.2, 5.0, 0.3, 2.2])
        mg = EmpiricalMarginal.from_sample(x)
        np.testing.assert_array_equal(mg.sample(), x)
        np.testing.assert_array_equal(mg.values, np.sort(x))

    def test_too_short_sample(self):
        with self.assertRaises(InsufficientData):
            EmpiricalMarginal.from_sample([1.0])

    def test_non_finite_sample(self):
        with self.assertRaises(InvalidInput):
            EmpiricalMarginal.from_sample([1.0, np.nan, 2.0])

    def test_quantile_rejects_bad_probability(self):
        mg = EmpiricalMarginal.from_sample([1.0, 2.0, 3.0])
        for p in (0.0, 1.0, -0.1, 1.5):
            with self.assertRaises(InvalidInput):
                empirical_quantile(mg, p)

    def test_quantile_inverts_cdf_at_sample_points(self):
        rng = np.random.default_rng(3)
        mg = EmpiricalMarginal.from_sample(rng.standard_normal(200))
        p = empirical_cdf(mg, mg.values)
        np.testing.assert_allclose(empirical_quantile(mg, p), mg.values, atol=1e-12)

    @hsettings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 60), elements=st.floats(-1e6, 1e6)))
    def test_cdf_monotone(self, x):
        mg = EmpiricalMarginal.from_sample(x)
        grid = np.linspace(x.min() - 1, x.max() + 1, 50)
        self.assertTrue(np.all(np.diff(empirical_cdf(mg, grid)) >= 0))


class PiecewiseTransformTests(SimpleTestCase):
    def test_breakpoints_equiprobable(self):
        a = equiprobable_breakpoints(4)
        np.testing.assert_allclose(a, [-0.6744897501960817, 0.0, 0.6744897501960817], atol=1e-12)

    def test_identity_fit_on_gaussian_sample(self):
        rng = np.random.default_rng(0)
        mg = EmpiricalMarginal.from_sample(rng.standard_normal(20_000))
        t = fit_piecewise(mg, 20)
        self.assertEqual(t.m, 20)
        z = np.linspace(-2, 2, 41)
        np.testing.assert_allclose(apply_transform(t, z), z, atol=0.05)

    def test_slopes_non_negative_on_skewed_data(self):
        rng = np.random.default_rng(1)
        mg = EmpiricalMarginal.from_sample(rng.exponential(size=5_000))
        t = fit_piecewise(mg)
        self.assertTrue(np.all(t.slopes >= 0))

    def test_needs_enough_samples(self):
        mg = EmpiricalMarginal.from_sample(np.arange(30.0))
        with self.assertRaises(InsufficientData) as ctx:
            fit_piecewise(mg, 20)
        self.assertEqual(ctx.exception.app_code, EC.MARG_INSUFFICIENT_DATA)

    def test_rejects_single_segment(self):
        mg = EmpiricalMarginal.from_sample(np.arange(30.0))
        with self.assertRaises(InvalidInput):
            fit_piecewise(mg, 1)

    def test_heavy_ties_give_flat_segments(self):
        x = np.repeat([0.0, 1.0], 100)
        t = fit_piecewise(EmpiricalMarginal.from_sample(x), 4)
        self.assertTrue(np.all(np.isfinite(t.intercepts)))
        self.assertTrue(np.all(t.slopes >= 0))

    def test_constructor_validates_shapes(self):
        with self.assertRaises(InvalidInput):
            PiecewiseTransform([0.0], [1.0], [1.0])
        with self.assertRaises(InvalidInput):
            PiecewiseTransform([0.5, 0.0], [0, 0, 0], [1, 1, 1])
        with self.assertRaises(InvalidInput):
            PiecewiseTransform([0.0], [0, 0], [1, -1])

    def test_segment_assignment_on_breakpoint(self):
        t = PiecewiseTransform([0.0], [0.0, 10.0], [1.0, 1.0])
        self.assertEqual(apply_transform(t, 0.0), 0.0)
        self.assertEqual(apply_transform(t, 1e-12), 10.0 + 1e-12)


class RankTests(SimpleTestCase):
    def test_rank_remap_rebuilds_order(self):
        mg = EmpiricalMarginal.from_sample([10.0, 30.0, 20.0])
        np.testing.assert_array_equal(rank_remap([3, 1, 2], mg), [30.0, 10.0, 20.0])

    def test_rank_remap_length_mismatch(self):
        mg = EmpiricalMarginal.from_sample([1.0, 2.0, 3.0])
        with self.assertRaises(InvalidInput) as ctx:
            rank_remap([1, 2], mg)
        self.assertEqual(ctx.exception.app_code, EC.MARG_RANK_MISMATCH)

    def test_rank_remap_requires_permutation(self):
        mg = EmpiricalMarginal.from_sample([1.0, 2.0, 3.0])
        with self.assertRaises(InvalidInput):
            rank_remap([1, 1, 2], mg)

    @hsettings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, 40, elements=st.floats(-100, 100)),
        arrays(np.float64, 40, elements=st.floats(-100, 100)),
    )
    def test_rank_remap_is_permutation_of_target(self, source, target):
        mg = EmpiricalMarginal.from_sample(target)
        out = rank_remap(ordinal_ranks(source), mg)
        np.testing.assert_array_equal(np.sort(out), np.sort(target))

    def test_gaussianize_is_monotone(self):
        mg = EmpiricalMarginal.from_sample([4.0, 1.0, 3.0, 2.0])
        z = gaussianize(mg, np.array([1.0, 2.0, 3.0, 4.0]))
        self.assertTrue(np.all(np.diff(z) > 0))
        self.assertAlmostEqual(z[0], -z[-1])

    def test_power_transform(self):
        np.testing.assert_array_equal(power_transform([[-2.0, 3.0]], 3), [[-8.0, 27.0]])
        np.testing.assert_array_equal(power_transform([-2.0, 3.0], 2), [4.0, 9.0])
