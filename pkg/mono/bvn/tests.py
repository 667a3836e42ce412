import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hsettings, strategies as st
from scipy.stats import multivariate_normal

from marginal.services import EmpiricalMarginal, PiecewiseTransform, equiprobable_breakpoints, fit_piecewise
from vstap import error_codes as EC
from vstap.exceptions import DegenerateRegion, InvalidInput

from .services import (
    CorrelationTransform,
    Rect,
    bvn_cdf,
    bvn_rect_prob,
    grid_moments,
    product_moment,
    psi_eval,
    q_integral,
    transform_moments,
    trunc_moments,
)

INF = np.inf
rhos = st.floats(-0.99, 0.99)


def identity_transform(m=20):
    a = equiprobable_breakpoints(m)
    return PiecewiseTransform(a, np.zeros(m), np.ones(m))


class RectProbabilityTests(SimpleTestCase):
    def test_quadrant(self):
        self.assertAlmostEqual(bvn_rect_prob(Rect(0, INF, 0, INF), 0.5), 1 / 3, places=12)

    def test_independent_box(self):
        from scipy.special import ndtr

        want = (ndtr(1) - ndtr(-1)) ** 2
        self.assertAlmostEqual(bvn_rect_prob(Rect(-1, 1, -1, 1), 0.0), want, places=12)

    def test_full_plane(self):
        self.assertAlmostEqual(bvn_rect_prob(Rect.full_plane(), 0.3), 1.0, places=14)

    def test_rejects_invalid_correlation(self):
        for rho in (1.0, -1.0, 1.5):
            with self.assertRaises(InvalidInput) as ctx:
                bvn_rect_prob(Rect(0, 1, 0, 1), rho)
            self.assertEqual(ctx.exception.app_code, EC.BVN_INVALID_CORRELATION)

    def test_rejects_inverted_rectangle(self):
        with self.assertRaises(InvalidInput):
            Rect(1, 0, 0, 1)

    def test_cdf_matches_scipy(self):
        for rho in (-0.95, -0.5, 0.0, 0.2, 0.8, 0.97):
            mvn = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]])
            for h, k in [(-1.0, 0.5), (0.3, 0.3), (2.0, -1.5), (-2.5, -2.5)]:
                self.assertAlmostEqual(float(bvn_cdf(h, k, rho)), mvn.cdf([h, k]), places=4)

    @hsettings(max_examples=60, deadline=None)
    @given(rhos, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 3), st.floats(0.01, 3))
    def test_probability_in_unit_interval(self, rho, x, y, wx, wy):
        p = bvn_rect_prob(Rect(x, x + wx, y, y + wy), rho)
        self.assertGreaterEqual(p, 0.0)
        self.assertLessEqual(p, 1.0)

    @hsettings(max_examples=40, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 3), st.floats(0.01, 3), st.floats(0.05, 0.95), rhos)
    def test_split_rectangles_add_up(self, x, y, wx, wy, frac, rho):
        cut = x + frac * wx
        whole = bvn_rect_prob(Rect(x, x + wx, y, y + wy), rho)
        parts = bvn_rect_prob(Rect(x, cut, y, y + wy), rho) + bvn_rect_prob(Rect(cut, x + wx, y, y + wy), rho)
        self.assertAlmostEqual(parts, whole, places=9)

        tail = bvn_rect_prob(Rect(x, INF, y, INF), rho)
        split = bvn_rect_prob(Rect(x, INF, y, y + wy), rho) + bvn_rect_prob(Rect(x, INF, y + wy, INF), rho)
        self.assertAlmostEqual(split, tail, places=9)


class QIntegralTests(SimpleTestCase):
    def test_limits(self):
        self.assertEqual(q_integral(0.4, -INF, 0.5), 1.0)
        self.assertEqual(q_integral(0.4, INF, 0.5), 0.0)

    def test_zero_correlation_is_upper_tail(self):
        from scipy.special import ndtr

        self.assertAlmostEqual(q_integral(1.7, 0.3, 0.0), ndtr(-0.3), places=14)

    def test_vectorised(self):
        out = q_integral(np.array([0.0, 1.0]), np.array([0.0, 0.0]), 0.5)
        self.assertEqual(out.shape, (2,))


class TruncatedMomentTests(SimpleTestCase):
    def test_full_plane(self):
        p, m10, m01, m11 = trunc_moments(Rect.full_plane(), 0.3)
        self.assertAlmostEqual(p, 1.0, places=12)
        self.assertAlmostEqual(m10, 0.0, places=12)
        self.assertAlmostEqual(m01, 0.0, places=12)
        self.assertAlmostEqual(m11, 0.3, places=12)

    def test_positive_quadrant_independent(self):
        p, m10, m01, m11 = trunc_moments(Rect(0, INF, 0, INF), 0.0)
        self.assertAlmostEqual(p, 0.25, places=12)
        self.assertAlmostEqual(m10, math.sqrt(2 / math.pi), places=10)
        self.assertAlmostEqual(m01, math.sqrt(2 / math.pi), places=10)
        self.assertAlmostEqual(m11, 2 / math.pi, places=10)

    def test_symmetric_box_has_zero_mean(self):
        _, m10, m01, _ = trunc_moments(Rect(-1, 1, -1, 1), 0.6)
        self.assertAlmostEqual(m10, 0.0, places=12)
        self.assertAlmostEqual(m01, 0.0, places=12)

    def test_degenerate_region(self):
        with self.assertRaises(DegenerateRegion):
            trunc_moments(Rect(40, 41, 40, 41), 0.0)

    def test_total_expectation_identity(self):
        edges = np.concatenate(([-INF], equiprobable_breakpoints(20), [INF]))
        for rho in (-0.9, 0.0, 0.5):
            prob, m10, m01, m11 = grid_moments(edges, edges, rho)
            self.assertAlmostEqual(prob.sum(), 1.0, places=10)
            self.assertAlmostEqual(m10.sum(), 0.0, places=10)
            self.assertAlmostEqual(m01.sum(), 0.0, places=10)
            self.assertLess(abs(m11.sum() - rho), 1e-8)


class CorrelationTransformTests(SimpleTestCase):
    def test_product_moment_identity(self):
        t = identity_transform()
        self.assertAlmostEqual(product_moment(t, t, 0.37), 0.37, places=10)

    def test_identity_psi(self):
        t = identity_transform()
        self.assertAlmostEqual(psi_eval(t, t, 0.37, 0.0, 0.0, 1.0, 1.0), 0.37, places=10)

    def test_breakpoint_mismatch(self):
        with self.assertRaises(InvalidInput) as ctx:
            product_moment(identity_transform(20), identity_transform(10), 0.1)
        self.assertEqual(ctx.exception.app_code, EC.BVN_BREAKPOINT_MISMATCH)

    def test_cubic_fit_follows_closed_form(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(100_000) ** 3
        mg = EmpiricalMarginal.from_sample(x)
        t = fit_piecewise(mg, 20)
        psi = CorrelationTransform(t, t, mg.mean, mg.mean, mg.sd, mg.sd)
        for rho in (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9):
            self.assertLess(abs(psi(rho) - (0.4 * rho ** 3 + 0.6 * rho)), 0.02)

    def test_psi_is_clamped(self):
        t = identity_transform()
        # sd far below the transform's spread pushes the raw value past 1
        self.assertEqual(psi_eval(t, t, 0.9, 0.0, 0.0, 0.5, 0.5), 1.0)

    def test_non_positive_sd(self):
        t = identity_transform()
        with self.assertRaises(InvalidInput):
            psi_eval(t, t, 0.5, 0.0, 0.0, 0.0, 1.0)

    @hsettings(max_examples=30, deadline=None)
    @given(rhos)
    def test_identity_psi_property(self, rho):
        t = identity_transform()
        self.assertLess(abs(psi_eval(t, t, rho, 0.0, 0.0, 1.0, 1.0) - rho), 1e-8)


def fitted_transforms():
    rng = np.random.default_rng(17)
    samples = [rng.standard_normal(20_000) ** 3, np.exp(rng.standard_normal(20_000)), rng.uniform(size=20_000)]
    out = []
    for x in samples:
        mg = EmpiricalMarginal.from_sample(x)
        out.append((mg, fit_piecewise(mg, 20)))
    return out


class TransformMomentTests(SimpleTestCase):
    def test_identity(self):
        mean, sd = transform_moments(identity_transform())
        self.assertAlmostEqual(mean, 0.0, places=12)
        self.assertAlmostEqual(sd, 1.0, places=12)

    def test_affine(self):
        a = equiprobable_breakpoints(8)
        mean, sd = transform_moments(PiecewiseTransform(a, np.full(8, 2.0), np.full(8, 3.0)))
        self.assertAlmostEqual(mean, 2.0, places=12)
        self.assertAlmostEqual(sd, 3.0, places=12)

    def test_step(self):
        mean, sd = transform_moments(PiecewiseTransform([0.0], [-1.0, 1.0], [0.0, 0.0]))
        self.assertAlmostEqual(mean, 0.0, places=12)
        self.assertAlmostEqual(sd, 1.0, places=12)


class CorrelationMapPropertyTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.fits = fitted_transforms()
        cls.grid = np.round(np.arange(-0.9, 0.901, 0.05), 10)

    def pairs(self):
        for mi, ti in self.fits:
            for mj, tj in self.fits:
                yield CorrelationTransform(ti, tj, mi.mean, mj.mean, mi.sd, mj.sd)

    def test_non_decreasing_for_monotone_transforms(self):
        for psi in self.pairs():
            values = np.array([psi(r) for r in self.grid])
            self.assertTrue(np.all(np.diff(values) >= -1e-12), values)

    def test_attenuates_gaussian_correlation(self):
        for psi in self.pairs():
            for r in self.grid:
                self.assertLessEqual(abs(psi(r)), abs(r) + 0.02)

    @hsettings(max_examples=40, deadline=None)
    @given(st.integers(0, 1_000_000))
    def test_independent_pairs_are_uncorrelated(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 21))
        a = equiprobable_breakpoints(m)
        ti = PiecewiseTransform(a, 3.0 * rng.standard_normal(m), rng.uniform(0.01, 3.0, m))
        tj = PiecewiseTransform(a, 3.0 * rng.standard_normal(m), rng.uniform(0.01, 3.0, m))
        (mi, si), (mj, sj) = transform_moments(ti), transform_moments(tj)
        self.assertLess(abs(psi_eval(ti, tj, 0.0, mi, mj, si, sj)), 1e-9)
        for rho in (-0.9, 0.5):
            self.assertLessEqual(abs(psi_eval(ti, tj, rho, mi, mj, si, sj)), abs(rho) + 1e-9)
