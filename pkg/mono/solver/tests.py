from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hsettings, strategies as st

from bvn.services import CorrelationTransform
from marginal.services import EmpiricalMarginal, PiecewiseTransform, equiprobable_breakpoints, fit_piecewise, gaussianize
from oracle.services import uniform_gaussian_correlation
from vstap.exceptions import DegenerateInput, InvalidInput

from .services import SolveStatus, feasible_bounds, naive_corr, solve_gaussian_corr

UNIT = (0.0, 0.0, 1.0, 1.0)


def identity_transform(m=20):
    return PiecewiseTransform(equiprobable_breakpoints(m), np.zeros(m), np.ones(m))


def fitted(sample, m=20):
    mg = EmpiricalMarginal.from_sample(sample)
    return mg, fit_piecewise(mg, m)


def stats(mi, mj):
    return mi.mean, mj.mean, mi.sd, mj.sd


def folded_psi(r):
    """Identity up to 0.95, decreasing beyond: a non-monotone correlation transform."""
    return r if r <= 0.95 else 0.95 - 2.0 * (r - 0.95)


class NaiveCorrelationTests(SimpleTestCase):
    def test_identical_vectors(self):
        z = np.random.default_rng(0).standard_normal(100)
        self.assertAlmostEqual(naive_corr(z, z), 1.0, places=12)

    def test_independent_vectors(self):
        rng = np.random.default_rng(1)
        n = 20_000
        self.assertLess(abs(naive_corr(rng.standard_normal(n), rng.standard_normal(n))), 2 / np.sqrt(n))

    def test_cubed_gaussians_recover_rho(self):
        rng = np.random.default_rng(2)
        n = 100_000
        z1 = rng.standard_normal(n)
        z2 = 0.6 * z1 + 0.8 * rng.standard_normal(n)
        mi = EmpiricalMarginal.from_sample(z1 ** 3)
        mj = EmpiricalMarginal.from_sample(z2 ** 3)
        r = naive_corr(gaussianize(mi, z1 ** 3), gaussianize(mj, z2 ** 3))
        self.assertLess(abs(r - 0.6), 0.01)

    def test_zero_variance(self):
        with self.assertRaises(DegenerateInput):
            naive_corr(np.ones(10), np.arange(10.0))

    def test_length_checks(self):
        with self.assertRaises(InvalidInput):
            naive_corr([1.0, 2.0], [1.0, 2.0])
        with self.assertRaises(InvalidInput):
            naive_corr([1.0, 2.0, 3.0], [1.0, 2.0])


class FeasibleBoundsTests(SimpleTestCase):
    def test_identical_samples(self):
        x = np.random.default_rng(3).exponential(size=500)
        _, upper = feasible_bounds(x, x)
        self.assertAlmostEqual(upper, 1.0, places=12)

    def test_symmetric_sample(self):
        x = np.linspace(-1, 1, 101)
        lower, upper = feasible_bounds(x, x)
        self.assertAlmostEqual(lower, -1.0, places=12)
        self.assertAlmostEqual(upper, 1.0, places=12)

    def test_mixed_marginals_strictly_inside(self):
        rng = np.random.default_rng(4)
        lower, upper = feasible_bounds(rng.uniform(size=1000), rng.exponential(size=1000))
        self.assertGreater(lower, -1.0)
        self.assertLess(upper, 1.0)
        self.assertLess(lower, 0.0)
        self.assertGreater(upper, 0.0)

    def test_zero_variance(self):
        with self.assertRaises(DegenerateInput):
            feasible_bounds(np.ones(5), np.arange(5.0))

    @hsettings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_sample_correlation_within_bounds(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.exponential(size=50)
        y = x + rng.standard_normal(50)
        lower, upper = feasible_bounds(x, y)
        r = np.corrcoef(x, y)[0, 1]
        self.assertLessEqual(lower, r + 1e-12)
        self.assertGreaterEqual(upper, r - 1e-12)


class SolveTests(SimpleTestCase):
    def test_identity_transform(self):
        t = identity_transform()
        rep = solve_gaussian_corr(t, t, 0.37, channel_stats=UNIT)
        self.assertEqual(rep.status, SolveStatus.CONVERGED)
        self.assertLess(abs(rep.solution - 0.37), 1e-5)
        self.assertLess(abs(rep.residual), 1e-5)
        self.assertFalse(rep.used_binary_search)

    def test_zero_target(self):
        rng = np.random.default_rng(5)
        mi, ti = fitted(rng.exponential(size=20_000))
        mj, tj = fitted(rng.uniform(size=20_000))
        rep = solve_gaussian_corr(ti, tj, 0.0, channel_stats=stats(mi, mj))
        self.assertTrue(rep.converged)
        self.assertLess(abs(rep.solution), 2e-2)

    def test_uniform_triple(self):
        rng = np.random.default_rng(6)
        fits = [fitted(rng.uniform(size=100_000)) for _ in range(3)]
        for (i, j), target in zip([(0, 1), (0, 2), (1, 2)], (-0.4, 0.2, 0.8)):
            (mi, ti), (mj, tj) = fits[i], fits[j]
            rep = solve_gaussian_corr(ti, tj, target, channel_stats=stats(mi, mj))
            self.assertTrue(rep.converged)
            self.assertLess(abs(rep.solution - uniform_gaussian_correlation(target)), 5e-3)

    def test_known_values_for_uniform_triple(self):
        for target, want in zip((-0.4, 0.2, 0.8), (-0.4158, 0.2091, 0.8135)):
            self.assertAlmostEqual(uniform_gaussian_correlation(target), want, places=4)

    def test_round_trip_cubic(self):
        rng = np.random.default_rng(8)
        mg, t = fitted(rng.standard_normal(50_000) ** 3)
        psi = CorrelationTransform(t, t, mg.mean, mg.mean, mg.sd, mg.sd)
        for rho0 in (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9):
            rep = solve_gaussian_corr(t, t, psi(rho0), channel_stats=stats(mg, mg))
            self.assertTrue(rep.converged)
            self.assertLess(abs(psi(rep.solution) - psi(rho0)), 1e-5)
            self.assertLess(abs(rep.solution - rho0), 1e-4)
            if rho0:
                self.assertEqual(np.sign(rep.solution), np.sign(rho0))

    def test_outside_feasible_bounds(self):
        t = identity_transform()
        rep = solve_gaussian_corr(t, t, 0.8, channel_stats=UNIT, bounds=(-0.5, 0.5))
        self.assertEqual(rep.status, SolveStatus.INFEASIBLE)
        self.assertEqual(rep.iterations, 0)

    def test_outside_attainable_range(self):
        t = identity_transform()
        # halving the transform caps psi_hat at 0.25 against unit sample moments
        half = PiecewiseTransform(t.breakpoints, t.intercepts, 0.5 * t.slopes)
        rep = solve_gaussian_corr(half, half, 0.6, channel_stats=UNIT)
        self.assertEqual(rep.status, SolveStatus.INFEASIBLE)

    def test_max_iterations(self):
        t = identity_transform()
        half = PiecewiseTransform(t.breakpoints, t.intercepts, 0.5 * t.slopes)
        # psi_hat(r) = r / 4: contraction is too slow for two steps
        rep = solve_gaussian_corr(half, half, 0.2, channel_stats=UNIT, max_iter=2)
        self.assertEqual(rep.status, SolveStatus.MAX_ITERATIONS)
        self.assertEqual(rep.iterations, 2)

    def test_invalid_arguments(self):
        t = identity_transform()
        with self.assertRaises(InvalidInput):
            solve_gaussian_corr(t, t, 1.5, channel_stats=UNIT)
        with self.assertRaises(InvalidInput):
            solve_gaussian_corr(t, t, 0.5, channel_stats=UNIT, epsilon=0.0)
        with self.assertRaises(InvalidInput):
            solve_gaussian_corr(t, t, 0.5, channel_stats=UNIT, start=2.0)

    @mock.patch("solver.services.CorrelationTransform")
    def test_bisection_on_non_monotone_branch(self, transform):
        transform.return_value = folded_psi
        rep = solve_gaussian_corr(None, None, 0.88, channel_stats=UNIT, start=0.99)
        self.assertTrue(rep.used_binary_search)
        self.assertEqual(rep.status, SolveStatus.CONVERGED)
        self.assertLess(abs(folded_psi(rep.solution) - 0.88), 1e-5)

    @mock.patch("solver.services.CorrelationTransform")
    def test_bisection_without_sign_change(self, transform):
        transform.return_value = folded_psi
        rep = solve_gaussian_corr(None, None, 0.93, channel_stats=UNIT, start=0.99)
        self.assertTrue(rep.used_binary_search)
        self.assertEqual(rep.status, SolveStatus.MAX_ITERATIONS)
