import numpy as np
from django.test import SimpleTestCase, tag

from bvn.services import Rect, psi_eval, transform_moments, trunc_moments
from marginal.services import EmpiricalMarginal, fit_piecewise
from vstap import error_codes as EC
from vstap.exceptions import InsufficientAcceptance, InvalidInput

from .services import cubic_correlation, mc_psi, mc_trunc_moments, uniform_gaussian_correlation


def identity(z):
    return z


class McPsiTests(SimpleTestCase):
    def test_identity_recovers_rho(self):
        got = mc_psi(identity, identity, 0.5, 1_000_000, seed=1)
        self.assertEqual(got.samples, 1_000_000)
        self.assertLess(abs(got.value - 0.5), 4 * got.stderr)

    def test_deterministic(self):
        a = mc_psi(np.tanh, identity, -0.3, 20_000, seed=2)
        b = mc_psi(np.tanh, identity, -0.3, 20_000, seed=2)
        self.assertEqual(a, b)

    def test_rejects_small_budget(self):
        with self.assertRaises(InvalidInput) as ctx:
            mc_psi(identity, identity, 0.5, 100, seed=0)
        self.assertEqual(ctx.exception.app_code, EC.ORC_INVALID_INPUT)

    def test_rejects_boundary_correlation(self):
        with self.assertRaises(InvalidInput):
            mc_psi(identity, identity, 1.0, 20_000, seed=0)

    @tag("slow")
    def test_cubed_pairs(self):
        got = mc_psi(lambda z: z ** 3, lambda z: z ** 3, 0.5, 2_000_000, seed=3)
        self.assertLess(abs(got.value - cubic_correlation(0.5)), 0.01)

    @tag("slow")
    def test_squared_pairs(self):
        got = mc_psi(np.square, np.square, 0.5, 2_000_000, seed=4)
        self.assertLess(abs(got.value - 0.25), 0.01)


    def test_moment_stderr_matches_gaussian_formula(self):
        got = mc_psi(identity, identity, 0.6, 400_000, seed=9)
        self.assertAlmostEqual(got.moment_stderr / got.stderr, 1.0, delta=0.05)

    def test_heavy_tails_widen_moment_stderr(self):
        got = mc_psi(lambda z: z ** 3, lambda z: z ** 3, 0.5, 400_000, seed=10)
        self.assertGreater(got.moment_stderr, got.stderr)

    @tag("slow")
    def test_cubed_pairs_at_full_size(self):
        for rho in (-0.5, 0.5):
            got = mc_psi(lambda z: z ** 3, lambda z: z ** 3, rho, 10_000_000, seed=11)
            self.assertLess(abs(got.value - cubic_correlation(rho)), 0.002)

    @tag("slow")
    def test_squared_pairs_at_full_size(self):
        got = mc_psi(np.square, np.square, 0.5, 10_000_000, seed=12)
        self.assertLess(abs(got.value - 0.25), 0.002)


def power_fit(a, seed):
    x = np.random.default_rng(seed).standard_normal(100_000) ** a
    return fit_piecewise(EmpiricalMarginal.from_sample(x), 20)


class PsiAgreementTests(SimpleTestCase):
    """Closed-form correlation of a fitted transform against sampling through the same transform."""

    def assert_agrees(self, t, rhos, samples, slack):
        mean, sd = transform_moments(t)
        for k, rho in enumerate(rhos):
            mc = mc_psi(t, t, rho, samples, seed=100 + k)
            exact = psi_eval(t, t, rho, mean, mean, sd, sd)
            self.assertLess(abs(exact - mc.value), 3 * mc.moment_stderr + slack, (rho, exact, mc))

    def test_cubed_marginal(self):
        self.assert_agrees(power_fit(3, seed=13), (-0.9, -0.5, 0.0, 0.5, 0.9), 200_000, 0.01)

    def test_squared_marginal(self):
        self.assert_agrees(power_fit(2, seed=14), (-0.9, -0.5, 0.0, 0.5, 0.9), 200_000, 0.01)

    def test_attenuation(self):
        t = power_fit(3, seed=15)
        for rho in (-0.8, 0.4, 0.8):
            mc = mc_psi(t, t, rho, 200_000, seed=16)
            self.assertLessEqual(abs(mc.value), abs(rho) + 3 * mc.moment_stderr)

    @tag("slow")
    def test_cubed_marginal_at_full_size(self):
        self.assert_agrees(power_fit(3, seed=13), (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9), 10_000_000, 0.0)


class McTruncatedMomentTests(SimpleTestCase):
    def test_matches_closed_form(self):
        for r, rho in [(Rect(-1.0, 1.0, -0.5, 2.0), 0.3), (Rect(0.0, np.inf, -np.inf, 0.5), -0.6)]:
            mc = mc_trunc_moments(r, rho, 200_000, seed=5)
            exact = trunc_moments(r, rho)
            se = (mc.se_p, mc.se_mu10, mc.se_mu01, mc.se_mu11)
            for want, got, s in zip(exact, mc.as_tuple(), se):
                self.assertLess(abs(want - got), 4 * s)

    def test_far_tail_is_rejected(self):
        with self.assertRaises(InsufficientAcceptance) as ctx:
            mc_trunc_moments(Rect(4.0, np.inf, 4.0, np.inf), 0.0, 100_000, seed=6)
        self.assertEqual(ctx.exception.context["samples"], 100_000)

    def test_rejects_small_budget(self):
        with self.assertRaises(InvalidInput):
            mc_trunc_moments(Rect.full_plane(), 0.0, 1_000, seed=0)


class ClosedFormTests(SimpleTestCase):
    def test_cubic(self):
        self.assertEqual(cubic_correlation(0.0), 0.0)
        self.assertAlmostEqual(cubic_correlation(1.0), 1.0)
        self.assertAlmostEqual(cubic_correlation(-0.5), -0.35)
        self.assertEqual(cubic_correlation(np.array([0.1, 0.2])).shape, (2,))

    def test_uniform(self):
        self.assertAlmostEqual(uniform_gaussian_correlation(1.0), 1.0)
        self.assertAlmostEqual(uniform_gaussian_correlation(-1.0), -1.0)
        self.assertAlmostEqual(uniform_gaussian_correlation(0.8), 0.8135, places=4)
