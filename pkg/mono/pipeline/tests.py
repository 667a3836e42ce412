import json
import math
import time
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag
from scipy.special import ndtr, ndtri

from lagcorr.services import LaggedCorrelationSet
from marginal.services import EmpiricalMarginal, fit_piecewise, power_transform
from oracle.services import uniform_gaussian_correlation
from solver.services import SolveReport, SolveStatus, solve_gaussian_corr
from var.services import VarModel, reference_var2, reference_var5, simulate
from vstap import error_codes as EC
from vstap.exceptions import DegenerateInput, InfeasibleCorrelation, InvalidInput, ModelFileInvalid

from .serializers import dump_model, load_model
from .services import (
    Dispatch,
    TransformMode,
    achieved_correlations,
    correlation_band,
    ensemble_coverage,
    fisher_ci,
    fit_from_target,
    fit_vstap,
    generate,
    generate_many,
    surrogate,
)


def gaussian_series(n, seed):
    model = VarModel(A=[[[0.5, 0.1], [0.2, 0.4]]], sigma_e=np.eye(2))
    return simulate(model, n, seed)


def skewed_series(n, seed):
    z = gaussian_series(n, seed)
    return np.vstack([np.exp(z[0]), z[1] ** 3])


class FisherIntervalTests(SimpleTestCase):
    def test_zero_correlation(self):
        lo, hi = fisher_ci(0.0, 403)
        self.assertAlmostEqual(hi, math.tanh(ndtri(0.975) / 20.0), places=12)
        self.assertAlmostEqual(hi, 0.0977, places=4)
        self.assertAlmostEqual(lo, -hi, places=12)

    def test_strong_correlation_is_asymmetric(self):
        lo, hi = fisher_ci(0.9, 100)
        self.assertLess(lo, 0.9)
        self.assertGreater(hi, 0.9)
        self.assertGreater(0.9 - lo, hi - 0.9)
        self.assertLess(hi, 1.0)

    def test_level_widens_interval(self):
        narrow = fisher_ci(0.3, 200, level=0.8)
        wide = fisher_ci(0.3, 200, level=0.99)
        self.assertLess(wide[0], narrow[0])
        self.assertGreater(wide[1], narrow[1])

    def test_degenerate(self):
        with self.assertRaises(DegenerateInput):
            fisher_ci(1.0, 100)
        with self.assertRaises(InvalidInput):
            fisher_ci(0.2, 3)


class FitTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.x = skewed_series(1_500, seed=21)
        cls.model = fit_vstap(cls.x, 1, m=20, channel_names=["flow", "load"])

    def test_model_shape(self):
        model = self.model
        self.assertEqual((model.K, model.P, model.n, model.m), (2, 1, 1_500, 20))
        self.assertEqual(model.channel_names, ["flow", "load"])
        self.assertEqual(model.var.P, 1)
        self.assertLess(model.var.spectral_radius, 1.0)

    def test_every_cell_converged(self):
        cells = self.model.diagnostics.cells
        # one lag-0 pair plus four ordered lag-1 pairs
        self.assertEqual(len(cells), 5)
        self.assertEqual([(c.i, c.j, c.tau) for c in cells][0], (0, 1, 0))
        for c in cells:
            self.assertEqual(c.status, SolveStatus.CONVERGED)
            self.assertLess(abs(c.psi_at_solution - c.target), 1e-4)
            self.assertLessEqual(c.lower, c.target)
            self.assertGreaterEqual(c.upper, c.target)
        self.assertLess(self.model.diagnostics.max_residual, self.model.epsilon)

    def test_gaussian_corr_is_positive_definite(self):
        self.assertGreater(self.model.diagnostics.min_eigenvalue, 0.0)
        r0 = self.model.gaussian_corr.block(0)
        np.testing.assert_array_equal(np.diag(r0), [1.0, 1.0])

    def test_generate_is_deterministic(self):
        a = generate(self.model, 300, seed=5)
        b = generate(self.model, 300, seed=5)
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (2, 300))

    def test_exact_mode_full_length_preserves_values(self):
        y = generate(self.model, self.model.n, seed=6)
        for i in range(2):
            np.testing.assert_array_equal(np.sort(y[i]), np.sort(self.x[i]))

    def test_exact_mode_other_length_stays_in_sample_range(self):
        y = generate(self.model, 700, seed=7)
        for i in range(2):
            self.assertGreaterEqual(y[i].min(), self.x[i].min())
            self.assertLessEqual(y[i].max(), self.x[i].max())

    def test_piecewise_mode(self):
        y = generate(self.model, 400, seed=8, mode=TransformMode.PIECEWISE)
        self.assertEqual(y.shape, (2, 400))
        self.assertTrue(np.all(np.isfinite(y)))

    def test_unknown_mode(self):
        with self.assertRaises(InvalidInput):
            generate(self.model, 10, seed=0, mode="spline")

    def test_surrogate_is_a_permutation(self):
        y = surrogate(self.x, 1, seed=9, model=self.model)
        for i in range(2):
            np.testing.assert_array_equal(np.sort(y[i]), np.sort(self.x[i]))
        self.assertFalse(np.array_equal(y, self.x))

    def test_generate_many_uses_each_seed(self):
        runs = generate_many(self.model, 200, [1, 2], TransformMode.EXACT, dispatch=Dispatch.LOCAL)
        np.testing.assert_array_equal(runs[0], generate(self.model, 200, 1))
        np.testing.assert_array_equal(runs[1], generate(self.model, 200, 2))

    def test_generate_many_through_celery(self):
        runs = generate_many(self.model, 150, [3], TransformMode.EXACT, dispatch=Dispatch.CELERY)
        np.testing.assert_allclose(runs[0], generate(self.model, 150, 3))

    def test_model_file_round_trip(self):
        payload = json.loads(json.dumps(dump_model(self.model)))
        self.assertEqual(payload["schema_version"], "1.0")
        np.testing.assert_array_equal(payload["samples"][0], self.x[0])
        back = load_model(payload)
        self.assertEqual(back.channel_names, self.model.channel_names)
        np.testing.assert_array_equal(back.var.A, self.model.var.A)
        np.testing.assert_array_equal(generate(back, 250, seed=4), generate(self.model, 250, seed=4))

    def test_model_file_rejects_unknown_schema(self):
        payload = dict(dump_model(self.model), schema_version="9.9")
        with self.assertRaises(ModelFileInvalid) as ctx:
            load_model(payload)
        self.assertEqual(ctx.exception.app_code, EC.CLI_MODEL_FILE_INVALID)

    def test_model_file_rejects_channel_mismatch(self):
        payload = dict(dump_model(self.model), channel_names=["only"])
        with self.assertRaises(ModelFileInvalid):
            load_model(payload)


class GaussianFitTests(SimpleTestCase):
    def test_gaussian_data_keeps_target(self):
        x = gaussian_series(3_000, seed=31)
        model = fit_vstap(x, 1)
        np.testing.assert_allclose(model.gaussian_corr.r, model.target_corr.r, atol=2e-2)

    def test_celery_dispatch_matches_local(self):
        x = gaussian_series(600, seed=32)
        local = fit_vstap(x, 1, dispatch=Dispatch.LOCAL)
        remote = fit_vstap(x, 1, dispatch=Dispatch.CELERY)
        np.testing.assert_allclose(remote.gaussian_corr.r, local.gaussian_corr.r, atol=1e-12)
        self.assertEqual(
            [(c.i, c.j, c.tau) for c in remote.diagnostics.cells],
            [(c.i, c.j, c.tau) for c in local.diagnostics.cells],
        )


def uniform_grid(n):
    return (np.arange(n) + 0.5) / n


def two_channel_target():
    r = np.zeros((2, 2, 2))
    r[:, :, 0] = [[1.0, 0.5], [0.5, 1.0]]
    r[:, :, 1] = [[0.3, 0.1], [0.1, 0.3]]
    return LaggedCorrelationSet(r)


class FitFromTargetTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.marginals = [
            EmpiricalMarginal.from_sample(uniform_grid(800)),
            EmpiricalMarginal.from_sample(uniform_grid(1_000)),
        ]
        cls.target = two_channel_target()
        cls.model = fit_from_target(cls.marginals, cls.target, m=20, channel_names=["u", "v"])

    def test_uniform_marginals_follow_closed_form(self):
        np.testing.assert_allclose(
            self.model.gaussian_corr.r, uniform_gaussian_correlation(self.target.r), atol=2e-2
        )
        np.testing.assert_array_equal(self.model.target_corr.r, self.target.r)

    def test_every_cell_converged(self):
        self.assertEqual(len(self.model.diagnostics.cells), 5)
        self.assertTrue(all(c.status == SolveStatus.CONVERGED for c in self.model.diagnostics.cells))

    def test_channels_keep_their_own_lengths(self):
        y = generate(self.model, 1_000, seed=2)
        np.testing.assert_allclose(np.sort(y[1]), uniform_grid(1_000))
        grid = uniform_grid(800)
        self.assertTrue(np.all((y[0] >= grid[0]) & (y[0] <= grid[-1])))

    def test_model_file_round_trip(self):
        back = load_model(json.loads(json.dumps(dump_model(self.model))))
        self.assertEqual([mg.n for mg in back.marginals], [800, 1_000])
        np.testing.assert_array_equal(generate(back, 300, seed=5), generate(self.model, 300, seed=5))

    def test_unreachable_target_is_infeasible(self):
        heavy = EmpiricalMarginal.from_sample(np.exp(3.0 * ndtri(uniform_grid(500))))
        r = np.zeros((2, 2, 1))
        r[:, :, 0] = [[1.0, 0.9], [0.9, 1.0]]
        with self.assertRaises(InfeasibleCorrelation) as ctx:
            fit_from_target([self.marginals[0], heavy], LaggedCorrelationSet(r))
        self.assertEqual(ctx.exception.app_code, EC.PIPE_INFEASIBLE_CORRELATION)
        self.assertLess(ctx.exception.context["cells"][0]["upper"], 0.9)

    def test_marginal_count_must_match_target(self):
        with self.assertRaises(InvalidInput) as ctx:
            fit_from_target(self.marginals[:1], self.target)
        self.assertEqual(ctx.exception.app_code, EC.PIPE_INVALID_INPUT)


class FitErrorTests(SimpleTestCase):
    def test_constant_channel_is_named(self):
        x = np.vstack([np.random.default_rng(0).standard_normal(200), np.full(200, 3.0)])
        with self.assertRaises(DegenerateInput) as ctx:
            fit_vstap(x, 1, channel_names=["a", "flat"])
        self.assertEqual(ctx.exception.context["channel"], "flat")
        self.assertEqual(ctx.exception.app_code, EC.PIPE_DEGENERATE_INPUT)

    def test_too_few_samples(self):
        x = np.random.default_rng(1).standard_normal((2, 40))
        with self.assertRaises(InvalidInput) as ctx:
            fit_vstap(x, 1, m=20)
        self.assertEqual(ctx.exception.context["n"], 40)

    def test_name_count_mismatch(self):
        x = np.random.default_rng(2).standard_normal((2, 200))
        with self.assertRaises(InvalidInput):
            fit_vstap(x, 1, channel_names=["only"])

    @mock.patch("pipeline.services.solve_gaussian_corr")
    def test_infeasible_cells_are_listed(self, solve):
        solve.return_value = SolveReport(0.99999, 0, False, float("nan"), SolveStatus.INFEASIBLE)
        x = gaussian_series(300, seed=3)
        with self.assertRaises(InfeasibleCorrelation) as ctx:
            fit_vstap(x, 1)
        cells = ctx.exception.context["cells"]
        self.assertEqual(len(cells), 5)
        self.assertEqual({k for k in cells[0]}, {"i", "j", "tau", "target", "lower", "upper"})

    @mock.patch("pipeline.services.solve_gaussian_corr")
    def test_max_iterations_uses_best_iterate(self, solve):
        solve.side_effect = lambda ti, tj, target, **kw: SolveReport(
            target, 200, False, 1e-3, SolveStatus.MAX_ITERATIONS
        )
        x = gaussian_series(300, seed=4)
        with self.assertLogs("pipeline.services", level="WARNING"):
            model = fit_vstap(x, 1)
        np.testing.assert_allclose(model.gaussian_corr.r, model.target_corr.r, atol=1e-12)


class EnsembleTests(SimpleTestCase):
    def test_band_and_coverage(self):
        rng = np.random.default_rng(10)
        ensemble = rng.normal(scale=0.05, size=(40, 2, 2, 2))
        ensemble[:, [0, 1], [0, 1], 0] = 1.0
        lo, hi = correlation_band(ensemble, 0.9)
        self.assertEqual(lo.shape, (2, 2, 2))
        self.assertTrue(np.all(lo <= hi))

        target = np.zeros((2, 2, 2))
        target[[0, 1], [0, 1], 0] = 1.0
        self.assertEqual(ensemble_coverage(target, ensemble, 0.9), 1.0)
        target[0, 1, 1] = 0.8
        self.assertAlmostEqual(ensemble_coverage(target, ensemble, 0.9), 5 / 6)
        self.assertEqual(ensemble_coverage(target, ensemble, 0.9, cells=[(0, 1, 1)]), 0.0)

    def test_band_needs_two_members(self):
        with self.assertRaises(InvalidInput):
            correlation_band(np.zeros((1, 2, 2, 2)))

    def test_achieved_correlations(self):
        x = gaussian_series(2_000, seed=11)
        r = achieved_correlations(x, 2)
        self.assertEqual((r.K, r.P), (2, 2))

    @tag("slow")
    def test_realizations_cover_target(self):
        z = gaussian_series(2_000, seed=12)
        x = np.vstack([ndtr(z[0]), np.exp(0.5 * z[1])])
        model = fit_vstap(x, 1)
        runs = generate_many(model, 2_000, list(range(30)), TransformMode.EXACT, dispatch=Dispatch.LOCAL)
        ensemble = [achieved_correlations(y, 1).r for y in runs]
        self.assertGreaterEqual(ensemble_coverage(model.target_corr, ensemble, 0.95), 0.8)



class SurrogateContractTests(SimpleTestCase):
    def test_random_inputs_keep_their_values(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            K, P, n = 1 + seed % 3, 1 + seed % 2, 200 + 20 * seed
            draws = {
                0: lambda: rng.standard_normal((K, n)),
                1: lambda: rng.exponential(size=(K, n)),
                2: lambda: np.round(rng.standard_normal((K, n)), 1),
                3: lambda: rng.uniform(size=(K, n)) ** 2,
            }
            x = draws[seed % 4]()
            with self.subTest(seed=seed, K=K, P=P, n=n):
                y = surrogate(x, P, seed=seed)
                self.assertEqual(y.shape, x.shape)
                for i in range(K):
                    np.testing.assert_array_equal(np.sort(y[i]), np.sort(x[i]))


def band_to_fisher_ratio(target, ensemble, N):
    lo, hi = correlation_band(ensemble)
    ratio = np.full(target.shape, np.nan)
    K, _, lags = target.shape
    for i, j, tau in np.ndindex(K, K, lags):
        if i == j and tau == 0:
            continue
        f_lo, f_hi = fisher_ci(target[i, j, tau], N)
        ratio[i, j, tau] = (hi[i, j, tau] - lo[i, j, tau]) / (f_hi - f_lo)
    return ratio[np.isfinite(ratio)]


@tag("slow")
class ReferenceSystemTests(SimpleTestCase):
    N = 1_024

    def fit_and_generate(self, process, a, P, seed):
        x = power_transform(simulate(process, self.N, seed), a)
        start = time.perf_counter()
        model = fit_vstap(x, P)
        elapsed = time.perf_counter() - start
        self.assertFalse(any(c.status == SolveStatus.INFEASIBLE for c in model.diagnostics.cells))
        self.assertLess(model.var.spectral_radius, 1.0)
        runs = generate_many(model, self.N, list(range(100)), TransformMode.EXACT, dispatch=Dispatch.LOCAL)
        ensemble = np.array([achieved_correlations(y, P).r for y in runs])
        return model, ensemble, elapsed

    def test_two_channel_cubed(self):
        model, ensemble, _ = self.fit_and_generate(reference_var2(), 3, 5, seed=41)
        self.assertGreaterEqual(ensemble_coverage(model.target_corr, ensemble), 0.8)
        # heavy tails widen the spread past the normal-theory width, never below half of it
        self.assertTrue(np.all(band_to_fisher_ratio(model.target_corr.r, ensemble, self.N) >= 0.5))

    def test_two_channel_squared(self):
        model, ensemble, _ = self.fit_and_generate(reference_var2(), 2, 5, seed=42)
        self.assertGreaterEqual(ensemble_coverage(model.target_corr, ensemble), 0.8)
        ratio = band_to_fisher_ratio(model.target_corr.r, ensemble, self.N)
        self.assertTrue(np.all(ratio >= 0.5))
        self.assertGreaterEqual(np.mean(ratio <= 2.0), 0.75)

    def test_five_channel_system(self):
        for a in (3, 2):
            with self.subTest(a=a):
                model, ensemble, elapsed = self.fit_and_generate(reference_var5(), a, 5, seed=43 + a)
                self.assertLess(elapsed, 60.0)
                r = np.abs(model.target_corr.r.copy())
                r[np.arange(5), np.arange(5), 0] = 0.0
                strongest = [tuple(int(v) for v in np.unravel_index(k, r.shape)) for k in np.argsort(r, axis=None)[-4:]]
                self.assertGreaterEqual(ensemble_coverage(model.target_corr, ensemble, cells=strongest), 0.75)

    def test_single_solve_is_sub_second(self):
        mg = EmpiricalMarginal.from_sample(np.random.default_rng(44).standard_normal(self.N) ** 3)
        t = fit_piecewise(mg, 20)
        start = time.perf_counter()
        report = solve_gaussian_corr(t, t, 0.5, channel_stats=(mg.mean, mg.mean, mg.sd, mg.sd))
        self.assertLess(time.perf_counter() - start, 1.0)
        self.assertTrue(report.converged)
