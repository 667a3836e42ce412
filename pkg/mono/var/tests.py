from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings as hsettings, strategies as st

from lagcorr.services import LaggedCorrelationSet, estimate_lagged_correlations
from vstap import error_codes as EC
from vstap.exceptions import InvalidInput, NonStationary, NumericallySingular

from .serializers import VarModelSerializer
from .services import (
    Innovation,
    VarModel,
    autocovariances,
    companion_matrix,
    reference_var2,
    reference_var5,
    simulate,
    standardized_coefficients,
    stationarity_check,
    theoretical_correlations,
    yule_walker,
)


def random_stationary(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 6))
    P = int(rng.integers(1, 5))
    A = rng.normal(scale=0.5, size=(P, K, K))
    _, radius = stationarity_check(A)
    if radius > 0.9:
        # scaling lag tau by c^tau scales every companion eigenvalue by c
        c = 0.9 / radius
        A = A * (c ** np.arange(1, P + 1))[:, None, None]
    B = rng.normal(size=(K, K))
    return VarModel(A=A, sigma_e=B @ B.T + K * np.eye(K))


class YuleWalkerTests(SimpleTestCase):
    def test_scalar_ar1(self):
        model = yule_walker(LaggedCorrelationSet([[[1.0, 0.5]]]))
        self.assertAlmostEqual(float(model.A[0, 0, 0]), 0.5, places=12)
        self.assertAlmostEqual(float(model.sigma_e[0, 0]), 0.75, places=12)

    def test_scalar_ar2_recovery(self):
        truth = VarModel(A=[[[0.5]], [[0.3]]], sigma_e=[[1.0]])
        fit = yule_walker(theoretical_correlations(truth, 2))
        np.testing.assert_allclose(fit.A, truth.A, atol=1e-10)
        gamma0 = autocovariances(truth, 0)[0, 0, 0]
        self.assertAlmostEqual(float(fit.sigma_e[0, 0]), 1.0 / gamma0, places=10)

    def test_reference_var2_round_trip(self):
        truth = reference_var2()
        fit = yule_walker(theoretical_correlations(truth, truth.P))
        np.testing.assert_allclose(fit.A, standardized_coefficients(truth), atol=1e-8)

    def test_reference_var5_round_trip(self):
        truth = reference_var5()
        fit = yule_walker(theoretical_correlations(truth, truth.P))
        np.testing.assert_allclose(fit.A, standardized_coefficients(truth), atol=1e-8)

    @hsettings(max_examples=50, deadline=None)
    @given(st.integers(0, 1_000_000))
    def test_random_models_round_trip(self, seed):
        truth = random_stationary(seed)
        fit = yule_walker(theoretical_correlations(truth, truth.P))
        np.testing.assert_allclose(fit.A, standardized_coefficients(truth), atol=1e-7)
        self.assertLess(fit.spectral_radius, 1.0)

    def test_white_noise_order_zero(self):
        r = np.zeros((2, 2, 1))
        r[:, :, 0] = [[1.0, 0.4], [0.4, 1.0]]
        fit = yule_walker(LaggedCorrelationSet(r))
        self.assertEqual(fit.P, 0)
        np.testing.assert_array_equal(fit.sigma_e, r[:, :, 0])

    def test_unit_innovation(self):
        fit = yule_walker(LaggedCorrelationSet([[[1.0, 0.5]]]), innovation=Innovation.UNIT)
        np.testing.assert_array_equal(fit.sigma_e, [[1.0]])
        self.assertEqual(fit.innovation, Innovation.UNIT)

    def test_unknown_innovation(self):
        with self.assertRaises(InvalidInput):
            yule_walker(LaggedCorrelationSet([[[1.0, 0.5]]]), innovation="gamma")

    def test_singular_system(self):
        with self.assertRaises(NumericallySingular) as ctx:
            yule_walker(LaggedCorrelationSet([[[1.0, 1.0, 1.0]]]))
        self.assertEqual(ctx.exception.app_code, EC.VAR_NUMERICALLY_SINGULAR)


class StationarityTests(SimpleTestCase):
    def test_scalar_coefficients(self):
        self.assertEqual(stationarity_check(0.5), (True, 0.5))
        ok, radius = stationarity_check(1.1)
        self.assertFalse(ok)
        self.assertAlmostEqual(radius, 1.1)

    def test_companion_layout(self):
        F = companion_matrix(reference_var2().A)
        self.assertEqual(F.shape, (4, 4))
        np.testing.assert_array_equal(F[2:, :2], np.eye(2))
        np.testing.assert_array_equal(F[2:, 2:], np.zeros((2, 2)))

    def test_reference_models_are_stationary(self):
        for model in (reference_var2(), reference_var5()):
            ok, radius = stationarity_check(model)
            self.assertTrue(ok)
            self.assertLess(radius, 1.0)

    def test_construction_rejects_explosive_model(self):
        with self.assertRaises(NonStationary) as ctx:
            VarModel(A=[[[1.1]]], sigma_e=[[1.0]])
        self.assertAlmostEqual(ctx.exception.context["spectral_radius"], 1.1)

    def test_dimension_mismatch(self):
        with self.assertRaises(InvalidInput):
            VarModel(A=np.zeros((1, 2, 2)), sigma_e=np.eye(3))

    def test_burn_in_default(self):
        self.assertEqual(reference_var2().default_burn_in, 1000)
        self.assertEqual(VarModel(A=np.zeros((30, 1, 1)), sigma_e=[[1.0]]).default_burn_in, 1500)


class SimulateTests(SimpleTestCase):
    def test_deterministic(self):
        model = reference_var2()
        np.testing.assert_array_equal(simulate(model, 200, seed=11), simulate(model, 200, seed=11))
        self.assertFalse(np.array_equal(simulate(model, 200, seed=11), simulate(model, 200, seed=12)))

    def test_shape(self):
        self.assertEqual(simulate(reference_var5(), 50, seed=0).shape, (5, 50))

    def test_white_noise_variance(self):
        model = VarModel(A=np.zeros((0, 2, 2)), sigma_e=np.diag([2.0, 0.5]))
        x = simulate(model, 50_000, seed=1)
        np.testing.assert_allclose(x.var(axis=1), [2.0, 0.5], rtol=0.03)

    def test_rejects_bad_length(self):
        with self.assertRaises(InvalidInput):
            simulate(reference_var2(), 0, seed=0)

    @tag("slow")
    def test_lagged_correlations_match_theory(self):
        model = reference_var2()
        x = simulate(model, 100_000, seed=3)
        got = estimate_lagged_correlations(x, 2).r
        want = theoretical_correlations(model, 2).r
        self.assertLess(np.max(np.abs(got - want)), 0.02)

    @tag("slow")
    def test_stationary_mean_includes_intercept(self):
        model = reference_var2()
        x = simulate(model, 100_000, seed=4)
        A_sum = model.A.sum(axis=0)
        mu = np.linalg.solve(np.eye(2) - A_sum, model.intercept)
        np.testing.assert_allclose(x.mean(axis=1), mu, atol=0.05)


class VarModelSerializerTests(SimpleTestCase):
    def test_round_trip(self):
        model = reference_var2()
        data = VarModelSerializer(model).data
        self.assertEqual((data["K"], data["P"]), (2, 2))
        self.assertAlmostEqual(data["spectral_radius"], model.spectral_radius)

        ser = VarModelSerializer(data=dict(data))
        self.assertTrue(ser.is_valid(), ser.errors)
        back = ser.save()
        np.testing.assert_array_equal(back.A, model.A)
        np.testing.assert_array_equal(back.intercept, model.intercept)

    def test_rejects_wrong_shapes(self):
        data = VarModelSerializer(reference_var2()).data
        payload = dict(data, P=3)
        ser = VarModelSerializer(data=payload)
        self.assertFalse(ser.is_valid())
        self.assertIn("A", ser.errors)

    def test_seed_provenance(self):
        model = replace(reference_var2(), seed=42)
        data = VarModelSerializer(model).data
        self.assertEqual(data["seed"], 42)
        ser = VarModelSerializer(data=dict(data))
        self.assertTrue(ser.is_valid(), ser.errors)
        self.assertEqual(ser.save().seed, 42)

        legacy = {k: v for k, v in data.items() if k != "seed"}
        ser = VarModelSerializer(data=legacy)
        self.assertTrue(ser.is_valid(), ser.errors)
        self.assertIsNone(ser.save().seed)
