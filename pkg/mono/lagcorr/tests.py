from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings as hsettings, strategies as st

from vstap import error_codes as EC
from vstap.exceptions import DegenerateInput, InsufficientData, InvalidInput, RepairFailed

from .services import (
    FullCorrMatrix,
    LaggedCorrelationSet,
    assemble_full_matrix,
    estimate_lagged_correlations,
    frobenius_distance,
    psd_repair,
)


def ar1(n, phi, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    z = np.empty(n)
    z[0] = e[0]
    for t in range(1, n):
        z[t] = phi * z[t - 1] + e[t]
    return z


def indefinite_triple():
    a, b, c = -0.4158, 0.2091, 0.8135
    return FullCorrMatrix(np.array([[1.0, a, b], [a, 1.0, c], [b, c, 1.0]]), 3, 0)


def mildly_indefinite():
    # two uncoupled channels whose own Toeplitz blocks are slightly indefinite
    r = np.zeros((2, 2, 3))
    r[:, :, 0] = np.eye(2)
    r[0, 0] = [1.0, 0.9, 0.5]
    r[1, 1] = [1.0, 0.8, 0.2]
    return r


def assert_block_toeplitz(test, m: FullCorrMatrix):
    K, P = m.K, m.P
    M = m.matrix
    for u in range(P + 1):
        for v in range(P + 1):
            ref = M[:K, (v - u) * K:(v - u + 1) * K] if v >= u else M[:K, (u - v) * K:(u - v + 1) * K].T
            np.testing.assert_array_equal(M[u * K:(u + 1) * K, v * K:(v + 1) * K], ref)


class EstimateTests(SimpleTestCase):
    def test_unit_lag_zero_diagonal(self):
        x = np.random.default_rng(0).standard_normal((2, 200))
        r = estimate_lagged_correlations(x, 3)
        np.testing.assert_array_equal(np.diag(r.block(0)), [1.0, 1.0])
        self.assertEqual((r.K, r.P), (2, 3))

    def test_white_noise_lags_near_zero(self):
        n = 20_000
        x = np.random.default_rng(1).standard_normal((2, n))
        r = estimate_lagged_correlations(x, 4)
        self.assertLess(np.max(np.abs(r.r[:, :, 1:])), 4 / np.sqrt(n))

    def test_ar1_autocorrelation(self):
        r = estimate_lagged_correlations(ar1(100_000, 0.5, 2), 2)
        self.assertLess(abs(r.r[0, 0, 1] - 0.5), 0.01)
        self.assertLess(abs(r.r[0, 0, 2] - 0.25), 0.01)

    def test_storage_convention(self):
        rng = np.random.default_rng(3)
        lead = rng.standard_normal(5_001)
        # channel 0 at time t copies channel 1 at time t-1
        x = np.vstack([lead[:-1], lead[1:]])
        r = estimate_lagged_correlations(x, 1)
        self.assertGreater(r.r[0, 1, 1], 0.99)
        self.assertLess(abs(r.r[1, 0, 1]), 0.05)

    def test_affine_invariance(self):
        x = np.random.default_rng(4).standard_normal((3, 500))
        y = np.array([[2.0], [0.1], [7.5]]) * x + np.array([[3.0], [-1.0], [100.0]])
        np.testing.assert_allclose(
            estimate_lagged_correlations(x, 3).r, estimate_lagged_correlations(y, 3).r, atol=1e-12
        )

    def test_constant_channel(self):
        x = np.vstack([np.arange(50.0), np.full(50, 2.0)])
        with self.assertRaises(DegenerateInput) as ctx:
            estimate_lagged_correlations(x, 2)
        self.assertEqual(ctx.exception.context["channel"], 1)
        self.assertEqual(ctx.exception.app_code, EC.LAG_DEGENERATE_CHANNEL)

    def test_too_short(self):
        with self.assertRaises(InsufficientData):
            estimate_lagged_correlations(np.random.default_rng(5).standard_normal((1, 12)), 2)


class CorrelationSetTests(SimpleTestCase):
    def test_rejects_asymmetric_lag_zero(self):
        r = np.zeros((2, 2, 1))
        r[:, :, 0] = [[1.0, 0.2], [0.3, 1.0]]
        with self.assertRaises(InvalidInput):
            LaggedCorrelationSet(r)

    def test_rejects_out_of_range(self):
        r = np.zeros((1, 1, 2))
        r[0, 0] = [1.0, 1.5]
        with self.assertRaises(InvalidInput):
            LaggedCorrelationSet(r)

    def test_negative_lag_block(self):
        r = np.zeros((2, 2, 2))
        r[:, :, 0] = np.eye(2)
        r[:, :, 1] = [[0.5, 0.1], [0.3, 0.4]]
        s = LaggedCorrelationSet(r)
        np.testing.assert_array_equal(s.block(-1), s.block(1).T)


class AssembleTests(SimpleTestCase):
    def test_scalar_lag_one(self):
        r = np.array([[[1.0, 0.5]]])
        m = assemble_full_matrix(LaggedCorrelationSet(r))
        np.testing.assert_array_equal(m.matrix, [[1.0, 0.5], [0.5, 1.0]])

    def test_lag_zero_only(self):
        r = np.array([[[1.0], [0.3]], [[0.3], [1.0]]])
        m = assemble_full_matrix(LaggedCorrelationSet(r))
        np.testing.assert_array_equal(m.matrix, [[1.0, 0.3], [0.3, 1.0]])

    def test_block_layout(self):
        r = np.zeros((2, 2, 2))
        r[:, :, 0] = [[1.0, 0.2], [0.2, 1.0]]
        r[:, :, 1] = [[0.5, 0.1], [0.3, 0.4]]
        m = assemble_full_matrix(LaggedCorrelationSet(r)).matrix
        np.testing.assert_array_equal(m[:2, 2:], r[:, :, 1])
        np.testing.assert_array_equal(m[2:, :2], r[:, :, 1].T)
        np.testing.assert_array_equal(m, m.T)

    def test_to_lagged_round_trip(self):
        x = np.random.default_rng(6).standard_normal((2, 300))
        s = estimate_lagged_correlations(x, 2)
        np.testing.assert_array_equal(assemble_full_matrix(s).to_lagged().r, s.r)


class RepairTests(SimpleTestCase):
    def test_positive_definite_input_unchanged(self):
        x = np.random.default_rng(7).standard_normal((2, 400))
        m = assemble_full_matrix(estimate_lagged_correlations(x, 2))
        res = psd_repair(m)
        self.assertEqual(res.rounds, 0)
        self.assertIs(res.matrix, m)
        self.assertEqual(res.frobenius_distance, 0.0)

    def test_unpacks_as_pair(self):
        matrix, rounds = psd_repair(indefinite_triple())
        self.assertGreaterEqual(rounds, 1)
        self.assertIsInstance(matrix, FullCorrMatrix)

    def test_repairs_indefinite_triple(self):
        res = psd_repair(indefinite_triple())
        got = res.matrix.matrix
        for (i, j), want in zip([(0, 1), (0, 2), (1, 2)], (-0.4122, 0.2062, 0.8065)):
            self.assertLess(abs(got[i, j] - want), 5e-3)
        self.assertGreater(res.min_eigenvalue, 0.0)
        self.assertLessEqual(res.rounds, 20)
        self.assertLess(res.frobenius_distance, 0.02)
        self.assertAlmostEqual(frobenius_distance(indefinite_triple(), res.matrix), res.frobenius_distance)
        np.testing.assert_allclose(np.diag(got), 1.0, atol=1e-10)

    def test_idempotent(self):
        res = psd_repair(indefinite_triple())
        again = psd_repair(res.matrix)
        self.assertEqual(again.rounds, 0)
        np.testing.assert_array_equal(again.matrix.matrix, res.matrix.matrix)

    def test_structured_indefinite_lag_two(self):
        m = assemble_full_matrix(LaggedCorrelationSet(mildly_indefinite()))
        self.assertLess(m.min_eigenvalue, 0.0)
        res = psd_repair(m)
        self.assertGreater(np.linalg.eigvalsh(res.matrix.matrix)[0], 0.0)
        self.assertGreaterEqual(res.rounds, 1)
        np.testing.assert_allclose(np.diag(res.matrix.matrix), 1.0, atol=1e-10)
        assert_block_toeplitz(self, res.matrix)

    @mock.patch("lagcorr.services._clip_spectrum")
    def test_stalled_repair_blends_with_identity(self, clip):
        m = assemble_full_matrix(LaggedCorrelationSet(mildly_indefinite()))
        clip.side_effect = lambda current, floor: current
        res = psd_repair(m, floor=1e-6)
        self.assertEqual(res.rounds, 10)
        self.assertAlmostEqual(res.min_eigenvalue, 1e-6, delta=1e-9)
        np.testing.assert_allclose(np.diag(res.matrix.matrix), 1.0, atol=1e-12)
        assert_block_toeplitz(self, res.matrix)
        # off-diagonal entries shrink by one common factor
        ratio = res.matrix.matrix[0, 2] / m.matrix[0, 2]
        np.testing.assert_allclose(res.matrix.matrix - np.eye(6), ratio * (m.matrix - np.eye(6)), atol=1e-12)

    @mock.patch("lagcorr.services._restore_structure")
    def test_failure_carries_best_iterate(self, restore):
        m = assemble_full_matrix(LaggedCorrelationSet(mildly_indefinite()))
        restore.side_effect = lambda current, ids: np.array(m.matrix)
        with self.assertRaises(RepairFailed) as ctx:
            psd_repair(m, max_rounds=3)
        self.assertEqual(ctx.exception.rounds, 3)
        self.assertEqual(ctx.exception.app_code, EC.LAG_REPAIR_FAILED)
        self.assertIsInstance(ctx.exception.best, FullCorrMatrix)

    @hsettings(max_examples=25, deadline=None)
    @given(st.integers(0, 100_000))
    def test_random_structured_matrices(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.uniform(-0.9, 0.9, size=(2, 2, 3))
        off = rng.uniform(-0.9, 0.9)
        r[:, :, 0] = [[1.0, off], [off, 1.0]]
        m = assemble_full_matrix(LaggedCorrelationSet(r))
        res = psd_repair(m)
        self.assertLessEqual(res.rounds, 20)
        self.assertGreater(np.linalg.eigvalsh(res.matrix.matrix)[0], 0.0)
        assert_block_toeplitz(self, res.matrix)
