from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from django.conf import settings
from django.db import models

from lagcorr.services import LaggedCorrelationSet, assemble_full_matrix
from vstap import error_codes as EC
from vstap.exceptions import InvalidInput, NonStationary, NumericallySingular

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


class Innovation(models.TextChoices):
    RESIDUAL = "residual", "Yule-Walker residual covariance"
    UNIT = "unit", "Unit covariance"


@dataclass(frozen=True, eq=False)
class VarModel:
    """
    Z_t = c + A_1 Z_{t-1} + ... + A_P Z_{t-P} + e_t,  e_t ~ N(0, sigma_e).
    A is stored as a P x K x K array; P = 0 is plain correlated white noise.
    """
    A: np.ndarray
    sigma_e: np.ndarray
    intercept: np.ndarray | None = None
    innovation: str = Innovation.RESIDUAL
    # seed recorded by the run that wrote the model; simulate takes its own
    seed: int | None = None
    spectral_radius: float = field(init=False)

    def __post_init__(self):
        sigma = np.atleast_2d(np.array(self.sigma_e, dtype=float))
        K = sigma.shape[0]
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, K, K))
        if A.ndim == 2:
            A = A[None, :, :]
        if sigma.shape != (K, K) or A.ndim != 3 or A.shape[1:] != (K, K):
            raise InvalidInput(
                "Coefficient and covariance dimensions are inconsistent",
                code=EC.VAR_INVALID_INPUT,
                context={"A": list(A.shape), "sigma_e": list(sigma.shape)},
            )
        if not np.allclose(sigma, sigma.T, atol=1e-10, rtol=0.0):
            raise InvalidInput("Innovation covariance must be symmetric", code=EC.VAR_INVALID_INPUT)
        sigma = _clip_psd(sigma)

        c = np.zeros(K) if self.intercept is None else np.array(self.intercept, dtype=float).ravel()
        if c.shape != (K,):
            raise InvalidInput("Intercept must have one entry per channel", code=EC.VAR_INVALID_INPUT)

        radius = _spectral_radius(A)
        if radius >= 1.0:
            raise NonStationary(
                f"Spectral radius {radius:.6f} is not below 1",
                code=EC.VAR_NON_STATIONARY,
                context={"spectral_radius": radius},
            )
        for arr in (A, sigma, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma_e", sigma)
        object.__setattr__(self, "intercept", c)
        object.__setattr__(self, "spectral_radius", radius)

    @property
    def K(self) -> int:
        return int(self.sigma_e.shape[0])

    @property
    def P(self) -> int:
        return int(self.A.shape[0])

    @property
    def default_burn_in(self) -> int:
        return max(settings.VSTAP_MIN_BURN_IN, settings.VSTAP_BURN_IN_PER_LAG * self.P)


# ---- Helpers ----
def _clip_psd(sigma: np.ndarray) -> np.ndarray:
    sigma = 0.5 * (sigma + sigma.T)
    w, V = np.linalg.eigh(sigma)
    if w[0] >= 0:
        return sigma
    fixed = (V * np.maximum(w, 0.0)) @ V.T
    return 0.5 * (fixed + fixed.T)


def companion_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    P, K = A.shape[0], A.shape[1]
    F = np.zeros((K * P, K * P))
    F[:K, :] = np.hstack(list(A))
    F[K:, :K * (P - 1)] = np.eye(K * (P - 1))
    return F


def _spectral_radius(A: np.ndarray) -> float:
    if A.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(A)))))


def _factor(sigma: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = sigma; eigen fallback for near-singular sigma."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(sigma)
        return V * np.sqrt(np.maximum(w, 0.0))


# ---- Public API ----
def stationarity_check(model) -> tuple[bool, float]:
    """Accepts a VarModel or a bare stack of coefficient matrices."""
    if isinstance(model, VarModel):
        return model.spectral_radius < 1.0, model.spectral_radius
    A = np.asarray(model, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1, 1)
    if A.ndim == 2:
        A = A[None, :, :]
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise InvalidInput("Coefficients must be P square K x K matrices", code=EC.VAR_INVALID_INPUT)
    radius = _spectral_radius(A)
    return radius < 1.0, radius


def yule_walker(lagged: LaggedCorrelationSet, *, innovation: str = Innovation.RESIDUAL) -> VarModel:
    """
    Solves [A_1 ... A_P] G = [R(1) ... R(P)] where G is the leading KP x KP block
    of the full correlation matrix; sigma_e = R(0) - sum A_tau R(tau)^T.
    """
    if innovation not in Innovation.values:
        raise InvalidInput(f"Unknown innovation mode {innovation!r}", code=EC.VAR_INVALID_INPUT)
    K, P = lagged.K, lagged.P
    R0 = lagged.block(0)
    if P == 0:
        sigma = R0 if innovation == Innovation.RESIDUAL else np.eye(K)
        return VarModel(A=np.zeros((0, K, K)), sigma_e=sigma, innovation=innovation)

    G = assemble_full_matrix(lagged).matrix[:K * P, :K * P]
    rhs = np.hstack([lagged.block(tau) for tau in range(1, P + 1)])
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericallySingular(
            "Yule-Walker system is numerically singular",
            code=EC.VAR_NUMERICALLY_SINGULAR,
            context={"condition": float(cond) if np.isfinite(cond) else None},
        )
    try:
        stacked = scipy.linalg.solve(G, rhs.T, assume_a="sym").T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericallySingular(str(exc), code=EC.VAR_NUMERICALLY_SINGULAR) from exc

    A = np.stack([stacked[:, tau * K:(tau + 1) * K] for tau in range(P)])
    if innovation == Innovation.RESIDUAL:
        sigma = R0 - sum(A[tau] @ lagged.block(tau + 1).T for tau in range(P))
        sigma = 0.5 * (sigma + sigma.T)
    else:
        sigma = np.eye(K)

    radius = _spectral_radius(A)
    logger.debug("yule-walker K=%d P=%d spectral radius %.6f", K, P, radius)
    return VarModel(A=A, sigma_e=sigma, innovation=innovation)


def autocovariances(model: VarModel, max_lag: int) -> np.ndarray:
    """Gamma(h) = E[(Z_t - mu)(Z_{t-h} - mu)^T] for h = 0..max_lag, stacked as K x K x (max_lag+1)."""
    K, P = model.K, model.P
    if P == 0:
        gammas = [model.sigma_e] + [np.zeros((K, K))] * max_lag
    else:
        F = companion_matrix(model.A)
        Q = np.zeros((K * P, K * P))
        Q[:K, :K] = model.sigma_e
        big = scipy.linalg.solve_discrete_lyapunov(F, Q)
        # block (0, v) of the state covariance is Gamma(v) = E[Z_t Z_{t-v}^T]
        gammas = [big[:K, v * K:(v + 1) * K] for v in range(P)]
        for h in range(P, max_lag + 1):
            gammas.append(sum(model.A[tau] @ gammas[h - tau - 1] for tau in range(P)))
        gammas = gammas[:max_lag + 1]
    gammas[0] = 0.5 * (gammas[0] + gammas[0].T)
    return np.stack(gammas, axis=2)


def theoretical_correlations(model: VarModel, max_lag: int) -> LaggedCorrelationSet:
    """Exact lagged correlations of the stationary process up to max_lag."""
    g = autocovariances(model, max_lag)
    d = 1.0 / np.sqrt(np.diag(g[:, :, 0]))
    r = g * np.outer(d, d)[:, :, None]
    np.fill_diagonal(r[:, :, 0], 1.0)
    return LaggedCorrelationSet(r)


def standardized_coefficients(model: VarModel) -> np.ndarray:
    """D A_tau D^-1 with D = diag(1 / stationary sd): the coefficients of the unit-variance process."""
    sd = np.sqrt(np.diag(autocovariances(model, 0)[:, :, 0]))
    return model.A * (1.0 / sd)[None, :, None] * sd[None, None, :]


def simulate(model: VarModel, N: int, seed: int, burn_in: int | None = None) -> np.ndarray:
    """K x N realization; same (model, N, seed, burn_in) gives the same output."""
    if model.spectral_radius >= 1.0:
        raise NonStationary("Cannot simulate a non-stationary model", code=EC.VAR_NON_STATIONARY)
    if int(N) < 1:
        raise InvalidInput("N must be at least 1", code=EC.VAR_INVALID_INPUT, context={"N": N})
    burn_in = model.default_burn_in if burn_in is None else int(burn_in)
    if burn_in < 0:
        raise InvalidInput("burn_in must be non-negative", code=EC.VAR_INVALID_INPUT)

    K, P = model.K, model.P
    total = int(N) + burn_in
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal((total, K)) @ _factor(model.sigma_e).T + model.intercept

    if P == 0:
        return noise[burn_in:].T.copy()

    # lagged state stacked newest first: [z_{t-1}, ..., z_{t-P}]
    coeffs = np.hstack(list(model.A))
    z = np.zeros((P + total, K))
    for t in range(total):
        z[P + t] = coeffs @ z[t:P + t][::-1].ravel() + noise[t]
    return z[P + burn_in:].T.copy()


def reference_var2() -> VarModel:
    """Two-channel order-2 system with a constant term."""
    A1 = [[0.5, 0.1], [0.4, 0.5]]
    A2 = [[0.0, 0.0], [0.25, 0.0]]
    return VarModel(A=[A1, A2], sigma_e=np.diag([0.09, 0.04]), intercept=[0.02, 0.03])


def reference_var5() -> VarModel:
    """Five-channel order-4 system with unit innovations."""
    A = np.zeros((4, 5, 5))
    A[0, 0, 0], A[1, 0, 0], A[0, 0, 4] = 0.4, -0.5, 0.4
    A[0, 1, 1], A[3, 1, 0], A[1, 1, 4] = 0.4, -0.3, 0.4
    A[0, 2, 2], A[1, 2, 2], A[2, 2, 4] = 0.5, -0.7, -0.3
    A[2, 3, 3], A[1, 3, 0], A[1, 3, 1] = 0.8, 0.4, 0.3
    A[0, 4, 4], A[1, 4, 4], A[0, 4, 3] = 0.7, -0.5, -0.4
    return VarModel(A=A, sigma_e=np.eye(5))
