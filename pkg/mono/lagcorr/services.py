from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from vstap import error_codes as EC
from vstap.exceptions import DegenerateInput, InsufficientData, InvalidInput, RepairFailed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LaggedCorrelationSet:
    """
    r[i, j, tau] = Corr(X_{i,t}, X_{j,t-tau}) for tau = 0..P.
    The tau = 0 slice is symmetric with a unit diagonal.
    """
    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        if r.ndim != 3 or r.shape[0] != r.shape[1] or r.shape[0] < 1 or r.shape[2] < 1:
            raise InvalidInput(
                "Lagged correlations must have shape K x K x (P+1)",
                code=EC.LAG_INVALID_INPUT,
                context={"shape": list(r.shape)},
            )
        if not np.all(np.isfinite(r)) or np.any(np.abs(r) > 1.0 + 1e-12):
            raise InvalidInput("Correlations must be finite and lie in [-1, 1]", code=EC.LAG_INVALID_INPUT)
        r0 = r[:, :, 0]
        if not np.allclose(r0, r0.T, atol=1e-12, rtol=0.0):
            raise InvalidInput("The lag-0 block must be symmetric", code=EC.LAG_INVALID_INPUT)
        if not np.allclose(np.diag(r0), 1.0, atol=1e-10, rtol=0.0):
            raise InvalidInput("The lag-0 block must have a unit diagonal", code=EC.LAG_INVALID_INPUT)

        r = np.clip(r, -1.0, 1.0)
        r[:, :, 0] = 0.5 * (r0 + r0.T)
        np.fill_diagonal(r[:, :, 0], 1.0)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def K(self) -> int:
        return int(self.r.shape[0])

    @property
    def P(self) -> int:
        return int(self.r.shape[2] - 1)

    def block(self, tau: int) -> np.ndarray:
        """R(tau); negative lags use R(-tau) = R(tau)^T."""
        if abs(tau) > self.P:
            raise InvalidInput(f"Lag {tau} exceeds the maximum lag {self.P}", code=EC.LAG_INVALID_INPUT)
        return self.r[:, :, tau] if tau >= 0 else self.r[:, :, -tau].T

    def as_list(self) -> list:
        return self.r.tolist()


@dataclass(frozen=True, eq=False)
class FullCorrMatrix:
    """K(P+1) x K(P+1) block-Toeplitz matrix with block (u, v) = R(v - u)."""
    matrix: np.ndarray
    K: int
    P: int

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        size = self.K * (self.P + 1)
        if m.shape != (size, size):
            raise InvalidInput(
                "Matrix size does not match K(P+1)",
                code=EC.LAG_INVALID_INPUT,
                context={"shape": list(m.shape), "K": self.K, "P": self.P},
            )
        if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
            raise InvalidInput("Full correlation matrix must be symmetric", code=EC.LAG_INVALID_INPUT)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def to_lagged(self) -> LaggedCorrelationSet:
        K = self.K
        r = np.stack([self.matrix[:K, v * K:(v + 1) * K] for v in range(self.P + 1)], axis=2)
        return LaggedCorrelationSet(r)


@dataclass(frozen=True)
class RepairResult:
    matrix: FullCorrMatrix
    rounds: int
    frobenius_distance: float
    min_eigenvalue: float

    def __iter__(self):
        # unpacks as (matrix, rounds)
        yield self.matrix
        yield self.rounds


# ---- Helpers ----
def _structure_ids(K: int, P: int) -> np.ndarray:
    """
    Id of the lagged-correlation parameter stored at every position of the full
    matrix. Positions sharing an id must hold the same value.
    """
    idx = np.arange(K * (P + 1))
    u, i = np.divmod(idx, K)
    U, V = np.meshgrid(u, u, indexing="ij")
    I, J = np.meshgrid(i, i, indexing="ij")
    d = V - U
    neg = d < 0
    ci = np.where(neg, J, I)
    cj = np.where(neg, I, J)
    lag = np.abs(d)
    same = lag == 0
    ci, cj = np.where(same, np.minimum(I, J), ci), np.where(same, np.maximum(I, J), cj)
    return (ci * K + cj) * (P + 1) + lag


def _restore_structure(m: np.ndarray, ids: np.ndarray) -> np.ndarray:
    flat_ids = ids.ravel()
    sums = np.bincount(flat_ids, weights=m.ravel())
    counts = np.bincount(flat_ids)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    out = means[ids]
    np.fill_diagonal(out, 1.0)
    return out


def _clip_spectrum(m: np.ndarray, floor: float) -> np.ndarray:
    w, V = np.linalg.eigh(m)
    clipped = (V * np.maximum(w, floor)) @ V.T
    d = np.sqrt(np.diag(clipped))
    return clipped / np.outer(d, d)


def _blend_identity(m: np.ndarray, eig: float, floor: float) -> np.ndarray:
    """Convex combination with I whose min eigenvalue is exactly floor; keeps structure and unit diagonal."""
    lam = (floor - eig) / (1.0 - eig)
    return (1.0 - lam) * m + lam * np.eye(m.shape[0])


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(m)[0])


def frobenius_distance(a, b) -> float:
    a = a.matrix if isinstance(a, FullCorrMatrix) else np.asarray(a, dtype=float)
    b = b.matrix if isinstance(b, FullCorrMatrix) else np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b, ord="fro"))


# ---- Public API ----
def estimate_lagged_correlations(series, P: int) -> LaggedCorrelationSet:
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or P < 0:
        raise InvalidInput("Series must be a K x n matrix and P >= 0", code=EC.LAG_INVALID_INPUT)
    K, n = x.shape
    if n <= 4 * (P + 1):
        raise InsufficientData(
            f"{n} samples are too few for lag {P} (need more than {4 * (P + 1)})",
            code=EC.LAG_INSUFFICIENT_DATA,
            context={"n": n, "P": P},
        )
    if not np.all(np.isfinite(x)):
        raise InvalidInput("Series contains non-finite values", code=EC.LAG_INVALID_INPUT)

    xc = x - x.mean(axis=1, keepdims=True)
    s = np.sqrt((xc * xc).mean(axis=1))
    dead = np.flatnonzero(s <= 0.0)
    if dead.size:
        raise DegenerateInput(
            f"Channel {int(dead[0])} is constant",
            code=EC.LAG_DEGENERATE_CHANNEL,
            context={"channel": int(dead[0])},
        )
    xc = xc / s[:, None]

    r = np.empty((K, K, P + 1))
    for tau in range(P + 1):
        r[:, :, tau] = xc[:, tau:] @ xc[:, :n - tau].T / n
    r0 = r[:, :, 0]
    r[:, :, 0] = 0.5 * (r0 + r0.T)
    np.fill_diagonal(r[:, :, 0], 1.0)
    return LaggedCorrelationSet(np.clip(r, -1.0, 1.0))


def assemble_full_matrix(lagged: LaggedCorrelationSet) -> FullCorrMatrix:
    K, P = lagged.K, lagged.P
    m = np.empty((K * (P + 1), K * (P + 1)))
    for u in range(P + 1):
        for v in range(P + 1):
            m[u * K:(u + 1) * K, v * K:(v + 1) * K] = lagged.block(v - u)
    return FullCorrMatrix(m, K, P)


def psd_repair(m: FullCorrMatrix, floor: float | None = None, max_rounds: int | None = None) -> RepairResult:
    """
    Alternates eigenvalue clipping (rescaled back to a unit diagonal) with
    averaging over every set of positions the block-Toeplitz pattern ties
    together, until the structured matrix has min eigenvalue >= floor / 2.
    A matrix still indefinite after VSTAP_REPAIR_BLEND_ROUND rounds is blended
    with the identity, which lifts its min eigenvalue to floor in one step.
    """
    floor = settings.VSTAP_EIGEN_FLOOR if floor is None else float(floor)
    max_rounds = settings.VSTAP_REPAIR_MAX_ROUNDS if max_rounds is None else int(max_rounds)
    blend_round = settings.VSTAP_REPAIR_BLEND_ROUND
    if floor <= 0 or max_rounds < 1:
        raise InvalidInput("floor and max_rounds must be positive", code=EC.LAG_INVALID_INPUT)
    if not np.allclose(np.diag(m.matrix), 1.0, atol=1e-10, rtol=0.0):
        raise InvalidInput("Matrix must have a unit diagonal", code=EC.LAG_INVALID_INPUT)

    start_eig = _min_eig(m.matrix)
    if start_eig >= floor / 2:
        return RepairResult(m, 0, 0.0, start_eig)

    logger.info("repairing %dx%d correlation matrix, min eigenvalue %.3g", *m.matrix.shape, start_eig)
    ids = _structure_ids(m.K, m.P)
    current = m.matrix
    for rounds in range(1, max_rounds + 1):
        current = _restore_structure(_clip_spectrum(current, floor), ids)
        eig = _min_eig(current)
        if eig < floor / 2 and rounds == blend_round:
            logger.info("blending with the identity after %d rounds (min eigenvalue %.3g)", rounds, eig)
            current = _blend_identity(current, eig, floor)
            eig = _min_eig(current)
        logger.debug("repair round %d: min eigenvalue %.3g", rounds, eig)
        if eig >= floor / 2:
            out = FullCorrMatrix(current, m.K, m.P)
            dist = frobenius_distance(m, out)
            logger.info("repair finished after %d rounds (frobenius distance %.4g)", rounds, dist)
            return RepairResult(out, rounds, dist, eig)

    logger.warning("repair did not reach a positive definite matrix in %d rounds", max_rounds)
    raise RepairFailed(
        f"Matrix still indefinite after {max_rounds} rounds",
        code=EC.LAG_REPAIR_FAILED,
        best=FullCorrMatrix(current, m.K, m.P),
        rounds=max_rounds,
        context={"min_eigenvalue": _min_eig(current), "rounds": max_rounds},
    )
