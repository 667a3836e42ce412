from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict

import numpy as np
from django.conf import settings
from django.db import models

from bvn.services import CorrelationTransform
from marginal.services import PiecewiseTransform
from vstap import error_codes as EC
from vstap.exceptions import DegenerateInput, InvalidInput

logger = logging.getLogger(__name__)


class SolveStatus(models.TextChoices):
    CONVERGED = "CONVERGED", "Converged"
    MAX_ITERATIONS = "MAX_ITERATIONS", "Max iterations reached"
    INFEASIBLE = "INFEASIBLE", "Infeasible target"


@dataclass
class SolveReport:
    solution: float
    iterations: int
    used_binary_search: bool
    residual: float
    status: str

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED

    def as_dict(self) -> dict:
        return asdict(self)


# ---- Helpers ----
def _pearson(x: np.ndarray, y: np.ndarray, ddof: int = 1) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx <= 0.0 or syy <= 0.0:
        raise DegenerateInput(
            "Correlation is undefined for a zero-variance sample",
            code=EC.SOLV_DEGENERATE_INPUT,
        )
    return float(xc @ yc) / math.sqrt(sxx * syy)


def _pair(xi, xj, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(xi, dtype=float).ravel()
    b = np.asarray(xj, dtype=float).ravel()
    if a.size != b.size or a.size < min_len:
        raise InvalidInput(
            f"Expected two samples of equal length >= {min_len}",
            code=EC.SOLV_INVALID_INPUT,
            context={"len_i": int(a.size), "len_j": int(b.size)},
        )
    return a, b


def _bisect(psi, target: float, lo: float, hi: float, epsilon: float, budget: int):
    """Bisection on psi(r) = target over [lo, hi]; returns (r, residual, steps, bracketed)."""
    f_lo = target - psi(lo)
    f_hi = target - psi(hi)
    if f_lo == 0.0:
        return lo, f_lo, 0, True
    if f_hi == 0.0:
        return hi, f_hi, 0, True
    if f_lo * f_hi > 0:
        best = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
        return best[0], best[1], 0, False

    steps = 0
    mid, f_mid = hi, f_hi
    while steps < budget:
        steps += 1
        mid = 0.5 * (lo + hi)
        f_mid = target - psi(mid)
        if abs(f_mid) < epsilon or abs(hi - lo) < 1e-13:
            break
        if f_lo * f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return mid, f_mid, steps, True


# ---- Public API ----
def naive_corr(zi, zj) -> float:
    """Pearson correlation of the Gaussianized (Phi^-1 of the empirical CDF) samples."""
    a, b = _pair(zi, zj, 3)
    return float(np.clip(_pearson(a, b), -1.0, 1.0))


def feasible_bounds(xi, xj) -> tuple[float, float]:
    """
    Attainable correlation range for the two samples: antitone pairing
    (sorted x with reverse-sorted y) and comonotone pairing (both sorted).
    """
    a, b = _pair(xi, xj, 2)
    n = a.size
    xs = np.sort(a)
    ys = np.sort(b)
    sx = a.std(ddof=1)
    sy = b.std(ddof=1)
    if sx <= 0.0 or sy <= 0.0:
        raise DegenerateInput(
            "Feasible bounds are undefined for a zero-variance sample",
            code=EC.SOLV_DEGENERATE_INPUT,
        )
    cross = n * a.mean() * b.mean()
    lower = (float(xs @ ys[::-1]) - cross) / (n - 1) / (sx * sy)
    upper = (float(xs @ ys) - cross) / (n - 1) / (sx * sy)
    return float(np.clip(lower, -1.0, 1.0)), float(np.clip(upper, -1.0, 1.0))


def solve_gaussian_corr(
    ti: PiecewiseTransform,
    tj: PiecewiseTransform,
    target: float,
    *,
    channel_stats: tuple[float, float, float, float],
    start: float | None = None,
    epsilon: float | None = None,
    max_iter: int | None = None,
    bounds: tuple[float, float] | None = None,
) -> SolveReport:
    """
    Finds r_Z with psi_hat(r_Z) = target by the fixed-point update
    r <- r + (target - psi_hat(r)). Beyond |r| > threshold the local monotonicity of
    psi_hat is checked and, when it fails, bisection between the threshold and the
    current iterate takes over. channel_stats = (mean_i, mean_j, sd_i, sd_j).
    """
    epsilon = settings.VSTAP_DEFAULT_EPSILON if epsilon is None else float(epsilon)
    max_iter = settings.VSTAP_DEFAULT_MAX_ITER if max_iter is None else int(max_iter)
    clamp = settings.VSTAP_ITERATE_CLAMP
    threshold = settings.VSTAP_MONOTONICITY_THRESHOLD
    step = settings.VSTAP_MONOTONICITY_STEP

    target = float(target)
    if not abs(target) <= 1.0:
        raise InvalidInput("Target correlation must lie in [-1, 1]", code=EC.SOLV_INVALID_INPUT, context={"target": target})
    if epsilon <= 0 or max_iter < 1:
        raise InvalidInput("epsilon and max_iter must be positive", code=EC.SOLV_INVALID_INPUT)
    if start is not None and not abs(start) <= 1.0:
        raise InvalidInput("Start value must lie in [-1, 1]", code=EC.SOLV_INVALID_INPUT, context={"start": start})

    r0 = float(np.clip(target if start is None else start, -clamp, clamp))

    if bounds is not None:
        lower, upper = bounds
        if target < lower or target > upper:
            logger.debug("target %.6f outside feasible bounds [%.6f, %.6f]", target, lower, upper)
            return SolveReport(r0, 0, False, float("nan"), SolveStatus.INFEASIBLE)

    mean_i, mean_j, sd_i, sd_j = channel_stats
    psi = CorrelationTransform(ti, tj, mean_i, mean_j, sd_i, sd_j)

    # psi_hat is taken as monotone inside the threshold; the outer band is sampled
    outer_points = [threshold, 0.5 * (threshold + clamp), 0.99, clamp]
    psi_hi = max(psi(r) for r in outer_points)
    psi_lo = min(psi(-r) for r in outer_points)
    if target > psi_hi + epsilon:
        return SolveReport(clamp, 0, False, target - psi_hi, SolveStatus.INFEASIBLE)
    if target < psi_lo - epsilon:
        return SolveReport(-clamp, 0, False, target - psi_lo, SolveStatus.INFEASIBLE)

    r = r0
    best_r, best_res = r, math.inf
    used_bisection = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        residual = target - psi(r)
        if abs(residual) < abs(best_res):
            best_r, best_res = r, residual
        if abs(residual) < epsilon:
            return SolveReport(r, iterations, used_bisection, residual, SolveStatus.CONVERGED)

        if abs(r) > threshold and not used_bisection:
            up = psi(min(r + step, clamp))
            down = psi(max(r - step, -clamp))
            if up < down:
                used_bisection = True
                logger.warning("psi_hat not monotone near r=%.5f, switching to bisection", r)
                edge = math.copysign(threshold, r)
                lo, hi = (edge, r) if edge < r else (r, edge)
                r_b, res_b, steps, bracketed = _bisect(psi, target, lo, hi, epsilon, max_iter - iterations)
                iterations += steps
                if abs(res_b) < abs(best_res):
                    best_r, best_res = r_b, res_b
                if bracketed and abs(res_b) < epsilon:
                    return SolveReport(r_b, iterations, True, res_b, SolveStatus.CONVERGED)
                # no sign change in the interval: report, do not guess
                return SolveReport(best_r, iterations, True, best_res, SolveStatus.MAX_ITERATIONS)

        r = float(np.clip(r + residual, -clamp, clamp))

    logger.warning("fixed point did not reach epsilon=%g after %d iterations (residual %.3g)", epsilon, max_iter, best_res)
    return SolveReport(best_r, iterations, used_bisection, best_res, SolveStatus.MAX_ITERATIONS)
