from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from scipy.special import ndtri
from scipy.stats import rankdata

from vstap import error_codes as EC
from vstap.exceptions import InvalidInput, InsufficientData

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EmpiricalMarginal:
    """
    Sorted sample of one channel. `ranks` keeps the original time order as a
    1-based ordinal rank permutation, so the sample can be rebuilt exactly.
    """
    values: np.ndarray
    ranks: np.ndarray
    _levels: np.ndarray = field(repr=False)
    _level_probs: np.ndarray = field(repr=False)

    @classmethod
    def from_sample(cls, sample) -> "EmpiricalMarginal":
        x = np.asarray(sample, dtype=float).ravel()
        if x.size < 2:
            raise InsufficientData(
                "A marginal needs at least 2 sample values",
                code=EC.MARG_INSUFFICIENT_DATA,
                context={"n": int(x.size)},
            )
        if not np.all(np.isfinite(x)):
            raise InvalidInput("Sample contains non-finite values", code=EC.MARG_INVALID_INPUT)

        values = np.sort(x, kind="mergesort")
        ranks = rankdata(x, method="ordinal").astype(np.int64)

        # averaged ranks for ties -> one plotting position per distinct value
        levels, first, counts = np.unique(values, return_index=True, return_counts=True)
        avg_rank = first + 1 + (counts - 1) / 2.0
        level_probs = (avg_rank - 0.5) / values.size

        values.setflags(write=False)
        ranks.setflags(write=False)
        return cls(values=values, ranks=ranks, _levels=levels, _level_probs=level_probs)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def sd(self) -> float:
        # divisor n, the same normalisation as the lagged correlation estimator
        return float(self.values.std())

    @property
    def plotting_positions(self) -> np.ndarray:
        return (np.arange(1, self.n + 1) - 0.5) / self.n

    def sample(self) -> np.ndarray:
        """Original sample in its original order."""
        return self.values[self.ranks - 1]


@dataclass(frozen=True, eq=False)
class PiecewiseTransform:
    """Monotone piecewise-linear map from the standard Gaussian axis to a target marginal."""
    breakpoints: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.breakpoints, dtype=float).ravel()
        c0 = np.asarray(self.intercepts, dtype=float).ravel()
        c1 = np.asarray(self.slopes, dtype=float).ravel()
        if c0.size != a.size + 1 or c1.size != c0.size:
            raise InvalidInput(
                "A transform with m segments needs m-1 breakpoints and m coefficient pairs",
                code=EC.MARG_INVALID_INPUT,
                context={"breakpoints": int(a.size), "segments": int(c0.size)},
            )
        if a.size and np.any(np.diff(a) <= 0):
            raise InvalidInput("Breakpoints must be strictly increasing", code=EC.MARG_INVALID_INPUT)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c0)) and np.all(np.isfinite(c1))):
            raise InvalidInput("Transform coefficients must be finite", code=EC.MARG_INVALID_INPUT)
        if np.any(c1 < 0):
            raise InvalidInput("Segment slopes must be non-negative", code=EC.MARG_INVALID_INPUT)
        object.__setattr__(self, "breakpoints", a)
        object.__setattr__(self, "intercepts", c0)
        object.__setattr__(self, "slopes", c1)

    @property
    def m(self) -> int:
        return int(self.intercepts.size)

    @property
    def edges(self) -> np.ndarray:
        """Segment edges a_0 = -inf, a_1, ..., a_{m-1}, a_m = +inf."""
        return np.concatenate(([-np.inf], self.breakpoints, [np.inf]))

    def shares_breakpoints(self, other: "PiecewiseTransform") -> bool:
        return self.breakpoints.shape == other.breakpoints.shape and np.array_equal(self.breakpoints, other.breakpoints)

    def __call__(self, z):
        return apply_transform(self, z)


# ---- Helpers ----
def _check_probability(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise InvalidInput("Probability must lie strictly inside (0, 1)", code=EC.MARG_INVALID_INPUT)
    return arr


def equiprobable_breakpoints(m: int) -> np.ndarray:
    return ndtri(np.arange(1, m) / m)


def gaussianize(marginal: EmpiricalMarginal, x) -> np.ndarray:
    """z = Phi^-1(F(x)) with the plotting-position CDF."""
    return ndtri(empirical_cdf(marginal, x))


def power_transform(series, a: float) -> np.ndarray:
    """Channel-wise x = s^a; a=3 is monotone, a=2 is not."""
    return np.power(np.asarray(series, dtype=float), a)


# ---- Public API ----
def empirical_cdf(marginal: EmpiricalMarginal, x):
    """
    Plotting-position CDF: the i-th order statistic maps to (i - 0.5)/n, tied values
    share their averaged rank, values in between are linearly interpolated and
    values outside the sample range are clamped to the extreme positions.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("x must be finite", code=EC.MARG_INVALID_INPUT)
    out = np.interp(arr, marginal._levels, marginal._level_probs)
    return float(out) if out.ndim == 0 else out


def empirical_quantile(marginal: EmpiricalMarginal, p):
    arr = _check_probability(p)
    out = np.interp(arr, marginal.plotting_positions, marginal.values)
    return float(out) if out.ndim == 0 else out


def fit_piecewise(marginal: EmpiricalMarginal, m: int | None = None) -> PiecewiseTransform:
    """
    Least-squares line per equiprobable Gaussian segment, fitted independently.
    Segments without two distinct Gaussian scores fall back to a flat line at the
    sample mean of the segment (or at the empirical quantile of its mid level).
    """
    m = settings.VSTAP_DEFAULT_BREAKPOINTS if m is None else int(m)
    if m < 2:
        raise InvalidInput("Segment count must be at least 2", code=EC.MARG_INVALID_INPUT, context={"m": m})
    if marginal.n < 2 * m:
        raise InsufficientData(
            f"{marginal.n} values cannot support {m} segments (need at least {2 * m})",
            code=EC.MARG_INSUFFICIENT_DATA,
            context={"n": marginal.n, "m": m},
        )

    a = equiprobable_breakpoints(m)
    x = marginal.values
    z = gaussianize(marginal, x)
    seg = np.searchsorted(a, z, side="left")

    cnt = np.bincount(seg, minlength=m).astype(float)
    sz = np.bincount(seg, weights=z, minlength=m)
    sx = np.bincount(seg, weights=x, minlength=m)
    szz = np.bincount(seg, weights=z * z, minlength=m)
    szx = np.bincount(seg, weights=z * x, minlength=m)

    with np.errstate(divide="ignore", invalid="ignore"):
        mz = sz / cnt
        mx = sx / cnt
        var_z = szz - sz * mz
        cov_zx = szx - sz * mx
        slope = cov_zx / var_z

    flat = ~(np.isfinite(slope) & (var_z > 1e-14 * np.maximum(cnt, 1.0)))
    negative = (~flat) & (slope < 0)
    if np.any(negative):
        logger.debug("clamping %d negative segment slopes to zero", int(negative.sum()))
    slope = np.where(flat | negative, 0.0, slope)
    intercept = np.where(flat | negative, mx, mx - slope * mz)

    empty = cnt == 0
    if np.any(empty):
        mid_levels = (np.flatnonzero(empty) + 0.5) / m
        intercept[empty] = empirical_quantile(marginal, mid_levels)

    return PiecewiseTransform(breakpoints=a, intercepts=intercept, slopes=slope)


def apply_transform(t: PiecewiseTransform, z):
    arr = np.asarray(z, dtype=float)
    k = np.searchsorted(t.breakpoints, arr, side="left")
    out = t.intercepts[k] + t.slopes[k] * arr
    return float(out) if out.ndim == 0 else out


def rank_remap(source_ranks, target: EmpiricalMarginal) -> np.ndarray:
    """
    Reorders the target sample so that its ranks equal `source_ranks`
    (a 1-based permutation). The output multiset is exactly target.values.
    """
    ranks = np.asarray(source_ranks)
    if ranks.ndim != 1 or ranks.size != target.n:
        raise InvalidInput(
            "Rank permutation length must equal the target sample size",
            code=EC.MARG_RANK_MISMATCH,
            context={"ranks": int(ranks.size), "n": target.n},
        )
    if not np.issubdtype(ranks.dtype, np.integer):
        if not np.all(ranks == np.round(ranks)):
            raise InvalidInput("Ranks must be integers", code=EC.MARG_RANK_MISMATCH)
        ranks = ranks.astype(np.int64)
    if not np.array_equal(np.sort(ranks), np.arange(1, target.n + 1)):
        raise InvalidInput("Ranks must be a permutation of 1..n", code=EC.MARG_RANK_MISMATCH)
    return target.values[ranks - 1].copy()


def ordinal_ranks(series) -> np.ndarray:
    return rankdata(np.asarray(series, dtype=float), method="ordinal").astype(np.int64)
