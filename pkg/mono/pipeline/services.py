from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from django.conf import settings
from django.db import models
from scipy.special import ndtr, ndtri

from bvn.services import psi_eval
from lagcorr.services import (
    LaggedCorrelationSet,
    assemble_full_matrix,
    estimate_lagged_correlations,
    psd_repair,
)
from marginal.services import (
    EmpiricalMarginal,
    PiecewiseTransform,
    apply_transform,
    empirical_quantile,
    fit_piecewise,
    gaussianize,
    ordinal_ranks,
    rank_remap,
)
from solver.services import SolveReport, SolveStatus, feasible_bounds, naive_corr, solve_gaussian_corr
from var.services import Innovation, VarModel, simulate, yule_walker
from vstap import error_codes as EC
from vstap.exceptions import DegenerateInput, InfeasibleCorrelation, InvalidInput, VstapError

logger = logging.getLogger(__name__)


class TransformMode(models.TextChoices):
    EXACT = "exact", "Exact marginal"
    PIECEWISE = "piecewise", "Piecewise marginal"


class Dispatch(models.TextChoices):
    LOCAL = "local", "In process"
    CELERY = "celery", "Celery workers"


@dataclass(frozen=True)
class CellProblem:
    """One (i, j, tau) Gaussian correlation solve, self-contained so it can travel to a worker."""
    i: int
    j: int
    tau: int
    target: float
    start: float
    lower: float
    upper: float
    breakpoints: list
    intercepts_i: list
    slopes_i: list
    intercepts_j: list
    slopes_j: list
    channel_stats: tuple
    epsilon: float
    max_iter: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CellDiagnostic:
    i: int
    j: int
    tau: int
    target: float
    solution: float
    psi_at_solution: float | None
    iterations: int
    used_binary_search: bool
    residual: float
    status: str
    lower: float
    upper: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FitDiagnostics:
    cells: list[CellDiagnostic]
    repair_rounds: int
    frobenius_distance: float
    min_eigenvalue: float

    @property
    def binary_search_cells(self) -> list[tuple[int, int, int]]:
        return [(c.i, c.j, c.tau) for c in self.cells if c.used_binary_search]

    @property
    def max_residual(self) -> float:
        res = [abs(c.residual) for c in self.cells if math.isfinite(c.residual)]
        return max(res, default=0.0)


@dataclass(frozen=True, eq=False)
class VstapModel:
    channel_names: list[str]
    marginals: list[EmpiricalMarginal]
    transforms: list[PiecewiseTransform]
    target_corr: LaggedCorrelationSet
    gaussian_corr: LaggedCorrelationSet
    var: VarModel
    diagnostics: FitDiagnostics
    epsilon: float = field(default=1e-5)

    @property
    def K(self) -> int:
        return len(self.marginals)

    @property
    def P(self) -> int:
        return self.target_corr.P

    @property
    def n(self) -> int:
        return self.marginals[0].n

    @property
    def m(self) -> int:
        return self.transforms[0].m


# ---- Helpers ----
def _as_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 2:
        raise InvalidInput("Series must be a K x n matrix", code=EC.PIPE_INVALID_INPUT, context={"shape": list(x.shape)})
    if not np.all(np.isfinite(x)):
        raise InvalidInput("Series contains non-finite values", code=EC.PIPE_INVALID_INPUT)
    return x


def _cells(K: int, P: int) -> list[tuple[int, int, int]]:
    """tau = 0 off-diagonal pairs (i < j), then every ordered pair for tau = 1..P."""
    out = [(i, j, 0) for i in range(K) for j in range(i + 1, K)]
    out += [(i, j, tau) for tau in range(1, P + 1) for i in range(K) for j in range(K)]
    return out


def _problem_transforms(problem: CellProblem) -> tuple[PiecewiseTransform, PiecewiseTransform]:
    ti = PiecewiseTransform(problem.breakpoints, problem.intercepts_i, problem.slopes_i)
    tj = PiecewiseTransform(problem.breakpoints, problem.intercepts_j, problem.slopes_j)
    return ti, tj


def solve_cell(problem: CellProblem) -> CellDiagnostic:
    ti, tj = _problem_transforms(problem)
    try:
        report: SolveReport = solve_gaussian_corr(
            ti,
            tj,
            problem.target,
            channel_stats=tuple(problem.channel_stats),
            start=problem.start,
            epsilon=problem.epsilon,
            max_iter=problem.max_iter,
            bounds=(problem.lower, problem.upper),
        )
    except VstapError as exc:
        raise exc.with_context(i=problem.i, j=problem.j, tau=problem.tau)

    psi_at = None
    if report.status != SolveStatus.INFEASIBLE:
        psi_at = psi_eval(ti, tj, report.solution, *problem.channel_stats)
    return CellDiagnostic(
        i=problem.i,
        j=problem.j,
        tau=problem.tau,
        target=problem.target,
        solution=report.solution,
        psi_at_solution=psi_at,
        iterations=report.iterations,
        used_binary_search=report.used_binary_search,
        residual=report.residual,
        status=str(report.status),
        lower=problem.lower,
        upper=problem.upper,
    )


def _solve_all(problems: list[CellProblem], dispatch: str) -> list[CellDiagnostic]:
    if dispatch == Dispatch.CELERY:
        from celery import group

        from .tasks import solve_cell_task

        result = group(solve_cell_task.s(p.as_dict()) for p in problems).apply_async()
        # group results come back in submission order
        return [CellDiagnostic(**d) for d in result.get()]
    return [solve_cell(p) for p in problems]


# ---- Public API ----
def fit_vstap(
    series,
    P: int,
    *,
    m: int | None = None,
    epsilon: float | None = None,
    max_iter: int | None = None,
    channel_names: list[str] | None = None,
    innovation: str = Innovation.RESIDUAL,
    dispatch: str | None = None,
) -> VstapModel:
    x = _as_series(series)
    K, n = x.shape
    P = int(P)
    m = settings.VSTAP_DEFAULT_BREAKPOINTS if m is None else int(m)
    epsilon = settings.VSTAP_DEFAULT_EPSILON if epsilon is None else float(epsilon)
    max_iter = settings.VSTAP_DEFAULT_MAX_ITER if max_iter is None else int(max_iter)
    dispatch = settings.VSTAP_DISPATCH if dispatch is None else dispatch
    names = list(channel_names) if channel_names is not None else [f"x{i + 1}" for i in range(K)]

    if P < 0 or len(names) != K:
        raise InvalidInput("P must be >= 0 and there must be one name per channel", code=EC.PIPE_INVALID_INPUT)
    if n <= max(4 * (P + 1), 2 * m):
        raise InvalidInput(
            f"{n} samples are too few for P={P}, m={m}",
            code=EC.PIPE_INVALID_INPUT,
            context={"n": n, "P": P, "m": m},
        )
    for i in range(K):
        if np.all(x[i] == x[i, 0]):
            raise DegenerateInput(
                f"Channel {names[i]!r} is constant",
                code=EC.PIPE_DEGENERATE_INPUT,
                context={"channel": names[i], "index": i},
            )

    logger.info("fitting K=%d channels, n=%d, P=%d, m=%d", K, n, P, m)
    marginals = [EmpiricalMarginal.from_sample(x[i]) for i in range(K)]
    transforms = [fit_piecewise(mg, m) for mg in marginals]
    target = estimate_lagged_correlations(x, P)
    z = np.stack([gaussianize(marginals[i], x[i]) for i in range(K)])

    problems = []
    for i, j, tau in _cells(K, P):
        try:
            bounds = feasible_bounds(x[i, tau:], x[j, :n - tau])
            start = naive_corr(z[i, tau:], z[j, :n - tau])
        except VstapError as exc:
            raise exc.with_context(i=i, j=j, tau=tau)
        problems.append(_problem(i, j, tau, target, start, bounds, marginals, transforms, epsilon, max_iter))

    return _solve_and_assemble(names, marginals, transforms, target, problems, innovation, dispatch, epsilon)


def fit_from_target(
    marginals: list[EmpiricalMarginal],
    target: LaggedCorrelationSet,
    *,
    m: int | None = None,
    epsilon: float | None = None,
    max_iter: int | None = None,
    channel_names: list[str] | None = None,
    innovation: str = Innovation.RESIDUAL,
    dispatch: str | None = None,
) -> VstapModel:
    """
    Model from given inputs instead of a series: one marginal sample per channel (any
    lengths) and the lagged correlations to reproduce. Feasibility bounds come
    from the marginal samples and every solve starts at its target.
    """
    m = settings.VSTAP_DEFAULT_BREAKPOINTS if m is None else int(m)
    epsilon = settings.VSTAP_DEFAULT_EPSILON if epsilon is None else float(epsilon)
    max_iter = settings.VSTAP_DEFAULT_MAX_ITER if max_iter is None else int(max_iter)
    dispatch = settings.VSTAP_DISPATCH if dispatch is None else dispatch
    K, P = target.K, target.P
    names = list(channel_names) if channel_names is not None else [f"x{i + 1}" for i in range(K)]
    if len(marginals) != K or len(names) != K:
        raise InvalidInput(
            "Need one marginal and one name per channel of the target",
            code=EC.PIPE_INVALID_INPUT,
            context={"K": K, "marginals": len(marginals), "names": len(names)},
        )

    logger.info("fitting K=%d channels from target correlations, P=%d, m=%d", K, P, m)
    transforms = [fit_piecewise(mg, m) for mg in marginals]
    problems = []
    for i, j, tau in _cells(K, P):
        try:
            bounds = feasible_bounds(*_common_grid(marginals[i], marginals[j]))
        except VstapError as exc:
            raise exc.with_context(i=i, j=j, tau=tau)
        start = float(target.r[i, j, tau])
        problems.append(_problem(i, j, tau, target, start, bounds, marginals, transforms, epsilon, max_iter))

    return _solve_and_assemble(names, marginals, transforms, target, problems, innovation, dispatch, epsilon)


def _common_grid(mi: EmpiricalMarginal, mj: EmpiricalMarginal) -> tuple[np.ndarray, np.ndarray]:
    if mi.n == mj.n:
        return mi.values, mj.values
    n = max(mi.n, mj.n)
    p = (np.arange(n) + 0.5) / n
    return empirical_quantile(mi, p), empirical_quantile(mj, p)


def _problem(i, j, tau, target, start, bounds, marginals, transforms, epsilon, max_iter) -> CellProblem:
    lower, upper = bounds
    return CellProblem(
        i=i, j=j, tau=tau,
        target=float(target.r[i, j, tau]),
        start=start,
        lower=lower,
        upper=upper,
        breakpoints=transforms[i].breakpoints.tolist(),
        intercepts_i=transforms[i].intercepts.tolist(),
        slopes_i=transforms[i].slopes.tolist(),
        intercepts_j=transforms[j].intercepts.tolist(),
        slopes_j=transforms[j].slopes.tolist(),
        channel_stats=(marginals[i].mean, marginals[j].mean, marginals[i].sd, marginals[j].sd),
        epsilon=epsilon,
        max_iter=max_iter,
    )


def _solve_and_assemble(names, marginals, transforms, target, problems, innovation, dispatch, epsilon) -> VstapModel:
    K, P = target.K, target.P
    cells = _solve_all(problems, dispatch)

    infeasible = [c for c in cells if c.status == SolveStatus.INFEASIBLE]
    if infeasible:
        raise InfeasibleCorrelation(
            f"{len(infeasible)} target correlation(s) are not attainable with these marginals",
            code=EC.PIPE_INFEASIBLE_CORRELATION,
            context={"cells": [
                {"i": c.i, "j": c.j, "tau": c.tau, "target": c.target, "lower": c.lower, "upper": c.upper}
                for c in infeasible
            ]},
        )
    stalled = [c for c in cells if c.status == SolveStatus.MAX_ITERATIONS]
    if stalled:
        logger.warning("%d cell(s) stopped at max iterations, using best iterate", len(stalled))

    rz = np.zeros((K, K, P + 1))
    np.fill_diagonal(rz[:, :, 0], 1.0)
    for c in cells:
        rz[c.i, c.j, c.tau] = c.solution
        if c.tau == 0:
            rz[c.j, c.i, 0] = c.solution

    repair = psd_repair(assemble_full_matrix(LaggedCorrelationSet(rz)))
    gaussian = repair.matrix.to_lagged()
    var = yule_walker(gaussian, innovation=innovation)
    logger.info(
        "fit finished: %d cells, repair rounds %d, spectral radius %.4f",
        len(cells), repair.rounds, var.spectral_radius,
    )
    return VstapModel(
        channel_names=names,
        marginals=marginals,
        transforms=transforms,
        target_corr=target,
        gaussian_corr=gaussian,
        var=var,
        diagnostics=FitDiagnostics(
            cells=cells,
            repair_rounds=repair.rounds,
            frobenius_distance=repair.frobenius_distance,
            min_eigenvalue=repair.min_eigenvalue,
        ),
        epsilon=epsilon,
    )


def generate(model: VstapModel, N: int, seed: int, mode: str = TransformMode.EXACT, burn_in: int | None = None) -> np.ndarray:
    if mode not in TransformMode.values:
        raise InvalidInput(f"Unknown transform mode {mode!r}", code=EC.PIPE_INVALID_INPUT)
    z = simulate(model.var, int(N), seed, burn_in)
    out = np.empty_like(z)
    for i in range(model.K):
        if mode == TransformMode.PIECEWISE:
            out[i] = apply_transform(model.transforms[i], z[i])
        elif z.shape[1] == model.marginals[i].n:
            out[i] = rank_remap(ordinal_ranks(z[i]), model.marginals[i])
        else:
            p = np.clip(ndtr(z[i]), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
            out[i] = empirical_quantile(model.marginals[i], p)
    return out


def generate_many(model: VstapModel, N: int, seeds: list[int], mode: str, *, dispatch: str | None = None) -> list[np.ndarray]:
    dispatch = settings.VSTAP_DISPATCH if dispatch is None else dispatch
    if dispatch == Dispatch.CELERY:
        from celery import group

        from .serializers import dump_model
        from .tasks import generate_realization_task

        payload = dump_model(model)
        result = group(generate_realization_task.s(payload, N, s, str(mode)) for s in seeds).apply_async()
        return [np.asarray(x, dtype=float) for x in result.get()]
    return [generate(model, N, s, mode) for s in seeds]


def surrogate(series, P: int, *, m: int | None = None, epsilon: float | None = None, seed: int = 0,
              model: VstapModel | None = None) -> np.ndarray:
    """
    Random realization with the sample's lagged correlations in which every
    channel is a permutation of the original values.
    """
    x = _as_series(series)
    model = model or fit_vstap(x, P, m=m, epsilon=epsilon)
    y = generate(model, x.shape[1], seed, TransformMode.EXACT)
    return np.stack([rank_remap(ordinal_ranks(y[i]), model.marginals[i]) for i in range(model.K)])


def fisher_ci(r: float, N: int, level: float | None = None) -> tuple[float, float]:
    level = settings.VSTAP_FISHER_LEVEL if level is None else float(level)
    r = float(r)
    if abs(r) >= 1.0:
        raise DegenerateInput("Fisher interval is undefined for |r| = 1", code=EC.PIPE_DEGENERATE_INPUT, context={"r": r})
    if int(N) <= 3 or not (0.0 < level < 1.0):
        raise InvalidInput("Fisher interval needs N > 3 and 0 < level < 1", code=EC.PIPE_INVALID_INPUT)
    half = ndtri(0.5 + level / 2.0) / math.sqrt(int(N) - 3)
    centre = math.atanh(r)
    return math.tanh(centre - half), math.tanh(centre + half)


def correlation_band(ensemble, level: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Percentile band of a B x K x K x (P+1) stack of lagged correlation tensors."""
    level = settings.VSTAP_FISHER_LEVEL if level is None else float(level)
    stack = np.asarray(ensemble, dtype=float)
    if stack.ndim != 4 or stack.shape[0] < 2:
        raise InvalidInput("Ensemble must be a stack of at least 2 correlation tensors", code=EC.PIPE_INVALID_INPUT)
    lo = np.percentile(stack, 50.0 * (1.0 - level), axis=0)
    hi = np.percentile(stack, 50.0 * (1.0 + level), axis=0)
    return lo, hi


def ensemble_coverage(target, ensemble, level: float | None = None, *, cells=None) -> float:
    """Fraction of (i, j, tau) cells whose target value falls inside the ensemble band."""
    r = target.r if isinstance(target, LaggedCorrelationSet) else np.asarray(target, dtype=float)
    lo, hi = correlation_band(ensemble, level)
    inside = (r >= lo) & (r <= hi)
    if cells is None:
        K = r.shape[0]
        # the unit diagonal at lag 0 is trivially covered
        mask = np.ones_like(inside, dtype=bool)
        mask[np.arange(K), np.arange(K), 0] = False
        return float(inside[mask].mean())
    picks = [inside[i, j, tau] for i, j, tau in cells]
    return float(np.mean(picks))


def achieved_correlations(realization, P: int) -> LaggedCorrelationSet:
    return estimate_lagged_correlations(realization, P)
