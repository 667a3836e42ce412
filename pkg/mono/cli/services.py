from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from django.conf import settings

from bvn.services import Rect, bvn_rect_prob, grid_moments, psi_eval, transform_moments, trunc_moments
from lagcorr.services import FullCorrMatrix, psd_repair
from marginal.services import EmpiricalMarginal, equiprobable_breakpoints, fit_piecewise
from oracle.services import mc_psi, mc_trunc_moments, uniform_gaussian_correlation
from pipeline.serializers import dump_model, load_model
from pipeline.services import (
    VstapModel,
    achieved_correlations,
    correlation_band,
    ensemble_coverage,
    fisher_ci,
    fit_vstap,
    generate_many,
    surrogate,
)
from solver.services import solve_gaussian_corr
from var.services import reference_var2, standardized_coefficients, theoretical_correlations, yule_walker
from vstap import error_codes as EC
from vstap.exceptions import VstapError
from vstap.storage_utils import load_json, read_series_csv, save_json, write_series_csv

from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None
    output: str | None
    report: str | None
    order: int | None
    breakpoints: int
    epsilon: float
    max_iter: int
    length: int | None
    seed: int
    realizations: int
    mode: str
    format: str

    @classmethod
    def from_options(cls, command: str, **options) -> "RunConfig":
        data = {k: v for k, v in options.items() if v is not None}
        ser = RunConfigSerializer(data={**data, "command": command})
        ser.is_valid(raise_exception=True)
        return cls(**ser.validated_data)

    def as_dict(self) -> dict:
        return asdict(self)


# ---- Helpers ----
def _stem_path(output: str, suffix: str) -> Path:
    p = Path(output)
    return p.with_name(p.stem + suffix)


def realization_paths(output: str, count: int) -> list[Path]:
    """A single realization keeps the output name; several get a zero-padded index."""
    p = Path(output)
    if count == 1:
        return [p]
    return [p.with_name(f"{p.stem}_{b:04d}{p.suffix or '.csv'}") for b in range(count)]


def _report(command: str, config: RunConfig, **body) -> dict:
    return {
        "schema_version": settings.VSTAP_REPORT_SCHEMA_VERSION,
        "command": command,
        "config": config.as_dict(),
        **body,
        "error": None,
    }


def _fisher_bands(target: np.ndarray, N: int) -> list:
    """Fisher band around every target cell; the unit lag-0 diagonal gets null."""
    K, _, L = target.shape
    bands = np.full((K, K, L, 2), np.nan)
    for i, j, tau in np.ndindex(K, K, L):
        r = target[i, j, tau]
        if abs(r) < 1.0:
            bands[i, j, tau] = fisher_ci(r, N)
    return [[[None if np.isnan(b[0]) else b.tolist() for b in row] for row in plane] for plane in bands]


def build_fit_report(model: VstapModel, config: RunConfig) -> dict:
    d = model.diagnostics
    return _report(
        "fit",
        config,
        channels=model.channel_names,
        n=model.n,
        P=model.P,
        m=model.m,
        epsilon=model.epsilon,
        cells=[c.as_dict() for c in d.cells],
        max_residual=d.max_residual,
        binary_search_cells=[list(c) for c in d.binary_search_cells],
        repair_rounds=d.repair_rounds,
        frobenius_distance=d.frobenius_distance,
        min_eigenvalue=d.min_eigenvalue,
        spectral_radius=model.var.spectral_radius,
    )


# ---- Commands ----
def cmd_fit(config: RunConfig) -> dict:
    names, x = read_series_csv(config.input)
    model = fit_vstap(
        x,
        config.order,
        m=config.breakpoints,
        epsilon=config.epsilon,
        max_iter=config.max_iter,
        channel_names=names,
    )
    model = replace(model, var=replace(model.var, seed=config.seed))
    saved = save_json(dump_model(model), path=config.output)
    report = build_fit_report(model, config)
    report["model_file"] = saved.path
    save_json(report, path=config.report or _stem_path(config.output, ".report.json"))
    logger.info("model written to %s (%d bytes)", saved.path, saved.size)
    return report


def cmd_generate(config: RunConfig) -> dict:
    model = load_model(load_json(config.input))
    N = config.length
    seeds = [config.seed + b for b in range(config.realizations)]
    realizations = generate_many(model, N, seeds, config.mode)

    target = model.target_corr.r
    stats_ok = N > 4 * (model.P + 1)
    files = []
    achieved = []
    for seed, path, x in zip(seeds, realization_paths(config.output, len(seeds)), realizations):
        saved = write_series_csv(x, model.channel_names, path=path)
        entry = {"seed": seed, "path": saved.path}
        if stats_ok:
            r = achieved_correlations(x, model.P).r
            achieved.append(r)
            entry["achieved_corr"] = r.tolist()
            entry["max_abs_deviation"] = float(np.max(np.abs(r - target)))
        files.append(entry)
    logger.info("wrote %d realization(s) of length %d", len(files), N)

    report = _report(
        "generate",
        config,
        channels=model.channel_names,
        target_corr=target.tolist(),
        fisher_bands=_fisher_bands(target, N) if N > 3 else None,
        realizations=files,
    )
    if len(achieved) >= 2:
        lo, hi = correlation_band(achieved)
        report["ensemble_band"] = {"lower": lo.tolist(), "upper": hi.tolist()}
        report["ensemble_coverage"] = ensemble_coverage(target, achieved)
    save_json(report, path=config.report or _stem_path(config.output, ".sidecar.json"))
    return report


def cmd_surrogate(config: RunConfig) -> dict:
    names, x = read_series_csv(config.input)
    model = fit_vstap(
        x,
        config.order,
        m=config.breakpoints,
        epsilon=config.epsilon,
        max_iter=config.max_iter,
        channel_names=names,
    )
    original = model.target_corr.r
    seeds = [config.seed + b for b in range(config.realizations)]
    files = []
    for seed, path in zip(seeds, realization_paths(config.output, len(seeds))):
        y = surrogate(x, config.order, seed=seed, model=model)
        saved = write_series_csv(y, names, path=path)
        r = achieved_correlations(y, model.P).r
        files.append({"seed": seed, "path": saved.path, "max_abs_corr_diff": float(np.max(np.abs(r - original)))})
    logger.info("wrote %d surrogate(s)", len(files))

    report = _report("surrogate", config, channels=names, seeds=seeds, surrogates=files)
    save_json(report, path=config.report or _stem_path(config.output, ".manifest.json"))
    return report


def cmd_validate(config: RunConfig) -> dict:
    checks = run_checks(seed=config.seed)
    report = _report("validate", config, checks=checks, passed=all(c["passed"] for c in checks))
    if not report["passed"]:
        failed = [c["name"] for c in checks if not c["passed"]]
        report["error"] = {
            "errorCode": EC.CLI_VALIDATION_FAILED,
            "errorMessage": f"{len(failed)} check(s) failed",
            "context": {"failed": failed},
        }
    if config.output:
        save_json(report, path=config.output)
    return report


# ---- Cross-checks ----
def _check(name: str, passed: bool, **details) -> dict:
    return {"name": name, "passed": bool(passed), "details": details}


def check_quadrant_probability() -> dict:
    got = bvn_rect_prob(Rect(0.0, np.inf, 0.0, np.inf), 0.5)
    want = 0.25 + math.asin(0.5) / (2.0 * math.pi)
    return _check("bvn_quadrant_probability", abs(got - want) < 1e-10, value=got, expected=want)


def check_truncated_moments(seed: int) -> dict:
    intervals = [(-np.inf, 0.0), (-1.0, 1.0), (0.3, np.inf)]
    rects = [Rect(a, b, c, d) for a, b in intervals for c, d in intervals]
    worst = 0.0
    for k, r in enumerate(rects):
        for rho in (-0.9, -0.5, 0.0, 0.5, 0.9):
            exact = trunc_moments(r, rho)
            mc = mc_trunc_moments(r, rho, 200_000, seed + k)
            se = (mc.se_p, mc.se_mu10, mc.se_mu01, mc.se_mu11)
            for e, got, s in zip(exact, mc.as_tuple(), se):
                worst = max(worst, abs(e - got) / max(s, 1e-12))
    return _check("bvn_truncated_moments_vs_monte_carlo", worst <= 4.0, worst_standard_errors=worst, cells=len(rects) * 5)


def _power_transform_fit(a: int, seed: int):
    rng = np.random.Generator(np.random.PCG64(seed))
    mg = EmpiricalMarginal.from_sample(rng.standard_normal(100_000) ** a)
    return mg, fit_piecewise(mg, 20)


def check_psi_vs_mc(seed: int) -> dict:
    worst = {}
    ok = True
    for a in (3, 2):
        _, t = _power_transform_fit(a, seed + a)
        mean, sd = transform_moments(t)
        for k, rho in enumerate((-0.9, -0.5, 0.0, 0.5, 0.9)):
            mc = mc_psi(t, t, rho, 200_000, seed + 10 * a + k)
            gap = abs(psi_eval(t, t, rho, mean, mean, sd, sd) - mc.value)
            ok = ok and gap < 3 * mc.moment_stderr + 0.01
            worst[str(a)] = max(worst.get(str(a), 0.0), gap)
    return _check("bvn_psi_vs_monte_carlo", ok, max_abs_gap=worst)


def check_solver_round_trip(seed: int) -> dict:
    mg, t = _power_transform_fit(3, seed)
    stats = (mg.mean, mg.mean, mg.sd, mg.sd)
    errors = {}
    ok = True
    for rho in (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9):
        rep = solve_gaussian_corr(t, t, psi_eval(t, t, rho, *stats), channel_stats=stats)
        errors[str(rho)] = abs(rep.solution - rho)
        ok = ok and rep.converged and errors[str(rho)] < 1e-4
    return _check("solver_round_trip", ok, errors=errors)


def check_total_expectation() -> dict:
    edges = np.concatenate(([-np.inf], equiprobable_breakpoints(20), [np.inf]))
    errors = {}
    for rho in (-0.9, 0.0, 0.5):
        _, _, _, m11 = grid_moments(edges, edges, rho)
        errors[str(rho)] = abs(float(m11.sum()) - rho)
    return _check("bvn_total_expectation", max(errors.values()) < 1e-8, errors=errors)


def check_norta_triple(seed: int) -> dict:
    rng = np.random.Generator(np.random.PCG64(seed))
    marginals = [EmpiricalMarginal.from_sample(rng.uniform(size=100_000)) for _ in range(3)]
    transforms = [fit_piecewise(mg, 20) for mg in marginals]
    solved = {}
    ok = True
    for (i, j), target in zip([(0, 1), (0, 2), (1, 2)], (-0.4, 0.2, 0.8)):
        rep = solve_gaussian_corr(
            transforms[i],
            transforms[j],
            target,
            channel_stats=(marginals[i].mean, marginals[j].mean, marginals[i].sd, marginals[j].sd),
        )
        expected = uniform_gaussian_correlation(target)
        solved[str(target)] = {"solution": rep.solution, "expected": expected}
        ok = ok and rep.converged and abs(rep.solution - expected) < 5e-3
    return _check("norta_uniform_triple", ok, solved=solved)


def check_repair_example() -> dict:
    a, b, c = -0.4158, 0.2091, 0.8135
    m = FullCorrMatrix(np.array([[1.0, a, b], [a, 1.0, c], [b, c, 1.0]]), 3, 0)
    res = psd_repair(m)
    got = res.matrix.matrix
    values = [got[0, 1], got[0, 2], got[1, 2]]
    want = [-0.4122, 0.2062, 0.8065]
    ok = res.rounds <= 20 and res.min_eigenvalue > 0 and all(abs(g - w) < 5e-3 for g, w in zip(values, want))
    return _check(
        "psd_repair_example",
        ok,
        repaired=[float(v) for v in values],
        rounds=res.rounds,
        frobenius_distance=res.frobenius_distance,
    )


def check_yule_walker_round_trip() -> dict:
    model = reference_var2()
    fitted = yule_walker(theoretical_correlations(model, model.P))
    err = float(np.max(np.abs(fitted.A - standardized_coefficients(model))))
    return _check("yule_walker_round_trip", err < 1e-8, max_abs_error=err)


def run_checks(*, seed: int = 0) -> list[dict]:
    checks = []
    for fn, args in (
        (check_quadrant_probability, ()),
        (check_truncated_moments, (seed,)),
        (check_total_expectation, ()),
        (check_psi_vs_mc, (seed,)),
        (check_solver_round_trip, (seed,)),
        (check_norta_triple, (seed,)),
        (check_repair_example, ()),
        (check_yule_walker_round_trip, ()),
    ):
        try:
            checks.append(fn(*args))
        except VstapError as exc:
            checks.append(_check(fn.__name__.removeprefix("check_"), False, error=exc.message))
    for c in checks:
        logger.info("check %s: %s", c["name"], "passed" if c["passed"] else "FAILED")
    return checks
