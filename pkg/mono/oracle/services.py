"""
Brute-force Monte-Carlo references for the closed-form Gaussian machinery.
Nothing here shares code with the bvn module: pairs are sampled, not integrated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from bvn.services import Rect
from vstap import error_codes as EC
from vstap.exceptions import InsufficientAcceptance, InvalidInput

logger = logging.getLogger(__name__)

MIN_PSI_SAMPLES = 10_000
MIN_MOMENT_SAMPLES = 100_000
MIN_ACCEPTANCE = 1e-3
CHUNK = 1_000_000


@dataclass(frozen=True)
class McCorrelation:
    value: float
    stderr: float
    samples: int
    moment_stderr: float


@dataclass(frozen=True)
class McMoments:
    p: float
    mu10: float
    mu01: float
    mu11: float
    se_p: float
    se_mu10: float
    se_mu01: float
    se_mu11: float
    accepted: int

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.p, self.mu10, self.mu01, self.mu11


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not -1.0 < rho < 1.0:
        raise InvalidInput("Correlation must lie strictly inside (-1, 1)", code=EC.ORC_INVALID_INPUT, context={"rho": rho})
    return rho


def _pairs(rng: np.random.Generator, size: int, rho: float) -> tuple[np.ndarray, np.ndarray]:
    z1 = rng.standard_normal(size)
    z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.standard_normal(size)
    return z1, z2


def _chunks(total: int):
    left = total
    while left > 0:
        size = min(CHUNK, left)
        yield size
        left -= size


def mc_psi(ti, tj, rho: float, samples: int, seed: int) -> McCorrelation:
    """
    Pearson correlation of (ti(Z1), tj(Z2)) for standard Gaussian pairs at rho.
    ti and tj are any vectorised maps (PiecewiseTransform instances included).
    The same stream is drawn twice: once for the means, once for centred moments.
    """
    rho = _check_rho(rho)
    samples = int(samples)
    if samples < MIN_PSI_SAMPLES:
        raise InvalidInput(f"mc_psi needs at least {MIN_PSI_SAMPLES} samples", code=EC.ORC_INVALID_INPUT)

    def mapped():
        rng = np.random.Generator(np.random.PCG64(seed))
        for size in _chunks(samples):
            z1, z2 = _pairs(rng, size, rho)
            yield np.asarray(ti(z1), dtype=float), np.asarray(tj(z2), dtype=float)

    mx = my = 0.0
    for x, y in mapped():
        mx += x.sum()
        my += y.sum()
    mx /= samples
    my /= samples

    # central moments mu_ab = E[(x - mx)^a (y - my)^b]
    acc = np.zeros(8)
    for x, y in mapped():
        x = x - mx
        y = y - my
        xx, yy, xy = x * x, y * y, x * y
        acc += (xx.sum(), yy.sum(), xy.sum(), (xx * xx).sum(), (yy * yy).sum(),
                (xx * yy).sum(), (xx * xy).sum(), (xy * yy).sum())
    m20, m02, m11, m40, m04, m22, m31, m13 = acc / samples

    sxy = math.sqrt(m20 * m02)
    r = float(m11 / sxy)
    # delta method for the sample correlation; equals (1 - r^2)^2 for Gaussian pairs
    var_r = (
        r * r / 4.0 * (m40 / m20 ** 2 + m04 / m02 ** 2 + 2.0 * m22 / (m20 * m02))
        + m22 / (m20 * m02)
        - r * (m31 / (m20 * sxy) + m13 / (m02 * sxy))
    )
    return McCorrelation(
        value=r,
        stderr=math.sqrt((1.0 - r * r) ** 2 / samples),
        samples=samples,
        moment_stderr=math.sqrt(max(var_r, 0.0) / samples),
    )


def mc_trunc_moments(r: Rect, rho: float, samples: int, seed: int) -> McMoments:
    """Rejection sampling of standard bivariate Gaussian pairs into the rectangle."""
    rho = _check_rho(rho)
    samples = int(samples)
    if samples < MIN_MOMENT_SAMPLES:
        raise InvalidInput(f"mc_trunc_moments needs at least {MIN_MOMENT_SAMPLES} samples", code=EC.ORC_INVALID_INPUT)

    rng = np.random.Generator(np.random.PCG64(seed))
    kept1, kept2 = [], []
    for size in _chunks(samples):
        z1, z2 = _pairs(rng, size, rho)
        inside = (z1 >= r.z1_lo) & (z1 <= r.z1_hi) & (z2 >= r.z2_lo) & (z2 <= r.z2_hi)
        kept1.append(z1[inside])
        kept2.append(z2[inside])
    a = np.concatenate(kept1)
    b = np.concatenate(kept2)
    accepted = int(a.size)
    p = accepted / samples
    if p < MIN_ACCEPTANCE or accepted < 100:
        raise InsufficientAcceptance(
            f"Only {accepted} of {samples} samples fell inside the rectangle",
            code=EC.ORC_INSUFFICIENT_ACCEPTANCE,
            context={"accepted": accepted, "samples": samples},
        )
    ab = a * b
    root = math.sqrt(accepted)
    logger.debug("mc_trunc_moments accepted %d of %d", accepted, samples)
    return McMoments(
        p=p,
        mu10=float(a.mean()),
        mu01=float(b.mean()),
        mu11=float(ab.mean()),
        se_p=math.sqrt(p * (1.0 - p) / samples),
        se_mu10=float(a.std(ddof=1)) / root,
        se_mu01=float(b.std(ddof=1)) / root,
        se_mu11=float(ab.std(ddof=1)) / root,
        accepted=accepted,
    )


def cubic_correlation(rho):
    """Correlation of (Z1^3, Z2^3) for standard Gaussians at rho."""
    rho = np.asarray(rho, dtype=float)
    out = 0.4 * rho ** 3 + 0.6 * rho
    return float(out) if out.ndim == 0 else out


def uniform_gaussian_correlation(r):
    """Gaussian correlation that yields correlation r between two uniform marginals."""
    r = np.asarray(r, dtype=float)
    out = 2.0 * np.sin(np.pi * r / 6.0)
    return float(out) if out.ndim == 0 else out
