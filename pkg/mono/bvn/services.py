"""
Standard bivariate Gaussian numerics: rectangle probabilities, the Q-integral,
moments of the doubly truncated distribution and the piecewise correlation
transform built from them.

The bivariate CDF follows Genz's BVND (the Drezner-Wesolowsky approach with
Gauss-Legendre rules of 6, 12 or 20 points chosen by |rho|), absolute error
around 1e-15.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from marginal.services import PiecewiseTransform
from vstap import error_codes as EC
from vstap.exceptions import DegenerateRegion, InvalidInput

TWOPI = 2.0 * math.pi
_INV_SQRT_2PI = 1.0 / math.sqrt(TWOPI)
# Genz: below this a rectangle is treated as carrying no mass
MIN_RECT_PROB = 1e-14

# Gauss-Legendre half-rules (negative abscissae) for 6, 12 and 20 points
_GL_X = (
    np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970]),
    np.array([
        -0.9815606342467191, -0.9041172563704750, -0.7699026741943050,
        -0.5873179542866171, -0.3678314989981802, -0.1252334085114692,
    ]),
    np.array([
        -0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
        -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
        -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
        -0.07652652113349733,
    ]),
)
_GL_W = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([
        0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
        0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
    ]),
    np.array([
        0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
        0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
        0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
        0.1527533871307259,
    ]),
)


@dataclass(frozen=True)
class Rect:
    z1_lo: float
    z1_hi: float
    z2_lo: float
    z2_hi: float

    def __post_init__(self):
        if not (self.z1_lo < self.z1_hi and self.z2_lo < self.z2_hi):
            raise InvalidInput(
                "Rectangle bounds must satisfy lo < hi on both axes",
                code=EC.BVN_DEGENERATE_REGION,
                context={"rect": [self.z1_lo, self.z1_hi, self.z2_lo, self.z2_hi]},
            )

    @classmethod
    def full_plane(cls) -> "Rect":
        return cls(-np.inf, np.inf, -np.inf, np.inf)


# ---- Helpers ----
def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not (-1.0 < rho < 1.0):
        raise InvalidInput(
            "Correlation must lie strictly inside (-1, 1)",
            code=EC.BVN_INVALID_CORRELATION,
            context={"rho": rho},
        )
    return rho


def _phi(x: np.ndarray) -> np.ndarray:
    """Standard normal density with phi(+-inf) = 0 set explicitly."""
    x = np.asarray(x, dtype=float)
    finite = np.isfinite(x)
    xf = np.where(finite, x, 0.0)
    return np.where(finite, _INV_SQRT_2PI * np.exp(-0.5 * xf * xf), 0.0)


def _bvnu(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """P(X > h, Y > k) for finite h, k."""
    if abs(r) < 0.3:
        ng = 0
    elif abs(r) < 0.75:
        ng = 1
    else:
        ng = 2
    x, w = _GL_X[ng], _GL_W[ng]
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    hk = h * k

    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r)
        bvn = np.zeros(np.broadcast(h, k).shape)
        for sign in (1.0, -1.0):
            sn = np.sin(asr * (sign * x + 1.0) / 2.0)
            expo = (sn[:, None] * hk.ravel()[None, :] - hs.ravel()[None, :]) / (1.0 - sn * sn)[:, None]
            bvn = bvn + (w[:, None] * np.exp(expo)).sum(axis=0).reshape(bvn.shape)
        return bvn * asr / (2.0 * TWOPI) + ndtr(-h) * ndtr(-k)

    if r < 0:
        k = -k
        hk = -hk
    bvn = np.zeros(np.broadcast(h, k).shape)
    if abs(r) < 1:
        as_ = (1.0 - r) * (1.0 + r)
        a = math.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        bvn = a * np.exp(-(bs / as_ + hk) / 2.0) * (
            1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0
        )
        with np.errstate(over="ignore", invalid="ignore"):
            b = np.sqrt(bs)
            tail = np.exp(-hk / 2.0) * math.sqrt(TWOPI) * ndtr(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        bvn = bvn - np.where(hk > -160.0, np.nan_to_num(tail), 0.0)
        a = a / 2.0
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            for xi, wi in zip(x, w):
                xs = (a * (xi + 1.0)) ** 2
                rs = math.sqrt(1.0 - xs)
                bvn = bvn + a * wi * (
                    np.exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs
                    - np.exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs))
                )
                xs = as_ * (-xi + 1.0) ** 2 / 4.0
                rs = math.sqrt(1.0 - xs)
                bvn = bvn + a * wi * np.exp(-(bs / xs + hk) / 2.0) * (
                    np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs))
                )
        bvn = -bvn / TWOPI
    if r > 0:
        bvn = bvn + ndtr(-np.maximum(h, k))
    if r < 0:
        bvn = -bvn + np.maximum(0.0, ndtr(-h) - ndtr(-k))
    return bvn


def bvn_cdf(h, k, rho: float) -> np.ndarray:
    """P(Z1 <= h, Z2 <= k) for the standard bivariate Gaussian; h, k may hold +-inf."""
    rho = _check_rho(rho)
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    fin = np.isfinite(h) & np.isfinite(k)
    hf = np.where(fin, h, 0.0)
    kf = np.where(fin, k, 0.0)
    if rho == 0.0:
        core = ndtr(hf) * ndtr(kf)
    else:
        core = _bvnu(-hf, -kf, rho)
    out = np.where(fin, core, 0.0)
    out = np.where(np.isposinf(h) & np.isfinite(k), ndtr(np.where(np.isfinite(k), k, 0.0)), out)
    out = np.where(np.isposinf(k) & np.isfinite(h), ndtr(np.where(np.isfinite(h), h, 0.0)), out)
    out = np.where(np.isposinf(h) & np.isposinf(k), 1.0, out)
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    return np.clip(out, 0.0, 1.0)


def _corner_sum(t: np.ndarray) -> np.ndarray:
    """Signed corner sum over every grid cell: T(lo,lo) - T(lo,hi) - T(hi,lo) + T(hi,hi)."""
    return t[:-1, :-1] - t[:-1, 1:] - t[1:, :-1] + t[1:, 1:]


def _orthant_terms(xs: np.ndarray, ys: np.ndarray, rho: float):
    """
    Unnormalised first and product moments of the orthant [x, inf) x [y, inf)
    for every (x, y) on the grid, without the rho * P part of the product moment.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    s = math.sqrt((1.0 - rho) * (1.0 + rho))
    fx = np.isfinite(xs)
    fy = np.isfinite(ys)
    phx = _phi(xs)
    phy = _phi(ys)
    xphx = np.where(fx, np.where(fx, xs, 0.0) * phx, 0.0)
    yphy = np.where(fy, np.where(fy, ys, 0.0) * phy, 0.0)

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    with np.errstate(invalid="ignore"):
        qxy = np.nan_to_num(ndtr((rho * X - Y) / s))
        qyx = np.nan_to_num(ndtr((rho * Y - X) / s))

    both = np.isfinite(X) & np.isfinite(Y)
    Xf = np.where(both, X, 0.0)
    Yf = np.where(both, Y, 0.0)
    phi2 = np.where(both, np.exp(-(Xf * Xf - 2.0 * rho * Xf * Yf + Yf * Yf) / (2.0 * s * s)) / (TWOPI * s), 0.0)

    t10 = phx[:, None] * qxy + rho * phy[None, :] * qyx
    t01 = phy[None, :] * qyx + rho * phx[:, None] * qxy
    t11 = (1.0 - rho * rho) * phi2 + rho * xphx[:, None] * qxy + rho * yphy[None, :] * qyx
    return t10, t01, t11


def grid_moments(edges_1: np.ndarray, edges_2: np.ndarray, rho: float):
    """
    For every cell of the grid spanned by the two edge vectors returns the cell
    probability P and the unnormalised moments E(Z1;cell), E(Z2;cell), E(Z1 Z2;cell).
    """
    rho = _check_rho(rho)
    X, Y = np.meshgrid(edges_1, edges_2, indexing="ij")
    prob = np.clip(_corner_sum(bvn_cdf(X, Y, rho)), 0.0, 1.0)
    t10, t01, t11 = _orthant_terms(edges_1, edges_2, rho)
    m10 = _corner_sum(t10)
    m01 = _corner_sum(t01)
    m11 = rho * prob + _corner_sum(t11)
    return prob, m10, m01, m11


# ---- Public API ----
def bvn_rect_prob(r: Rect, rho: float) -> float:
    rho = _check_rho(rho)
    hs = np.array([r.z1_hi, r.z1_lo, r.z1_hi, r.z1_lo])
    ks = np.array([r.z2_hi, r.z2_hi, r.z2_lo, r.z2_lo])
    f = bvn_cdf(hs, ks, rho)
    p = f[0] - f[1] - f[2] + f[3]
    return float(min(max(p, 0.0), 1.0))


def q_integral(a, b, rho: float):
    """Q(a, b) = 1 - Phi((b - rho a) / sqrt(1 - rho^2)), upper tail evaluated directly."""
    rho = _check_rho(rho)
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    a, b = np.broadcast_arrays(np.atleast_1d(np.asarray(a, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float)))
    s = math.sqrt((1.0 - rho) * (1.0 + rho))
    with np.errstate(invalid="ignore"):
        core = ndtr((rho * a - b) / s)
    a_inf_sign = np.sign(rho) * np.sign(a)
    out = np.select(
        [np.isneginf(b), np.isposinf(b), np.isinf(a) & (rho == 0.0), np.isinf(a)],
        [np.ones_like(a), np.zeros_like(a), ndtr(-np.where(np.isfinite(b), b, 0.0)), np.where(a_inf_sign > 0, 1.0, 0.0)],
        default=core,
    )
    return float(out[0]) if scalar else out


def trunc_moments(r: Rect, rho: float) -> tuple[float, float, float, float]:
    """
    (p, mu10, mu01, mu11) of the standard bivariate Gaussian truncated to r:
    mu10 = (1/p) sum_{u,v} (-1)^{u+v} [phi(x) Q(x,y) + rho phi(y) Q(y,x)]
    mu11 = rho + (1/p) sum_{u,v} (-1)^{u+v} [(1-rho^2) phi2(x,y) + rho x phi(x) Q(x,y) + rho y phi(y) Q(y,x)]
    with (x, y) running over the rectangle corners.
    """
    rho = _check_rho(rho)
    prob, m10, m01, m11 = grid_moments(
        np.array([r.z1_lo, r.z1_hi]), np.array([r.z2_lo, r.z2_hi]), rho
    )
    p = float(prob[0, 0])
    if not np.isfinite(p) or p < MIN_RECT_PROB:
        raise DegenerateRegion(
            "Rectangle carries no probability mass",
            code=EC.BVN_DEGENERATE_REGION,
            context={"rect": [r.z1_lo, r.z1_hi, r.z2_lo, r.z2_hi], "rho": rho, "p": p},
        )
    return p, float(m10[0, 0]) / p, float(m01[0, 0]) / p, float(m11[0, 0]) / p


def product_moment(ti: PiecewiseTransform, tj: PiecewiseTransform, rho_z: float) -> float:
    """E(X_i X_j) for X = t(Z) with (Z_i, Z_j) standard bivariate Gaussian at rho_z."""
    if not ti.shares_breakpoints(tj):
        raise InvalidInput(
            "Transforms must share the same breakpoints",
            code=EC.BVN_BREAKPOINT_MISMATCH,
            context={"m_i": ti.m, "m_j": tj.m},
        )
    prob, m10, m01, m11 = grid_moments(ti.edges, tj.edges, rho_z)
    return float(
        ti.intercepts @ prob @ tj.intercepts
        + ti.slopes @ m10 @ tj.intercepts
        + ti.intercepts @ m01 @ tj.slopes
        + ti.slopes @ m11 @ tj.slopes
    )


def transform_moments(t: PiecewiseTransform) -> tuple[float, float]:
    """Mean and sd of t(Z) for standard Gaussian Z, segment by segment."""
    lo, hi = t.edges[:-1], t.edges[1:]
    p = ndtr(hi) - ndtr(lo)
    ez = _phi(lo) - _phi(hi)
    lo_phi = np.where(np.isfinite(lo), np.where(np.isfinite(lo), lo, 0.0) * _phi(lo), 0.0)
    hi_phi = np.where(np.isfinite(hi), np.where(np.isfinite(hi), hi, 0.0) * _phi(hi), 0.0)
    ezz = p + lo_phi - hi_phi
    c0, c1 = t.intercepts, t.slopes
    mean = float(np.sum(c0 * p + c1 * ez))
    second = float(np.sum(c0 * c0 * p + 2.0 * c0 * c1 * ez + c1 * c1 * ezz))
    return mean, math.sqrt(max(second - mean * mean, 0.0))


def psi_eval(
    ti: PiecewiseTransform,
    tj: PiecewiseTransform,
    rho_z: float,
    mean_i: float,
    mean_j: float,
    sd_i: float,
    sd_j: float,
) -> float:
    """
    Correlation of (ti(Z1), tj(Z2)) standardised by the given moments. A fit passes
    the channels' sample moments; transform_moments gives the transforms' own.
    """
    if not (sd_i > 0 and sd_j > 0):
        raise InvalidInput(
            "Channel standard deviations must be positive",
            code=EC.BVN_INVALID_CORRELATION,
            context={"sd_i": sd_i, "sd_j": sd_j},
        )
    e_xx = product_moment(ti, tj, rho_z)
    psi = (e_xx - mean_i * mean_j) / (sd_i * sd_j)
    return float(min(1.0, max(-1.0, psi)))


@dataclass(frozen=True)
class CorrelationTransform:
    """psi-hat for one ordered channel pair, bound to the channels' sample moments."""
    ti: PiecewiseTransform
    tj: PiecewiseTransform
    mean_i: float
    mean_j: float
    sd_i: float
    sd_j: float

    def __call__(self, rho_z: float) -> float:
        return psi_eval(self.ti, self.tj, rho_z, self.mean_i, self.mean_j, self.sd_i, self.sd_j)
