"""Special functions and the density of a ratio of correlated normals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import erf as _erf
from scipy.special import ndtr, owens_t

from .errors import DomainError, NotPositiveDefiniteError, NumericError

_LOG_SQRT_PI = 0.5 * math.log(math.pi)


def erf(x):
    """Error function (odd, values in (-1, 1))."""
    out = _erf(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def log_kummer1f1_half(z):
    """``log 1F1(1; 1/2; z)`` for ``z >= 0``, stable for large ``z``.

    Uses the closed form ``1 + sqrt(pi z) exp(z) erf(sqrt z)``. Beyond
    ``z = 1`` the exponential is factored out so nothing overflows.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise DomainError("1F1(1; 1/2; z) requires z >= 0")
    out = np.empty_like(z)
    small = z <= 1.0
    zs = z[small]
    out[small] = np.log1p(np.sqrt(np.pi * zs) * np.exp(zs) * _erf(np.sqrt(zs)))
    zl = z[~small]
    core = 0.5 * np.log(np.pi * zl) + np.log(_erf(np.sqrt(zl)))
    # log(1 + exp(z + core)) = z + core + log1p(exp(-(z + core)))
    s = zl + core
    out[~small] = s + np.log1p(np.exp(-s))
    return float(out) if out.ndim == 0 else out


def log_kummer1f1_half_scaled(z):
    """``log 1F1(1; 1/2; z) - z = log(exp(-z) + sqrt(pi z) erf(sqrt z))``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise DomainError("1F1(1; 1/2; z) requires z >= 0")
    out = np.log(np.exp(-z) + np.sqrt(np.pi * z) * _erf(np.sqrt(z)))
    return float(out) if out.ndim == 0 else out


def kummer1f1_half(z):
    """``1F1(1; 1/2; z) = exp(z) sqrt(pi) sqrt(z) erf(sqrt(z)) + 1``.

    Overflows to ``inf`` once ``z`` passes roughly 705; use
    :func:`log_kummer1f1_half` there.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise DomainError("1F1(1; 1/2; z) requires z >= 0")
    with np.errstate(over="ignore"):
        out = np.where(
            z <= 700.0,
            1.0 + np.sqrt(np.pi * z) * np.exp(np.minimum(z, 700.0)) * _erf(np.sqrt(z)),
            np.exp(log_kummer1f1_half(np.maximum(z, 700.0))),
        )
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BivariateNormalSpec:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float = 0.0

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise DomainError(f"standard deviations must be positive ({self.sigma_x}, {self.sigma_y})")
        if not abs(self.rho) < 1:
            raise DomainError(f"correlation must lie in (-1, 1), got {self.rho}")
        if not (math.isfinite(self.mu_x) and math.isfinite(self.mu_y)):
            raise DomainError("means must be finite")

    @property
    def covariance(self):
        sxy = self.rho * self.sigma_x * self.sigma_y
        return np.array([[self.sigma_x**2, sxy], [sxy, self.sigma_y**2]])


def ratio_normal_logpdf(w, spec: BivariateNormalSpec):
    """Log density of ``W = X / Y`` for jointly normal ``(X, Y)``.

    The closed form (Pham-Gia et al., 2006) is a Gaussian-type prefactor
    times ``1F1(1; 1/2; theta(w))`` over ``q(w) = sy^2 w^2 - 2 rho sx sy w + sx^2``.
    It is evaluated as ``log(sx sy sqrt(1-rho^2) / pi) - log q
    - (mx - w my)^2 / (2 q) + log(1F1(theta) exp(-theta))``.
    """
    w = np.asarray(w, dtype=float)
    mx, my, sx, sy, r = spec.mu_x, spec.mu_y, spec.sigma_x, spec.sigma_y, spec.rho
    one_r2 = 1.0 - r * r
    sx2, sy2 = sx * sx, sy * sy
    q = sy2 * w * w - 2.0 * r * sx * sy * w + sx2
    num = -sy2 * mx * w + r * sx * sy * (my * w + mx) - my * sx2
    theta = num * num / (2.0 * sx2 * sy2 * one_r2 * q)
    # prefactor exponent plus theta collapses to -(mx - w my)^2 / (2 q); combining
    # them by hand avoids cancelling two huge terms when sy is small
    dev = mx - w * my
    out = (math.log(sx * sy * math.sqrt(one_r2) / math.pi) - np.log(q) - dev * dev / (2.0 * q)
           + log_kummer1f1_half_scaled(theta))
    if np.any(np.isnan(out)) or np.any(out == np.inf):
        bad = np.atleast_1d(w)[np.flatnonzero(~np.isfinite(np.atleast_1d(out)) & (np.atleast_1d(out) != -np.inf))]
        raise NumericError(f"non-finite ratio density at w={bad[:3].tolist()}")
    return float(out) if out.ndim == 0 else out


def ratio_normal_density(w, spec: BivariateNormalSpec):
    """Density of ``X / Y``; see :func:`ratio_normal_logpdf`."""
    out = np.exp(ratio_normal_logpdf(w, spec))
    return float(out) if np.ndim(out) == 0 else out


def _bvn_lower(h, k, r):
    """``P(Z1 <= h, Z2 <= k)`` for standard normals with correlation ``r``.

    Owen's T representation; vectorised over ``h``.
    """
    h = np.asarray(h, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=float), h.shape)
    # the Owen's T arguments are singular at exactly zero; nudge off it
    h = np.where(h == 0, 1e-13, h)
    k = np.where(k == 0, 1e-13, k)
    s = math.sqrt(1.0 - r * r)
    th = owens_t(h, (k - r * h) / (h * s))
    tk = owens_t(k, (h - r * k) / (k * s))
    adj = np.where(h * k < 0, 0.5, 0.0)
    out = 0.5 * ndtr(h) + 0.5 * ndtr(k) - th - tk - adj
    return np.clip(out, 0.0, 1.0)


def _ratio_cdf_core(w, mx, my, sx, sy, r):
    """``P(X - wY <= 0, Y > 0) + P(X - wY >= 0, Y < 0)`` via orthant probabilities."""
    mu_u = mx - w * my
    var_u = sx * sx - 2.0 * w * r * sx * sy + w * w * sy * sy
    sd_u = np.sqrt(var_u)
    cov_uy = r * sx * sy - w * sy * sy
    r_uy = np.clip(cov_uy / (sd_u * sy), -1 + 1e-15, 1 - 1e-15)
    hu = -mu_u / sd_u
    hy = -my / sy
    joint = np.array([_bvn_lower(hu_i, hy, r_i) for hu_i, r_i in zip(hu, r_uy)]).reshape(hu.shape)
    return ndtr(hu) + ndtr(hy) - 2.0 * joint


def ratio_normal_cdf(w, spec: BivariateNormalSpec):
    """``P(X / Y <= w)``.

    For ``|w| sy / sx > 1`` the orthant correlation nears one, so the tail
    is taken from the reciprocal ratio ``V = Y / X`` instead:
    ``P(W <= w) = P(1/w <= V < 0)`` for ``w < 0`` and
    ``P(W > w) = P(0 < V <= 1/w)`` for ``w > 0``.
    """
    w = np.asarray(w, dtype=float)
    flat = np.atleast_1d(w).ravel()
    mx, my, sx, sy, r = spec.mu_x, spec.mu_y, spec.sigma_x, spec.sigma_y, spec.rho
    far = np.abs(flat) * sy > sx
    out = np.empty_like(flat)
    out[~far] = _ratio_cdf_core(flat[~far], mx, my, sx, sy, r)
    if np.any(far):
        wf = flat[far]
        g0 = _ratio_cdf_core(np.zeros(1), my, mx, sy, sx, r)[0]
        g = _ratio_cdf_core(1.0 / wf, my, mx, sy, sx, r)
        out[far] = np.where(wf < 0, g0 - g, 1.0 - (g - g0))
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if w.ndim == 0 else out.reshape(w.shape)


def invert_spd(matrix, ridge=False):
    """Inverse of a symmetric positive-definite matrix via Cholesky.

    The matrix is equilibrated by its diagonal before factorising, which
    keeps the reconstruction error small for badly scaled Hessians. Raises
    :class:`NotPositiveDefiniteError` (with the smallest eigenvalue) when the
    factorisation fails. ``ridge=True`` adds ``1e-8 * mean(diag)`` first.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("expected a square matrix")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-8 * scale:
        raise DomainError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    if ridge:
        a = a + 1e-8 * np.mean(np.diag(a)) * np.eye(a.shape[0])
    diag = np.diag(a)
    if np.any(diag <= 0):
        raise NotPositiveDefiniteError(_min_eig(a))
    s = 1.0 / np.sqrt(diag)
    scaled = a * s[:, None] * s[None, :]
    try:
        cf = linalg.cho_factor(scaled, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(_min_eig(a)) from None
    inv = linalg.cho_solve(cf, np.eye(a.shape[0]), check_finite=False)
    inv = inv * s[:, None] * s[None, :]
    return 0.5 * (inv + inv.T)


def _min_eig(a):
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * math.log(2 * math.pi)


__all__ = [
    "BivariateNormalSpec",
    "erf",
    "invert_spd",
    "kummer1f1_half",
    "log_kummer1f1_half",
    "log_kummer1f1_half_scaled",
    "normal_logpdf",
    "ratio_normal_cdf",
    "ratio_normal_density",
    "ratio_normal_logpdf",
]
