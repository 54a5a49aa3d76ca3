"""Time-conditional linear dose response of a calibrated mixture.

At a fixed time the mixture mean is linear in dose,
``mu(d | t) = alpha_t + beta_t d`` with ``alpha_t = sum_k w_k c_k t**u_k``
and ``beta_t = sum_k w_k a_k t**v_k``. Their joint uncertainty follows from
the Laplace covariance by the delta method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import CalibrationResult
from .errors import DomainError, NumericError
from .model import Parametrization


@dataclass(frozen=True)
class LinearCoeffs:
    alpha: float
    beta: float
    covariance: np.ndarray
    time: float

    @property
    def var_alpha(self):
        return float(self.covariance[0, 0])

    @property
    def var_beta(self):
        return float(self.covariance[1, 1])

    @property
    def cov_alpha_beta(self):
        return float(self.covariance[0, 1])

    @property
    def correlation(self):
        return self.cov_alpha_beta / np.sqrt(self.var_alpha * self.var_beta)


def coefficient_means(params, t):
    """``(alpha_t, beta_t)`` summed directly over components."""
    w, a, c, u, v = params.arrays()
    return float(np.sum(w * c * t**u)), float(np.sum(w * a * t**v))


def coefficient_gradient(param: Parametrization, x, t):
    """Jacobian (2 x p) of ``(alpha_t, beta_t)`` in free coordinates."""
    params = param.to_params(x)
    w, a, c, u, v = params.arrays()
    logt = np.log(t)
    C = c * np.exp(u * logt)
    B = a * np.exp(v * logt)
    alpha = np.sum(w * C)
    beta = np.sum(w * B)
    J = np.zeros((2, param.size))
    J[0, param.idx_alr] = w[:-1] * (C[:-1] - alpha)
    J[1, param.idx_alr] = w[:-1] * (B[:-1] - beta)
    J[0, param.idx_logc] = w * C
    np.add.at(J[0], param.idx_u, w * C * logt)
    J[1, param.idx_loga] = w * B
    J[1, param.idx_v] = w * B * logt
    return J


def linear_coeffs(calib: CalibrationResult, t: float) -> LinearCoeffs:
    """Mean and delta-method covariance of ``(alpha_t, beta_t)``."""
    if not (np.isfinite(t) and t > 0):
        raise DomainError(f"time must be positive, got {t!r}")
    param = Parametrization(calib.K, calib.shared_u)
    if list(param.names) != list(calib.parameter_order):
        raise NumericError("calibration parameter order does not match the model parametrization")
    alpha, beta = coefficient_means(calib.params, t)
    J = coefficient_gradient(param, calib.free_mode, t)
    cov = J @ calib.covariance @ J.T
    cov = 0.5 * (cov + cov.T)
    if not (cov[0, 0] > 0 and cov[1, 1] > 0 and cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2 > 0):
        raise NumericError(f"delta-method covariance at t={t} is not positive definite")
    return LinearCoeffs(alpha, beta, cov, float(t))


def mean_surface(calib: CalibrationResult, d, t) -> float:
    """Expected foci per cell ``alpha_t + beta_t d``."""
    if np.any(np.asarray(d) < 0):
        raise DomainError("dose must be non-negative")
    lc = linear_coeffs(calib, t)
    return lc.alpha + lc.beta * d


def surface_grid(calib: CalibrationResult, doses, times):
    """Rows ``(dose, time, mu, sd)`` over the grid, time-major.

    ``sd`` is the delta-method standard deviation of ``mu``,
    ``sqrt((1, d) Cov (1, d)^T)``.
    """
    doses = [float(d) for d in doses]
    if any(d < 0 for d in doses):
        raise DomainError("dose must be non-negative")
    rows = []
    for t in times:
        lc = linear_coeffs(calib, float(t))
        for d in doses:
            vec = np.array([1.0, d])
            rows.append((d, float(t), lc.alpha + lc.beta * d, float(np.sqrt(vec @ lc.covariance @ vec))))
    return rows


def coefficient_moments(calib: CalibrationResult, times):
    """Vectorised :func:`linear_coeffs` over many times.

    Returns ``(alpha, beta, var_alpha, var_beta, cov_alpha_beta)`` arrays.
    """
    times = np.asarray(times, dtype=float)
    if np.any(~(times > 0)):
        raise DomainError("times must be positive")
    param = Parametrization(calib.K, calib.shared_u)
    w, a, c, u, v = calib.params.arrays()
    logt = np.log(times)[:, None]
    C = c * np.exp(u * logt)
    B = a * np.exp(v * logt)
    alpha = C @ w
    beta = B @ w
    n = times.size
    J = np.zeros((n, 2, param.size))
    J[:, 0, param.idx_alr] = w[:-1] * (C[:, :-1] - alpha[:, None])
    J[:, 1, param.idx_alr] = w[:-1] * (B[:, :-1] - beta[:, None])
    J[:, 0, param.idx_logc] = w * C
    du = w * C * logt
    for k, col in enumerate(param.idx_u):
        J[:, 0, col] += du[:, k]
    J[:, 1, param.idx_loga] = w * B
    J[:, 1, param.idx_v] = w * B * logt
    JS = J @ calib.covariance
    var_a = np.einsum("np,np->n", JS[:, 0], J[:, 0])
    var_b = np.einsum("np,np->n", JS[:, 1], J[:, 1])
    cov_ab = np.einsum("np,np->n", JS[:, 0], J[:, 1])
    return alpha, beta, var_a, var_b, cov_ab
