"""Vectorised numpy implementation of the mixture log-likelihood kernel.

This is the reference path and the fallback when the compiled ``_ckernels``
extension is unavailable.
"""

import numpy as np


def mixture_loglik(dose, time, count, weight, log_count_fact, log_w, a, c, u, v,
                   want_grad=True):
    """Weighted Poisson-mixture log-likelihood and its gradient.

    Rows are aggregated records ``(dose, time, count)`` occurring ``weight``
    times. Component surfaces are ``c*t**u + a*t**v*d``.

    Returns ``(loglik, grad)`` where ``grad`` is an array of shape ``(5, K)``
    holding derivatives with respect to ``log w``, ``log a``, ``log c``, ``u``
    and ``v`` (``None`` when ``want_grad`` is false).
    """
    logt = np.log(time)[:, None]
    base = np.exp(logt * u[None, :])
    slope = np.exp(logt * v[None, :])
    lam_c = c[None, :] * base
    lam_a = a[None, :] * slope * dose[:, None]
    lam = lam_c + lam_a
    y = count[:, None]
    s = log_w[None, :] + y * np.log(lam) - lam - log_count_fact[:, None]
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    tot = e.sum(axis=1, keepdims=True)
    row_ll = m[:, 0] + np.log(tot[:, 0])
    ll = float(np.dot(weight, row_ll))
    if not want_grad:
        return ll, None
    resp = e / tot * weight[:, None]
    dlam = resp * (y / lam - 1.0)
    grad = np.empty((5, len(log_w)))
    grad[0] = resp.sum(axis=0)
    grad[1] = (dlam * lam_a).sum(axis=0)
    grad[2] = (dlam * lam_c).sum(axis=0)
    grad[3] = (dlam * lam_c * logt).sum(axis=0)
    grad[4] = (dlam * lam_a * logt).sum(axis=0)
    return ll, grad


def row_loglik(dose, time, count, log_count_fact, log_w, a, c, u, v):
    """Per-row mixture log-probabilities (unweighted); used for diagnostics."""
    logt = np.log(time)[:, None]
    lam = c[None, :] * np.exp(logt * u[None, :]) + a[None, :] * np.exp(logt * v[None, :]) * dose[:, None]
    with np.errstate(all="ignore"):
        s = log_w[None, :] + count[:, None] * np.log(lam) - lam - log_count_fact[:, None]
        m = s.max(axis=1, keepdims=True)
        return m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
