"""Brute-force cross-checks for the production numerics.

Everything here is written independently of the code it checks: the Kummer
series is summed term by term, ratio densities are simulated from a hand
rolled 2x2 factorisation, and the delta method is replaced by pushing
sampled parameter vectors through the surface sums. Only the function under
test is imported from the production modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OracleReport:
    check_name: str
    statistic: float
    threshold: float
    passed: bool
    seed: int | None = None
    sample_size: int | None = None

    def row(self):
        return [self.check_name, f"{self.statistic:.6g}", f"{self.threshold:.6g}",
                "PASS" if self.passed else "FAIL", str(self.seed), str(self.sample_size)]


def report(name, statistic, threshold, seed=None, sample_size=None):
    statistic = float(statistic)
    return OracleReport(name, statistic, float(threshold), bool(statistic < threshold), seed, sample_size)


def series_kummer(z, terms=60):
    """Partial sum of ``sum_k (1)_k / (1/2)_k z^k / k!`` with ``terms`` terms."""
    if z < 0 or terms < 1:
        raise ValueError("need z >= 0 and terms >= 1")
    total = 0.0
    term = 1.0
    for k in range(terms):
        total += term
        term *= (1.0 + k) / (0.5 + k) * z / (k + 1.0)
    return total


def erf_reference(x, dps=40):
    """High-precision error function via mpmath."""
    import mpmath

    with mpmath.workdps(dps):
        return float(mpmath.erf(mpmath.mpf(x)))


def sample_bivariate_normal(mu_x, mu_y, sigma_x, sigma_y, rho, size, rng):
    """Draws of ``(X, Y)`` from the lower-triangular factor of the 2x2 covariance."""
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    x = mu_x + sigma_x * z1
    y = mu_y + sigma_y * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return x, y


@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    draws: int

    @property
    def widths(self):
        return np.diff(self.edges)


def mc_ratio_density(spec, draws=10**6, bins=40, seed=0, quantiles=(0.001, 0.999), chunk=10**6):
    """Histogram of simulated ``X / Y`` over a central quantile envelope.

    ``spec`` needs ``mu_x, mu_y, sigma_x, sigma_y, rho`` attributes. The
    envelope comes from a pilot sample; densities are normalised by the total
    number of draws, so mass outside the envelope is simply not shown.
    """
    if draws < 10**6:
        raise ValueError("the ratio oracle needs at least 1e6 draws")
    rng = np.random.default_rng(seed)
    x, y = sample_bivariate_normal(spec.mu_x, spec.mu_y, spec.sigma_x, spec.sigma_y, spec.rho, 200_000, rng)
    lo, hi = np.quantile(x / y, quantiles)
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        x, y = sample_bivariate_normal(spec.mu_x, spec.mu_y, spec.sigma_x, spec.sigma_y, spec.rho, m, rng)
        counts += np.histogram(x / y, bins=edges)[0]
        done += m
    density = counts / (draws * np.diff(edges))
    return Histogram(edges, density, counts, draws)


def histogram_discrepancy(hist: Histogram, density_fn):
    """Largest ``|histogram - bin average of density|`` in units of the MC standard error.

    Bin averages come from adaptive quadrature of ``density_fn``; the
    standard error of a bin is ``sqrt(p (1 - p) / N) / width`` with ``p`` the
    bin probability under ``density_fn``.
    """
    from scipy.integrate import quad

    probs = np.array([quad(density_fn, a, b, epsabs=1e-13, epsrel=1e-10)[0] for a, b in zip(hist.edges[:-1], hist.edges[1:])])
    expected = probs / hist.widths
    se = np.sqrt(probs * (1.0 - probs) / hist.draws) / hist.widths
    return float(np.max(np.abs(hist.density - expected) / se))


def _params_from_free(x, order):
    """Original-space arrays from a free vector, decoded from the coordinate names."""
    names = list(order)
    K = 1 + sum(n.startswith("alr_w") for n in names)
    z = np.zeros((x.shape[0], K))
    a = np.zeros((x.shape[0], K))
    c = np.zeros((x.shape[0], K))
    v = np.zeros((x.shape[0], K))
    u = np.zeros((x.shape[0], K))
    for j, name in enumerate(names):
        if name == "u":
            u[:] = x[:, j : j + 1]
            continue
        stem = name.rstrip("0123456789")
        k = int(name[len(stem):]) - 1
        col = x[:, j]
        if stem == "alr_w":
            z[:, k] = col
        elif stem == "log_a":
            a[:, k] = np.exp(col)
        elif stem == "log_c":
            c[:, k] = np.exp(col)
        elif stem == "v":
            v[:, k] = col
        elif stem == "u":
            u[:, k] = col
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w, a, c, u, v


def mc_delta_propagation(calib, t, draws=10**5, seed=0):
    """Empirical mean and covariance of ``(alpha_t, beta_t)`` under the Laplace posterior."""
    if draws < 10**5:
        raise ValueError("delta propagation oracle needs at least 1e5 draws")
    rng = np.random.default_rng(seed)
    cov = np.asarray(calib.covariance, dtype=float)
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    x = np.asarray(calib.free_mode)[None, :] + rng.standard_normal((draws, cov.shape[0])) @ root.T
    w, a, c, u, v = _params_from_free(x, calib.parameter_order)
    alpha = np.sum(w * c * t**u, axis=1)
    beta = np.sum(w * a * t**v, axis=1)
    sample = np.stack([alpha, beta], axis=1)
    return sample.mean(axis=0), np.cov(sample, rowvar=False)


def delta_discrepancy(delta_cov, mc_cov, abs_floor=0.0):
    """Largest relative entry difference between two 2x2 covariances."""
    delta_cov = np.asarray(delta_cov)
    mc_cov = np.asarray(mc_cov)
    diff = np.abs(delta_cov - mc_cov)
    rel = diff / np.abs(mc_cov)
    return float(np.max(np.where(diff <= abs_floor, 0.0, rel)))


def run_all(seed=0, ratio_draws=10**6, calib=None):
    """Run every oracle and return a list of :class:`OracleReport`.

    Without ``calib`` a small synthetic calibration is fitted for the delta
    method check.
    """
    from . import specfun
    from .calibrate import FitConfig, calibrate
    from .model import MixtureParams, sample_synthetic
    from .surface import linear_coeffs

    reports = []
    for z in (0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0):
        ref = series_kummer(z, 60)
        err = abs(specfun.kummer1f1_half(z) - ref) / ref
        reports.append(report(f"kummer_series_z={z:g}", err, 1e-9, sample_size=60))
    xs = np.linspace(-6, 6, 241)
    err = max(abs(specfun.erf(x) - erf_reference(x)) for x in xs)
    reports.append(report("erf_vs_mpmath", err, 1e-12, sample_size=xs.size))

    cauchy = specfun.BivariateNormalSpec(0.0, 0.0, 1.0, 1.0, 0.0)
    ws = np.array([0.0, 0.5, -0.5, 2.0, -2.0])
    err = np.max(np.abs(specfun.ratio_normal_density(ws, cauchy) - 1.0 / (np.pi * (1.0 + ws * ws))))
    reports.append(report("ratio_density_cauchy", err, 1e-10))

    specs = [cauchy, specfun.BivariateNormalSpec(3.0, 10.0, 0.5, 0.1, 0.2),
             specfun.BivariateNormalSpec(1.0, 2.0, 0.8, 0.6, -0.5)]
    for i, spec in enumerate(specs):
        hist = mc_ratio_density(spec, ratio_draws, 40, seed + i)
        stat = histogram_discrepancy(hist, lambda w, s=spec: specfun.ratio_normal_density(w, s))
        reports.append(report(f"ratio_density_mc[{i}]", stat, 3.0, seed + i, ratio_draws))

    if calib is None:
        truth = MixtureParams.from_arrays([0.6, 0.4], [4.5, 10.0], [0.8, 1.8], [-0.1], [-0.45, -0.35])
        design = [(d, t, 500) for d in (0.0, 1.0, 2.0, 3.0) for t in (0.5, 2.0, 8.0, 24.0)]
        data = sample_synthetic(truth, design, seed)
        calib = calibrate(data, 2, True, FitConfig(starts=8, seed=seed))
    for t in (0.5, 4.0, 10.0):
        _, mc_cov = mc_delta_propagation(calib, t, 10**5, seed)
        stat = delta_discrepancy(linear_coeffs(calib, t).covariance, mc_cov)
        reports.append(report(f"delta_method_t={t:g}", stat, 0.05, seed, 10**5))
    return reports
