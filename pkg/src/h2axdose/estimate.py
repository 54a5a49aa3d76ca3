"""Dose posterior for a new patient.

Given the patient's foci summary, the patient mean is ``mu ~ N(xbar, se^2)``.
At a known time the dose is ``(mu - alpha_t) / beta_t``, a ratio of two
correlated normals with an exact density. Uncertainty about the time enters
through a prior ``pi(t)`` and is integrated out, either by adaptive
quadrature over ``t`` or by Monte Carlo simulation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, quad_vec, trapezoid

from .calibrate import CalibrationResult
from .errors import DomainError, GridError
from .priors import TimePrior, time_prior_density, time_prior_sample
from .specfun import BivariateNormalSpec, ratio_normal_cdf, ratio_normal_logpdf
from .surface import LinearCoeffs, coefficient_moments, linear_coeffs

log = logging.getLogger(__name__)

QUADRATURE = "quadrature"
MONTE_CARLO = "montecarlo"

DEFAULT_GRID = (-1.0, 6.0, 0.005)
ENDPOINT_MASS_LIMIT = 0.005
BETA_FLOOR = 1e-10
MIN_CELLS = 30


@dataclass(frozen=True)
class TestSummary:
    """Patient-side foci summary: cells scored, sample mean, standard error of the mean."""

    __test__ = False  # not a pytest class

    n: int | None
    mean: float
    se: float

    def __post_init__(self):
        if self.n is not None and (int(self.n) != self.n or self.n < 1):
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if not self.mean >= 0:
            raise DomainError(f"mean foci count must be non-negative, got {self.mean!r}")
        if not self.se > 0:
            raise DomainError(f"standard error must be positive, got {self.se!r}")
        if self.n is not None and self.n < MIN_CELLS:
            warnings.warn(
                f"only {self.n} cells scored; the normal approximation for the patient mean "
                f"assumes at least {MIN_CELLS}",
                stacklevel=2,
            )

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts, dtype=float)
        n = counts.size
        return cls(n, float(counts.mean()), float(counts.std(ddof=1) / np.sqrt(n)))


@dataclass
class DosePosterior:
    doses: np.ndarray
    density: np.ndarray
    median: float
    mean: float
    lower: float
    upper: float
    level: float
    method: str
    samples: np.ndarray | None = None
    rejection_fraction: float = 0.0
    truncated: bool = False
    warnings: list = field(default_factory=list)

    @property
    def grid(self):
        return list(zip(self.doses.tolist(), self.density.tolist()))

    @property
    def credible_interval(self):
        return (self.lower, self.upper)

    @property
    def width(self):
        return self.upper - self.lower


def ratio_spec(lc: LinearCoeffs, test: TestSummary) -> BivariateNormalSpec:
    """Bivariate normal of ``(mu - alpha_t, beta_t)``.

    ``Cov(mu - alpha_t, beta_t) = -Cov(alpha_t, beta_t)`` since the patient
    mean is independent of the calibration.
    """
    if not lc.var_beta > 0:
        raise DomainError("variance of beta_t is zero; the dose ratio is degenerate")
    sx = np.sqrt(test.se**2 + lc.var_alpha)
    sy = np.sqrt(lc.var_beta)
    rho = -lc.cov_alpha_beta / (sx * sy)
    return BivariateNormalSpec(test.mean - lc.alpha, lc.beta, float(sx), float(sy), float(rho))


def conditional_dose_density(d, t, calib: CalibrationResult, test: TestSummary):
    """Posterior density of the dose given the exposure time ``t``."""
    spec = ratio_spec(linear_coeffs(calib, t), test)
    out = np.exp(ratio_normal_logpdf(d, spec))
    return float(out) if np.ndim(out) == 0 else out


def _default_grid():
    lo, hi, step = DEFAULT_GRID
    return np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)


def make_grid(lo, hi, step):
    if not (hi > lo and step > 0):
        raise DomainError(f"invalid dose grid {lo},{hi},{step}")
    n = int(round((hi - lo) / step)) + 1
    if n < 3:
        raise DomainError("dose grid needs at least three points")
    return np.linspace(lo, hi, n)


def _specs_at(calib, test, times):
    alpha, beta, va, vb, cab = coefficient_moments(calib, np.atleast_1d(times))
    return [
        ratio_spec(LinearCoeffs(float(a), float(b), np.array([[x, z], [z, y]]), float(t)), test)
        for a, b, x, y, z, t in zip(alpha, beta, va, vb, cab, np.atleast_1d(times))
    ]


def _tail_masses(calib, test, prior, lo, hi):
    """Posterior probability below ``lo`` and above ``hi``."""
    if prior.is_point:
        spec = _specs_at(calib, test, prior.lower)[0]
        return float(ratio_normal_cdf(lo, spec)), float(1.0 - ratio_normal_cdf(hi, spec))

    def tail(t, which):
        spec = _specs_at(calib, test, t)[0]
        cdf = ratio_normal_cdf(lo if which == 0 else hi, spec)
        m = cdf if which == 0 else 1.0 - cdf
        return m * time_prior_density(prior, t)

    pts = [prior.mean()]
    left = quad(tail, prior.lower, prior.upper, args=(0,), points=pts, epsabs=1e-10, limit=200)[0]
    right = quad(tail, prior.lower, prior.upper, args=(1,), points=pts, epsabs=1e-10, limit=200)[0]
    return float(left), float(right)


def _marginal_unnormalised(calib, test, prior, doses, epsabs):
    if prior.is_point:
        spec = _specs_at(calib, test, prior.lower)[0]
        return np.exp(ratio_normal_logpdf(doses, spec))

    def integrand(t):
        spec = _specs_at(calib, test, t)[0]
        return np.exp(ratio_normal_logpdf(doses, spec)) * time_prior_density(prior, t)

    pts = (prior.mean(),)
    value, _ = quad_vec(integrand, prior.lower, prior.upper, epsabs=epsabs, epsrel=1e-10, norm="max",
                        points=pts, limit=2000)
    return value


def marginal_dose_density_quadrature(calib: CalibrationResult, test: TestSummary, prior: TimePrior,
                                     dose_grid=None, level=0.95, truncate_nonnegative=False,
                                     epsabs=1e-8, max_widen=8) -> DosePosterior:
    """Marginal dose posterior on a grid by adaptive quadrature over time.

    With the default grid (``[-1, 6]`` Gy, 5 mGy spacing) the range is widened
    automatically whenever at least 0.5% of the mass falls outside it; an
    explicit grid raises :class:`GridError` instead.
    """
    auto = dose_grid is None
    doses = _default_grid() if auto else np.asarray(dose_grid, dtype=float)
    if doses.ndim != 1 or doses.size < 3 or np.any(np.diff(doses) <= 0):
        raise DomainError("dose grid must be strictly increasing with at least three points")
    for _ in range(max_widen + 1):
        left, right = _tail_masses(calib, test, prior, doses[0], doses[-1])
        if truncate_nonnegative:
            left = 0.0 if doses[0] <= 0 else left
        if left < ENDPOINT_MASS_LIMIT and right < ENDPOINT_MASS_LIMIT:
            break
        if not auto:
            raise GridError(
                f"dose grid [{doses[0]}, {doses[-1]}] misses posterior mass (below: {left:.4f}, "
                f"above: {right:.4f}); widen the grid",
                left, right,
            )
        step = doses[1] - doses[0]
        span = doses[-1] - doses[0]
        lo = doses[0] - span if left >= ENDPOINT_MASS_LIMIT else doses[0]
        hi = doses[-1] + span if right >= ENDPOINT_MASS_LIMIT else doses[-1]
        doses = make_grid(lo, hi, step)
    else:
        raise GridError("could not find a dose grid holding the posterior mass", left, right)

    dens = _marginal_unnormalised(calib, test, prior, doses, epsabs)
    if truncate_nonnegative:
        dens = np.where(doses >= 0, dens, 0.0)
    z = trapezoid(dens, doses)
    if not z > 0:
        raise GridError("posterior density vanishes on the dose grid")
    dens = dens / z
    median, mean, lower, upper = _grid_summary(doses, dens, level)
    return DosePosterior(doses, dens, median, mean, lower, upper, level, QUADRATURE, truncated=truncate_nonnegative)


def marginal_dose_samples_mc(calib: CalibrationResult, test: TestSummary, prior: TimePrior, draws=100_000,
                             seed=None, level=0.95, dose_grid=None, truncate_nonnegative=False) -> DosePosterior:
    """Simulate the dose posterior.

    Per draw: a time from the prior, ``(alpha_t, beta_t)`` from their
    bivariate normal at that time, the patient mean from ``N(xbar, se^2)``,
    and the dose ``(mu - alpha_t) / beta_t``. Draws with ``beta_t <= 1e-10``
    are discarded and replaced; their share is reported.
    """
    if draws < 10_000:
        raise DomainError("at least 10000 draws are required")
    rng = np.random.default_rng(seed)
    out = []
    accepted = attempted = 0
    while accepted < draws:
        m = max(draws - accepted, 1000)
        t = time_prior_sample(prior, rng, m)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        alpha, beta, va, vb, cab = coefficient_moments(calib, t)
        sa = np.sqrt(va)
        sb = np.sqrt(vb)
        r = np.clip(cab / (sa * sb), -1.0, 1.0)
        z1 = rng.standard_normal(m)
        z2 = rng.standard_normal(m)
        a_draw = alpha + sa * z1
        b_draw = beta + sb * (r * z1 + np.sqrt(1.0 - r * r) * z2)
        mu = test.mean + test.se * rng.standard_normal(m)
        keep = b_draw > BETA_FLOOR
        attempted += m
        d = (mu[keep] - a_draw[keep]) / b_draw[keep]
        if truncate_nonnegative:
            d = d[d >= 0]
        take = d[: draws - accepted]
        out.append(take)
        accepted += take.size
    samples = np.concatenate(out)
    rejected = attempted - accepted
    frac = rejected / attempted if attempted else 0.0
    notes = []
    if frac > 0.01:
        notes.append(f"{100 * frac:.2f}% of draws rejected (beta_t <= {BETA_FLOOR:g} or negative dose)")
        log.warning(notes[-1])
    median, mean, lower, upper = _sample_summary(samples, level)
    doses = _default_grid() if dose_grid is None else np.asarray(dose_grid, dtype=float)
    lo = min(doses[0], samples.min())
    hi = max(doses[-1], samples.max())
    step = doses[1] - doses[0]
    doses = np.arange(np.floor(lo / step) * step, hi + 2 * step, step)
    edges = np.concatenate([[doses[0] - step / 2], doses + step / 2])
    hist, _ = np.histogram(samples, bins=edges, density=True)
    return DosePosterior(doses, hist, median, mean, lower, upper, level, MONTE_CARLO, samples=samples,
                         rejection_fraction=float(frac), truncated=truncate_nonnegative, warnings=notes)


def _check_level(level):
    if not 0 < level < 1:
        raise DomainError(f"credible level must lie in (0, 1), got {level!r}")


def _grid_summary(doses, density, level):
    _check_level(level)
    cdf = cumulative_trapezoid(density, doses, initial=0.0)
    cdf = cdf / cdf[-1]
    tail = 0.5 * (1.0 - level)
    # the CDF can be flat where the density underflows; interpolate on the strictly increasing part
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    qs = np.interp([0.5, tail, 1.0 - tail], cdf[keep], doses[keep])
    mean = trapezoid(doses * density, doses) / trapezoid(density, doses)
    return float(qs[0]), float(mean), float(qs[1]), float(qs[2])


def _sample_summary(samples, level):
    _check_level(level)
    tail = 0.5 * (1.0 - level)
    lo, med, hi = np.quantile(samples, [tail, 0.5, 1.0 - tail])
    return float(med), float(np.mean(samples)), float(lo), float(hi)


def summarize(posterior, level=0.95):
    """``(median, mean, lower, upper)`` with an equal-tailed interval at ``level``.

    Accepts a :class:`DosePosterior` (samples preferred when present), a raw
    sample array, or a ``(doses, density)`` pair.
    """
    if isinstance(posterior, DosePosterior):
        if posterior.samples is not None:
            return _sample_summary(posterior.samples, level)
        return _grid_summary(posterior.doses, posterior.density, level)
    if isinstance(posterior, tuple) and len(posterior) == 2:
        doses, density = (np.asarray(x, dtype=float) for x in posterior)
        return _grid_summary(doses, density, level)
    return _sample_summary(np.asarray(posterior, dtype=float), level)
