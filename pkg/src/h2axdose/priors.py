"""Priors on the time elapsed since exposure.

Three kinds: uniform on ``[p, q]``, the non-standard beta (a beta law
rescaled to ``[p, q]``) and a point mass for a known exposure time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from .errors import DomainError

UNIFORM = "uniform"
BETA = "beta"
POINT = "point"


@dataclass(frozen=True)
class TimePrior:
    kind: str
    lower: float
    upper: float
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in (UNIFORM, BETA, POINT):
            raise DomainError(f"unknown time prior kind {self.kind!r}")
        if self.kind == POINT:
            if not (self.lower > 0 and self.lower == self.upper):
                raise DomainError("point prior needs a single positive time")
            return
        if not 0 < self.lower < self.upper:
            raise DomainError(f"time prior needs 0 < p < q, got p={self.lower}, q={self.upper}")
        if self.kind == BETA and not (self.alpha and self.beta and self.alpha > 0 and self.beta > 0):
            raise DomainError("beta time prior needs positive shape parameters")

    @classmethod
    def uniform(cls, lower, upper):
        return cls(UNIFORM, float(lower), float(upper))

    @classmethod
    def nonstandard_beta(cls, alpha, beta, lower, upper):
        return cls(BETA, float(lower), float(upper), float(alpha), float(beta))

    @classmethod
    def point(cls, time):
        return cls(POINT, float(time), float(time))

    @classmethod
    def parse(cls, text: str) -> "TimePrior":
        """Parse ``uniform:p,q``, ``beta:alpha,beta,p,q`` or ``point:t``."""
        kind, _, rest = text.partition(":")
        kind = kind.strip().lower()
        try:
            values = [float(x) for x in rest.split(",")] if rest.strip() else []
        except ValueError:
            raise DomainError(f"malformed time prior {text!r}") from None
        expected = {UNIFORM: 2, BETA: 4, POINT: 1}.get(kind)
        if expected is None or len(values) != expected:
            raise DomainError(
                f"malformed time prior {text!r}; use uniform:p,q, beta:alpha,beta,p,q or point:t"
            )
        if kind == UNIFORM:
            return cls.uniform(*values)
        if kind == BETA:
            return cls.nonstandard_beta(*values)
        return cls.point(values[0])

    def __str__(self):
        if self.kind == UNIFORM:
            return f"uniform:{self.lower!r},{self.upper!r}"
        if self.kind == BETA:
            return f"beta:{self.alpha!r},{self.beta!r},{self.lower!r},{self.upper!r}"
        return f"point:{self.lower!r}"

    @property
    def is_point(self):
        return self.kind == POINT

    def mean(self):
        if self.kind == BETA:
            return self.lower + self.alpha / (self.alpha + self.beta) * (self.upper - self.lower)
        return 0.5 * (self.lower + self.upper)

    def variance(self):
        width = self.upper - self.lower
        if self.kind == UNIFORM:
            return width**2 / 12.0
        if self.kind == BETA:
            s = self.alpha + self.beta
            return self.alpha * self.beta / (s * s * (s + 1.0)) * width**2
        return 0.0


def time_prior_density(prior: TimePrior, t):
    """Density of the time prior; zero outside ``[p, q]``.

    Not defined for the point prior, which has no density.
    """
    if prior.is_point:
        raise DomainError("the point prior has no density; condition on its time directly")
    t = np.asarray(t, dtype=float)
    p, q = prior.lower, prior.upper
    inside = (t >= p) & (t <= q)
    if prior.kind == UNIFORM:
        out = np.where(inside, 1.0 / (q - p), 0.0)
    else:
        a, b = prior.alpha, prior.beta
        tc = np.clip(t, p, q)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_f = (
                (a - 1.0) * np.log(tc - p)
                + (b - 1.0) * np.log(q - tc)
                - betaln(a, b)
                - (a + b - 1.0) * math.log(q - p)
            )
        out = np.where(inside, np.exp(log_f), 0.0)
        out = np.nan_to_num(out, nan=0.0, posinf=np.inf)
    return float(out) if out.ndim == 0 else out


def time_prior_sample(prior: TimePrior, rng, size=None):
    """Draw exposure times. ``rng`` is a :class:`numpy.random.Generator`.

    Beta draws use the ratio of two gamma variates.
    """
    rng = np.random.default_rng(rng)
    if prior.is_point:
        return prior.lower if size is None else np.full(size, prior.lower)
    p, q = prior.lower, prior.upper
    if prior.kind == UNIFORM:
        return rng.uniform(p, q, size)
    g1 = rng.standard_gamma(prior.alpha, size)
    g2 = rng.standard_gamma(prior.beta, size)
    return p + (q - p) * g1 / (g1 + g2)
