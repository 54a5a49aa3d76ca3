"""Poisson mixture with dose-time mean surfaces.

Each of ``K`` components has mean ``lambda_k(d, t) = c_k t**u_k + a_k t**v_k d``
and the foci count of a cell is drawn from the mixture
``sum_k w_k Poisson(lambda_k)``. The weights carry a symmetric Dirichlet
prior with all concentrations ``1/K`` (Perks' prior); ``(a, c, u, v)`` have
flat priors on a configurable box.

For optimisation the parameters are mapped to an unconstrained vector (see
:class:`Parametrization`).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from . import kernels
from .errors import BoundaryError, DomainError, NumericError

DEFAULT_MAX_COUNT = 200

DEFAULT_BOUNDS = {
    "a": (1e-6, 100.0),
    "c": (1e-6, 100.0),
    "u": (-5.0, 5.0),
    "v": (-5.0, 5.0),
}


@dataclass(frozen=True)
class FociRecord:
    """One scored cell: absorbed dose (Gy), time since exposure (h), foci count."""

    dose: float
    time: float
    count: int

    def __post_init__(self):
        if not (np.isfinite(self.dose) and self.dose >= 0):
            raise DomainError(f"dose must be non-negative, got {self.dose!r}")
        if not (np.isfinite(self.time) and self.time > 0):
            raise DomainError(f"time must be positive, got {self.time!r}")
        if int(self.count) != self.count or self.count < 0:
            raise DomainError(f"count must be a non-negative integer, got {self.count!r}")


class CalibrationDataset:
    """Per-cell foci counts at known doses and times.

    Stored column-wise. Identical ``(dose, time, count)`` rows are collapsed
    into weighted rows for likelihood evaluation (:attr:`aggregated`).
    """

    def __init__(self, dose, time, count, provenance="", max_count=DEFAULT_MAX_COUNT):
        dose = np.asarray(dose, dtype=float).ravel()
        time = np.asarray(time, dtype=float).ravel()
        count_arr = np.asarray(count).ravel()
        if not (dose.shape == time.shape == count_arr.shape):
            raise DomainError("dose, time and count must have equal length")
        if dose.size == 0:
            raise DomainError("calibration dataset is empty")
        if not np.all(np.isfinite(dose)) or np.any(dose < 0):
            raise DomainError(f"negative or non-finite dose at record {_first_bad(~(np.isfinite(dose) & (dose >= 0)))}")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DomainError(f"non-positive time at record {_first_bad(~(np.isfinite(time) & (time > 0)))}")
        count_f = count_arr.astype(float)
        bad = ~np.isfinite(count_f) | (count_f < 0) | (count_f != np.round(count_f))
        if np.any(bad):
            raise DomainError(f"count must be a non-negative integer (record {_first_bad(bad)})")
        if max_count is not None and np.any(count_f > max_count):
            raise DomainError(
                f"count {int(count_f.max())} at record {_first_bad(count_f > max_count)} exceeds "
                f"the ceiling of {max_count} foci per cell"
            )
        if np.unique(dose).size < 2 or np.unique(time).size < 2:
            raise DomainError("need at least two distinct doses and two distinct times")
        self.dose = dose
        self.time = time
        self.count = count_f.astype(np.int64)
        self.provenance = provenance
        for arr in (self.dose, self.time, self.count):
            arr.flags.writeable = False

    @classmethod
    def from_records(cls, records: Iterable[FociRecord], provenance="", **kwargs):
        records = list(records)
        return cls(
            [r.dose for r in records],
            [r.time for r in records],
            [r.count for r in records],
            provenance=provenance,
            **kwargs,
        )

    def __len__(self):
        return self.dose.size

    @property
    def records(self) -> list[FociRecord]:
        return [FociRecord(float(d), float(t), int(y)) for d, t, y in zip(self.dose, self.time, self.count)]

    @cached_property
    def aggregated(self):
        """Unique rows as ``(dose, time, count, weight, log_count_factorial)``."""
        keys = np.stack([self.dose, self.time, self.count.astype(float)], axis=1)
        uniq, weight = np.unique(keys, axis=0, return_counts=True)
        d = np.ascontiguousarray(uniq[:, 0])
        t = np.ascontiguousarray(uniq[:, 1])
        y = np.ascontiguousarray(uniq[:, 2])
        return d, t, y, weight.astype(float), gammaln(y + 1.0)

    def digest(self) -> str:
        """SHA-256 over the records in storage order."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.dose, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.time, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.count, dtype="<i8").tobytes())
        return "sha256:" + h.hexdigest()

    def design_points(self):
        """Distinct ``(dose, time)`` pairs with their cell counts."""
        keys = np.stack([self.dose, self.time], axis=1)
        uniq, n = np.unique(keys, axis=0, return_counts=True)
        return [(float(d), float(t), int(k)) for (d, t), k in zip(uniq, n)]


def _first_bad(mask):
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True)
class ComponentParams:
    """Surface parameters of one component.

    ``u`` is only set in the generalised model where every component has its
    own intercept exponent.
    """

    a: float
    c: float
    v: float
    u: float | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"a must be positive, got {self.a!r}")
        if not self.c > 0:
            raise DomainError(f"c must be positive, got {self.c!r}")


@dataclass(frozen=True)
class MixtureParams:
    weights: tuple
    components: tuple
    u: float | None = None
    shared_u: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", tuple(self.components))
        if len(w) < 1 or len(w) != len(self.components):
            raise DomainError("need one weight per component and K >= 1")
        upper_ok = np.all(w < 1) if len(w) > 1 else True
        if np.any(w <= 0) or not upper_ok:
            raise DomainError(f"weights must lie in (0, 1), got {self.weights}")
        if abs(w.sum() - 1.0) >= 1e-12:
            raise DomainError(f"weights must sum to one (sum={w.sum()!r})")
        if self.shared_u:
            if self.u is None:
                raise DomainError("shared_u model requires u")
        elif any(comp.u is None for comp in self.components):
            raise DomainError("generalised model requires u on every component")

    @property
    def K(self) -> int:
        return len(self.weights)

    def u_of(self, k: int) -> float:
        return self.u if self.shared_u else self.components[k].u

    def arrays(self):
        """``(w, a, c, u, v)`` as float arrays of length K."""
        w = np.array(self.weights)
        a = np.array([cp.a for cp in self.components])
        c = np.array([cp.c for cp in self.components])
        u = np.array([self.u_of(k) for k in range(self.K)], dtype=float)
        v = np.array([cp.v for cp in self.components])
        return w, a, c, u, v

    @classmethod
    def from_arrays(cls, w, a, c, u, v, shared_u=True):
        w = np.asarray(w, dtype=float)
        w = w / w.sum()
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if shared_u:
            comps = [ComponentParams(float(ai), float(ci), float(vi)) for ai, ci, vi in zip(a, c, v)]
            return cls(tuple(w), tuple(comps), float(u[0]), True)
        comps = [ComponentParams(float(ai), float(ci), float(vi), float(ui)) for ai, ci, vi, ui in zip(a, c, v, u)]
        return cls(tuple(w), tuple(comps), None, False)

    def canonical(self) -> "MixtureParams":
        """Components sorted by ascending slope factor ``a``."""
        order = sorted(range(self.K), key=lambda k: (self.components[k].a, self.components[k].c))
        return MixtureParams(
            tuple(self.weights[k] for k in order),
            tuple(self.components[k] for k in order),
            self.u,
            self.shared_u,
        )

    def mean_surface(self, dose, time):
        """Mixture mean ``sum_k w_k lambda_k(d, t)``."""
        w, a, c, u, v = self.arrays()
        dose = np.asarray(dose, dtype=float)[..., None]
        time = np.asarray(time, dtype=float)[..., None]
        return np.sum(w * (c * time**u + a * time**v * dose), axis=-1)


@dataclass(frozen=True)
class PriorSpec:
    """Perks' Dirichlet prior on weights and flat box priors on surfaces."""

    K: int
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    use_perks: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise DomainError("K must be at least 1")
        merged = dict(DEFAULT_BOUNDS)
        merged.update(self.bounds)
        for name, (lo, hi) in merged.items():
            if not lo < hi:
                raise DomainError(f"empty prior box for {name}: [{lo}, {hi}]")
        for name in ("a", "c"):
            if merged[name][0] <= 0:
                raise DomainError(f"lower bound of {name} must be positive")
        object.__setattr__(self, "bounds", merged)

    @property
    def perks_concentration(self):
        return np.full(self.K, 1.0 / self.K)


def lambda_surface(comp: ComponentParams, u: float, dose, time):
    """Component mean ``c t**u + a t**v d``."""
    dose = np.asarray(dose, dtype=float)
    time = np.asarray(time, dtype=float)
    if np.any(time <= 0):
        raise DomainError("time must be positive")
    if np.any(dose < 0):
        raise DomainError("dose must be non-negative")
    lam = comp.c * time**u + comp.a * time**comp.v * dose
    if np.any(~(lam > 0)):
        raise DomainError(
            f"non-positive surface value with a={comp.a}, c={comp.c}, u={u}, v={comp.v}"
        )
    return float(lam) if lam.ndim == 0 else lam


def _loglik_parts(params: MixtureParams, data: CalibrationDataset, want_grad: bool):
    w, a, c, u, v = params.arrays()
    d, t, y, n, lf = data.aggregated
    ll, grad = kernels.mixture_loglik(d, t, y, n, lf, np.log(w), a, c, u, v, want_grad)
    if not np.isfinite(ll):
        rows = kernels.row_loglik(d, t, y, lf, np.log(w), a, c, u, v)
        bad = np.flatnonzero(~np.isfinite(rows))
        idx = _record_index(data, d[bad[0]], t[bad[0]], y[bad[0]]) if bad.size else -1
        raise NumericError(f"non-finite log-likelihood contribution at record {idx}")
    return ll, grad


def _record_index(data, d, t, y):
    hit = np.flatnonzero((data.dose == d) & (data.time == t) & (data.count == y))
    return int(hit[0]) if hit.size else -1


def log_likelihood(params: MixtureParams, data: CalibrationDataset) -> float:
    """``sum_i log sum_k w_k Poisson(y_i | lambda_k(d_i, t_i))``."""
    return _loglik_parts(params, data, False)[0]


def log_perks(weights) -> float:
    """Log density of the symmetric Dirichlet with concentration ``1/K``."""
    w = np.asarray(weights, dtype=float)
    K = w.size
    if K == 1:
        return 0.0
    alpha = 1.0 / K
    return float(gammaln(K * alpha) - K * gammaln(alpha) + (alpha - 1.0) * np.log(w).sum())


def check_bounds(params: MixtureParams, spec: PriorSpec):
    """Raise :class:`BoundaryError` for the first parameter outside its box."""
    w, a, c, u, v = params.arrays()
    for name, values in (("a", a), ("c", c), ("v", v), ("u", u)):
        lo, hi = spec.bounds[name]
        # exp(log(bound)) may round one ulp past the bound
        slack = 1e-12 * max(abs(lo), abs(hi))
        for k, val in enumerate(values):
            if not lo - slack <= val <= hi + slack:
                label = name if (name == "u" and params.shared_u) else f"{name}{k + 1}"
                raise BoundaryError(label, float(val), lo, hi)


def log_prior(params: MixtureParams, spec: PriorSpec) -> float:
    """Perks log density of the weights; the flat surface prior adds a constant, dropped here."""
    if params.K != spec.K:
        raise DomainError(f"prior is for K={spec.K}, parameters have K={params.K}")
    check_bounds(params, spec)
    return log_perks(params.weights) if spec.use_perks else 0.0


def log_posterior_kernel(params: MixtureParams, data: CalibrationDataset, spec: PriorSpec) -> float:
    try:
        lp = log_prior(params, spec)
    except BoundaryError:
        return -np.inf
    return log_likelihood(params, data) + lp


class Parametrization:
    """Map between :class:`MixtureParams` and an unconstrained vector.

    Coordinates, in order: additive log-ratios ``log(w_k / w_K)`` for
    ``k < K``; then per component ``log a_k``, ``log c_k``, ``v_k`` (and
    ``u_k`` in the generalised model); then the shared ``u`` last. For K=4
    with shared ``u`` this gives 16 coordinates.
    """

    def __init__(self, K: int, shared_u: bool = True):
        if K < 1:
            raise DomainError("K must be at least 1")
        self.K = K
        self.shared_u = shared_u
        names = [f"alr_w{k + 1}" for k in range(K - 1)]
        per = ["log_a", "log_c", "v"] + ([] if shared_u else ["u"])
        for k in range(K):
            names.extend(f"{p}{k + 1}" for p in per)
        if shared_u:
            names.append("u")
        self.names = names
        self.size = len(names)
        nper = len(per)
        base = K - 1
        self.idx_alr = np.arange(K - 1)
        self.idx_loga = base + nper * np.arange(K)
        self.idx_logc = self.idx_loga + 1
        self.idx_v = self.idx_loga + 2
        self.idx_u = np.full(K, self.size - 1) if shared_u else self.idx_loga + 3

    def __repr__(self):
        return f"Parametrization(K={self.K}, shared_u={self.shared_u})"

    def weights(self, x):
        z = np.append(np.asarray(x)[self.idx_alr], 0.0)
        z -= z.max()
        e = np.exp(z)
        return e / e.sum()

    def to_params(self, x) -> MixtureParams:
        x = np.asarray(x, dtype=float)
        w = self.weights(x)
        a = np.exp(x[self.idx_loga])
        c = np.exp(x[self.idx_logc])
        v = x[self.idx_v]
        u = x[self.idx_u]
        return MixtureParams.from_arrays(w, a, c, u if not self.shared_u else u[:1], v, self.shared_u)

    def to_free(self, params: MixtureParams) -> np.ndarray:
        if params.K != self.K or params.shared_u != self.shared_u:
            raise DomainError(f"parameters (K={params.K}, shared_u={params.shared_u}) do not match {self!r}")
        w, a, c, u, v = params.arrays()
        x = np.empty(self.size)
        x[self.idx_alr] = np.log(w[:-1]) - np.log(w[-1])
        x[self.idx_loga] = np.log(a)
        x[self.idx_logc] = np.log(c)
        x[self.idx_v] = v
        x[self.idx_u] = u
        return x

    def box(self, spec: PriorSpec, alr_range=None):
        """Per-coordinate ``(lower, upper)``; ``None`` for unbounded alr coordinates."""
        out = []
        for name in self.names:
            if name.startswith("alr_"):
                out.append(alr_range if alr_range is not None else (None, None))
                continue
            key = name.rstrip("0123456789")
            if key.startswith("log_"):
                lo, hi = spec.bounds[key[4:]]
                out.append((float(np.log(lo)), float(np.log(hi))))
            else:
                out.append(tuple(map(float, spec.bounds[key])))
        return out

    def chain_gradient(self, x, natural_grad):
        """Gradient in free coordinates from ``(5, K)`` natural-coordinate derivatives.

        ``natural_grad`` rows are derivatives with respect to ``log w``,
        ``log a``, ``log c``, ``u`` and ``v``.
        """
        w = self.weights(x)
        g = np.zeros(self.size)
        g_logw = natural_grad[0]
        # d log w_k / d z_j = delta_kj - w_j
        g[self.idx_alr] = g_logw[:-1] - w[:-1] * g_logw.sum()
        g[self.idx_loga] += natural_grad[1]
        g[self.idx_logc] += natural_grad[2]
        np.add.at(g, self.idx_u, natural_grad[3])
        g[self.idx_v] += natural_grad[4]
        return g


def free_log_posterior(x, data: CalibrationDataset, spec: PriorSpec, param: Parametrization,
                       jacobian=True, want_grad=True):
    """Log posterior in free coordinates with its gradient.

    With ``jacobian`` the log-determinant of the weight transform,
    ``sum_k log w_k``, is added so the objective is the posterior density of
    the free coordinates. Without it Perks' prior is unbounded as any weight
    goes to zero and no interior mode exists for redundant components.
    Returns ``-inf`` outside the box.
    """
    x = np.asarray(x, dtype=float)
    try:
        params = param.to_params(x)
        check_bounds(params, spec)
    except DomainError:
        return (-np.inf, np.full(param.size, np.nan)) if want_grad else -np.inf
    w, a, c, u, v = params.arrays()
    d, t, y, n, lf = data.aggregated
    logw = np.log(param.weights(x))
    ll, nat = kernels.mixture_loglik(d, t, y, n, lf, logw, a, c, u, v, want_grad)
    value = ll
    coef = np.zeros(param.K)
    if spec.use_perks and param.K > 1:
        value += log_perks(w)
        coef += 1.0 / param.K - 1.0
    if jacobian and param.K > 1:
        value += float(logw.sum())
        coef += 1.0
    if not want_grad:
        return value
    nat = nat.copy()
    nat[0] += coef
    return value, param.chain_gradient(x, nat)


def sample_synthetic(params: MixtureParams, design: Sequence, seed=None, provenance=None,
                     max_count=DEFAULT_MAX_COUNT) -> CalibrationDataset:
    """Draw a calibration dataset from the mixture.

    ``design`` is a sequence of ``(dose, time, n_cells)``; for each cell a
    component is picked with probability ``w_k`` and a Poisson count drawn
    from its surface. Design points with zero cells are skipped.
    """
    rng = np.random.default_rng(seed)
    w = np.array(params.weights)
    doses, times, counts = [], [], []
    for dose, time, n_cells in design:
        n_cells = int(n_cells)
        if n_cells <= 0:
            continue
        lam = np.array([lambda_surface(cp, params.u_of(k), dose, time) for k, cp in enumerate(params.components)])
        comp = rng.choice(params.K, size=n_cells, p=w)
        counts.append(rng.poisson(lam[comp]))
        doses.append(np.full(n_cells, float(dose)))
        times.append(np.full(n_cells, float(time)))
    if not counts:
        raise DomainError("design contains no cells")
    label = provenance if provenance is not None else f"synthetic(seed={seed})"
    return CalibrationDataset(np.concatenate(doses), np.concatenate(times), np.concatenate(counts),
                              provenance=label, max_count=max_count)
