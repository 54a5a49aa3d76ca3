"""Posterior mode search, Laplace approximation and AIC model selection."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import CalibrationError, DomainError, NotPositiveDefiniteError, NumericError, OptimizationError
from .model import (
    CalibrationDataset,
    MixtureParams,
    Parametrization,
    PriorSpec,
    free_log_posterior,
    log_likelihood,
    log_posterior_kernel,
)
from .specfun import invert_spd

log = logging.getLogger(__name__)

# keeps every weight representable while L-BFGS-B explores
ALR_LIMIT = 30.0
RESTARTS = 5
WEIGHT_FLOOR = 1e-4


@dataclass
class FitConfig:
    starts: int = 32
    max_iterations: int = 3000
    gtol: float = 1e-6
    ftol: float = 1e-9
    hessian_step: float = 1e-4
    seed: int = 0
    threads: int = 1
    init_alr: tuple = (-2.0, 2.0)
    polish_iterations: int = 30

    def __post_init__(self):
        if self.starts < 1:
            raise DomainError("starts must be at least 1")
        if not (self.gtol > 0 and self.ftol > 0 and self.hessian_step > 0):
            raise DomainError("tolerances must be positive")


@dataclass
class StartOutcome:
    index: int
    objective: float
    grad_norm: float
    iterations: int
    success: bool
    message: str


@dataclass
class ModeResult:
    """Posterior mode found by :func:`fit_map`.

    ``objective`` is the free-coordinate log density the optimizer maximised;
    ``log_posterior`` is the unnormalised kernel in the original parameters.
    """

    params: MixtureParams
    x: np.ndarray
    parametrization: Parametrization
    log_posterior: float
    log_likelihood: float
    objective: float
    grad_norm: float
    converged: bool
    starts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


@dataclass
class CalibrationResult:
    params: MixtureParams
    covariance: np.ndarray
    parameter_order: list
    free_mode: np.ndarray
    log_posterior_at_mode: float
    log_likelihood_at_mode: float
    aic: float
    K: int
    shared_u: bool
    data_digest: str
    warnings: list = field(default_factory=list)

    @property
    def p(self):
        return len(self.parameter_order)

    @property
    def parametrization(self):
        return Parametrization(self.K, self.shared_u)

    def unique_covariance_entries(self):
        """Upper triangle (row-major), ``p(p+1)/2`` values."""
        iu = np.triu_indices(self.p)
        return self.covariance[iu]


def _projected_gradient(x, g, box):
    pg = np.array(g, dtype=float)
    for i, (lo, hi) in enumerate(box):
        if lo is not None and x[i] <= lo + 1e-12 and pg[i] < 0:
            pg[i] = 0.0
        if hi is not None and x[i] >= hi - 1e-12 and pg[i] > 0:
            pg[i] = 0.0
    return pg


def initial_points(param: Parametrization, spec: PriorSpec, config: FitConfig):
    """Latin-hypercube starts over the transformed prior boxes."""
    box = param.box(spec, alr_range=tuple(config.init_alr))
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    sampler = qmc.LatinHypercube(d=param.size, seed=np.random.default_rng(config.seed))
    return qmc.scale(sampler.random(config.starts), lo, hi)


def fd_hessian(fun, x, rel_step=1e-4, grad=None):
    """Central finite-difference Hessian of ``fun`` at ``x``.

    With ``grad`` the columns are central differences of the gradient;
    otherwise second differences of ``fun``. Returns ``(H_sym, H_raw)``.
    Steps are ``rel_step * max(|x_i|, 1)``.
    """
    x = np.asarray(x, dtype=float)
    p = x.size
    h = rel_step * np.maximum(np.abs(x), 1.0)
    H = np.empty((p, p))
    if grad is not None:
        for j in range(p):
            e = np.zeros(p)
            e[j] = h[j]
            H[:, j] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2.0 * h[j])
    else:
        f0 = fun(x)
        for i in range(p):
            ei = np.zeros(p)
            ei[i] = h[i]
            H[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / (h[i] * h[i])
            for j in range(i + 1, p):
                ej = np.zeros(p)
                ej[j] = h[j]
                val = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)) / (4.0 * h[i] * h[j])
                H[i, j] = H[j, i] = val
    if not np.all(np.isfinite(H)):
        i, j = np.argwhere(~np.isfinite(H))[0]
        raise NumericError(f"non-finite Hessian entry at coordinates ({i}, {j})")
    return 0.5 * (H + H.T), H


def _objective(data, spec, param, enforce_bounds=True):
    def value_and_grad(x):
        if not enforce_bounds:
            return _unboxed(x, data, spec, param)
        return free_log_posterior(x, data, spec, param)

    return value_and_grad


def _unboxed(x, data, spec, param):
    # Box checks would make steps that poke past a bound return -inf; the
    # surface itself is smooth there.
    wide = PriorSpec(spec.K, bounds={"a": (1e-300, 1e300), "c": (1e-300, 1e300), "u": (-1e300, 1e300),
                                     "v": (-1e300, 1e300)}, use_perks=spec.use_perks)
    return free_log_posterior(x, data, wide, param)


def _run_start(index, x0, fun, box, config):
    def neg(x):
        val, g = fun(x)
        if not np.isfinite(val):
            return 1e300, np.zeros_like(x)
        return -val, -g

    # ftol is an absolute change in the objective; scipy's is relative to |f|
    x, nit, message = np.asarray(x0, dtype=float), 0, ""
    for _ in range(RESTARTS):
        f0 = abs(neg(x)[0])
        try:
            res = minimize(
                neg, x, jac=True, method="L-BFGS-B", bounds=box,
                options={"maxiter": config.max_iterations, "ftol": config.ftol / max(f0, 1.0),
                         "gtol": config.gtol, "maxcor": 20},
            )
        except (FloatingPointError, ValueError, ArithmeticError) as exc:
            return None, StartOutcome(index, -np.inf, np.inf, nit, False, f"{type(exc).__name__}: {exc}")
        nit += int(res.nit)
        message = str(res.message)
        moved = np.abs(res.x - x).max()
        x = res.x
        val, g = fun(x)
        if not np.isfinite(val):
            break
        pg = np.abs(_projected_gradient(x, g, box)).max()
        # restart with fresh curvature memory while the gradient is still large
        if pg < config.gtol or moved == 0.0 or nit >= config.max_iterations:
            break
    val, g = fun(x)
    ok = bool(np.isfinite(val))
    pg = float(np.abs(_projected_gradient(x, g, box)).max()) if ok else np.inf
    return x, StartOutcome(index, float(val), pg, nit, ok, message)


def _polish(x, fun, box, config, hess_fun):
    """Damped Newton steps on the free coordinates not pinned at a bound."""
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in box])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in box])
    val, g = fun(x)
    for _ in range(config.polish_iterations):
        pg = _projected_gradient(x, g, box)
        if np.abs(pg).max() < config.gtol:
            break
        active = pg != 0
        try:
            H, _ = fd_hessian(None, x, config.hessian_step, grad=lambda z: -hess_fun(z)[1])
        except NumericError:
            break
        Ha = H[np.ix_(active, active)]
        evals, evecs = np.linalg.eigh(Ha)
        # saddle-free Newton: |eigenvalues| turn negative curvature into descent
        evals = np.maximum(np.abs(evals), 1e-8 * max(abs(evals).max(), 1.0))
        step_a = evecs @ ((evecs.T @ pg[active]) / evals)
        step = np.zeros_like(x)
        step[active] = step_a
        improved = False
        for damp in (1.0, 0.5, 0.25, 0.1, 0.01):
            cand = np.clip(x + damp * step, lo, hi)
            cval, cg = fun(cand)
            if np.isfinite(cval) and cval >= val - 1e-10 * abs(val):
                x, val, g = cand, cval, cg
                improved = True
                break
        if not improved:
            break
    return x, val, g


def fit_map(data: CalibrationDataset, K: int, shared_u=True, config: FitConfig | None = None,
            spec: PriorSpec | None = None) -> ModeResult:
    """Maximise the posterior over all multi-start runs.

    Each start runs L-BFGS-B with the analytic gradient in free coordinates;
    the best one is polished with Newton steps. Components come back sorted
    by ascending ``a``.
    """
    config = config or FitConfig()
    spec = spec or PriorSpec(K)
    if spec.K != K:
        raise DomainError(f"prior spec is for K={spec.K}, requested K={K}")
    param = Parametrization(K, shared_u)
    box = param.box(spec, alr_range=(-ALR_LIMIT, ALR_LIMIT))
    fun = _objective(data, spec, param)
    starts = initial_points(param, spec, config)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            runs = list(pool.map(lambda ix: _run_start(ix[0], ix[1], fun, box, config), enumerate(starts)))
    else:
        runs = [_run_start(i, x0, fun, box, config) for i, x0 in enumerate(starts)]

    outcomes = [o for _, o in runs]
    good = [(x, o) for x, o in runs if x is not None and np.isfinite(o.objective)]
    if not good:
        raise OptimizationError(f"all {config.starts} starts failed", outcomes)
    best_x, best = max(good, key=lambda xo: (xo[1].objective, -xo[1].index))
    x, val, g = _polish(best_x, fun, box, config, _objective(data, spec, param, enforce_bounds=False))
    pg = _projected_gradient(x, g, box)
    grad_norm = float(np.abs(pg).max())

    params = param.to_params(x).canonical()
    x = param.to_free(params)
    warnings = []
    converged = grad_norm < config.gtol
    if not converged:
        warnings.append(f"gradient norm {grad_norm:.3e} above tolerance {config.gtol:.1e}")
    if min(params.weights) < WEIGHT_FLOOR:
        warnings.append(f"component weight below {WEIGHT_FLOOR:g}; K={K} may exceed what the data identify")
    warnings.extend(_bound_warnings(x, param, param.box(spec)))
    for w in warnings:
        log.warning("K=%d shared_u=%s: %s", K, shared_u, w)
    return ModeResult(
        params=params,
        x=x,
        parametrization=param,
        log_posterior=log_posterior_kernel(params, data, spec),
        log_likelihood=log_likelihood(params, data),
        objective=float(val),
        grad_norm=grad_norm,
        converged=converged,
        starts=outcomes,
        warnings=warnings,
    )


def _bound_warnings(x, param, box):
    out = []
    for name, xi, (lo, hi) in zip(param.names, x, box):
        if lo is None:
            continue
        span = hi - lo
        if xi <= lo + 1e-6 * span or xi >= hi - 1e-6 * span:
            out.append(f"{name} at prior box bound ({xi:.6g})")
    return out


def hessian_at_mode(data: CalibrationDataset | None, mode, spec: PriorSpec | None = None,
                    config: FitConfig | None = None, *, objective=None, return_raw=False):
    """Finite-difference Hessian of the negative log posterior at the mode.

    ``objective`` replaces the model posterior with any callable returning a
    log density (or ``(value, gradient)`` when ``objective.has_gradient``).
    """
    config = config or FitConfig()
    x = np.asarray(mode.x if isinstance(mode, ModeResult) else mode, dtype=float)
    if objective is not None:
        if getattr(objective, "has_gradient", False):
            Hs, H = fd_hessian(None, x, config.hessian_step, grad=lambda z: -np.asarray(objective(z)[1]))
        else:
            Hs, H = fd_hessian(lambda z: -objective(z), x, config.hessian_step)
    else:
        param = mode.parametrization
        spec = spec or PriorSpec(param.K)
        fun = _objective(data, spec, param, enforce_bounds=False)
        Hs, H = fd_hessian(None, x, config.hessian_step, grad=lambda z: -fun(z)[1])
    return (Hs, H) if return_raw else Hs


def laplace_covariance(hessian):
    """Inverse Hessian; raises :class:`CalibrationError` when it is not positive definite."""
    try:
        return invert_spd(hessian)
    except NotPositiveDefiniteError as exc:
        raise CalibrationError(
            f"Hessian at the reported mode is not positive definite (smallest eigenvalue "
            f"{exc.min_eigenvalue:.3e}); the mode search probably failed, re-run with more starts"
        ) from exc


def aic(log_likelihood_at_mode: float, p: int) -> float:
    """Akaike information criterion ``2p - 2 log L``."""
    if p < 1:
        raise DomainError("p must be at least 1")
    return 2.0 * p - 2.0 * float(log_likelihood_at_mode)


def laplace_approx(data: CalibrationDataset, mode: ModeResult, spec: PriorSpec | None = None,
                   config: FitConfig | None = None) -> CalibrationResult:
    spec = spec or PriorSpec(mode.params.K)
    H = hessian_at_mode(data, mode, spec, config)
    cov = laplace_covariance(H)
    param = mode.parametrization
    return CalibrationResult(
        params=mode.params,
        covariance=cov,
        parameter_order=list(param.names),
        free_mode=np.array(mode.x),
        log_posterior_at_mode=float(mode.log_posterior),
        log_likelihood_at_mode=float(mode.log_likelihood),
        aic=aic(mode.log_likelihood, param.size),
        K=param.K,
        shared_u=param.shared_u,
        data_digest=data.digest(),
        warnings=list(mode.warnings),
    )


def calibrate(data: CalibrationDataset, K: int, shared_u=True, config: FitConfig | None = None,
              bounds: dict | None = None) -> CalibrationResult:
    """Single-model calibration: :func:`fit_map` then :func:`laplace_approx`."""
    spec = PriorSpec(K, bounds=dict(bounds or {}))
    mode = fit_map(data, K, shared_u, config, spec)
    return laplace_approx(data, mode, spec, config)


@dataclass
class SelectionRow:
    K: int
    shared_u: bool
    p: int
    log_likelihood: float
    aic: float
    status: str
    result: CalibrationResult | None = None


@dataclass
class ModelSelection:
    best: CalibrationResult
    table: list

    def format_table(self):
        lines = [f"{'K':>3} {'shared_u':>8} {'p':>3} {'logL':>14} {'AIC':>14}  status"]
        for r in self.table:
            mark = " *" if r.result is self.best else ""
            lines.append(f"{r.K:>3} {str(r.shared_u):>8} {r.p:>3} {r.log_likelihood:>14.4f} {r.aic:>14.4f}  {r.status}{mark}")
        return "\n".join(lines)


def select_model(data: CalibrationDataset, Ks, config: FitConfig | None = None, bounds: dict | None = None,
                 shared_u_variants=(True,)) -> ModelSelection:
    """Fit every ``(K, shared_u)`` candidate and keep the lowest AIC.

    A failing candidate is recorded in the table and the sweep continues.
    Ties go to smaller ``p``, then smaller ``K``.
    """
    Ks = list(Ks)
    if not Ks:
        raise DomainError("no candidate K given")
    rows = []
    for K in Ks:
        for shared in shared_u_variants:
            if K == 1 and not shared and True in shared_u_variants:
                continue  # identical to the shared-u model
            p = Parametrization(K, shared).size
            try:
                res = calibrate(data, K, shared, config, bounds)
            except (OptimizationError, CalibrationError, NumericError) as exc:
                log.warning("K=%d shared_u=%s failed: %s", K, shared, exc)
                rows.append(SelectionRow(K, shared, p, np.nan, np.nan, f"failed: {exc}"))
                continue
            status = "ok" if not res.warnings else "ok (" + "; ".join(res.warnings) + ")"
            rows.append(SelectionRow(K, shared, p, res.log_likelihood_at_mode, res.aic, status, res))
    usable = [r for r in rows if r.result is not None]
    if not usable:
        raise OptimizationError("every candidate model failed", [r.status for r in rows])
    best = min(usable, key=lambda r: (r.aic, r.p, r.K))
    return ModelSelection(best.result, rows)
