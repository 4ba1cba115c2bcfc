"""Maximum-likelihood estimation: transforms, optimizer driver, SEs, BIC.

Variances are optimized as log-variances and correlations through atanh, so
the optimizer works on an unconstrained vector theta. The objective is the
per-slot average exact-diffuse negative loglik evaluated by the compiled
kernel (averaging keeps the tolerances meaningful across sample sizes);
parameter points where the filter degenerates get a large finite penalty.

The driver is a Nelder-Mead start (200 * dim evaluation cap) followed by
BFGS polish rounds using central-difference gradients with step
1e-5 * (1 + |theta|). A fit is declared converged when the gradient
infinity-norm is below 1e-4 and the last polish round improved the loglik
by less than 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kernels
from .core import MAX_SLOTS, PanelDataset
from .kalman import CompiledModel, compile_model
from .modelspec import ModelSpec, ParameterLayout, build_layout

__all__ = [
    "InitializationError",
    "ParamTransform",
    "FitOptions",
    "FitResult",
    "fit",
    "bic",
    "standard_errors",
    "numerical_hessian",
    "covariance_from_hessian",
    "default_start",
]

_PENALTY = 1e12
_GRAD_STEP = 1e-5
_HESS_STEP = 1e-4
_GRAD_TOL = 1e-4
_IMPROVE_TOL = 1e-8


class InitializationError(RuntimeError):
    """The objective is not finite at the starting point."""


class _BudgetExhausted(Exception):
    pass


# ---------------------------------------------------------------------------
# parameter transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamTransform:
    """Bijection between unconstrained theta and natural-scale params.

    Variances map through exp/log, correlations through tanh/atanh.
    """

    roles: tuple

    @classmethod
    def for_layout(cls, layout: ParameterLayout) -> "ParamTransform":
        return cls(roles=tuple(p.role for p in layout.params))

    @property
    def is_corr(self) -> np.ndarray:
        return np.array([r == "rho" for r in self.roles])

    def to_natural(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.empty_like(theta)
        corr = self.is_corr
        with np.errstate(over="ignore"):
            out[~corr] = np.exp(theta[~corr])
        out[corr] = np.tanh(theta[corr])
        return out

    def to_unconstrained(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        out = np.empty_like(params)
        corr = self.is_corr
        out[~corr] = np.log(params[~corr])
        out[corr] = np.arctanh(params[corr])
        return out

    def natural_jacobian_diag(self, theta) -> np.ndarray:
        """d(natural)/d(theta), used by the delta method."""
        theta = np.asarray(theta, dtype=float)
        out = np.empty_like(theta)
        corr = self.is_corr
        out[~corr] = np.exp(theta[~corr])
        out[corr] = 1.0 - np.tanh(theta[corr]) ** 2
        return out


# ---------------------------------------------------------------------------
# objective plumbing
# ---------------------------------------------------------------------------


class _Objective:
    """Negative loglik over theta with eval counting and best tracking.

    With scale < 1 the objective is the per-slot average negative loglik,
    which keeps the optimizer tolerances meaningful across sample sizes.
    The penalty for inadmissible points is returned unscaled.
    """

    def __init__(
        self, cm: CompiledModel, transform: ParamTransform, budget=None, scale=1.0
    ):
        self.cm = cm
        self.transform = transform
        self.budget = budget
        self.scale = float(scale)
        self.n_evals = 0
        self.best_f = np.inf
        self.best_x = None

    def __call__(self, theta) -> float:
        if self.budget is not None and self.n_evals >= self.budget:
            raise _BudgetExhausted()
        self.n_evals += 1
        params = self.transform.to_natural(theta)
        if not np.all(np.isfinite(params)):
            return _PENALTY
        ll = _kernels.loglik_from_compiled(self.cm, params)
        f = -ll * self.scale if np.isfinite(ll) else _PENALTY
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(theta, dtype=float)
        return f


def _central_gradient(f, x, step_scale=_GRAD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step_scale * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def numerical_hessian(f, x, step_scale=_HESS_STEP) -> np.ndarray:
    """Central-difference Hessian with per-coordinate step 1e-4*(1+|x_i|)."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step_scale * (1.0 + np.abs(x))
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / (h[i] * h[i])
    for i in range(d):
        for j in range(i + 1, d):
            xpp = x.copy()
            xpm = x.copy()
            xmp = x.copy()
            xmm = x.copy()
            xpp[i] += h[i]
            xpp[j] += h[j]
            xpm[i] += h[i]
            xpm[j] -= h[j]
            xmp[i] -= h[i]
            xmp[j] += h[j]
            xmm[i] -= h[i]
            xmm[j] -= h[j]
            H[i, j] = H[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (
                4.0 * h[i] * h[j]
            )
    return H


def covariance_from_hessian(H) -> tuple:
    """Invert an observed-information matrix, isolating flat directions.

    Returns (cov, ok) where ok marks coordinates whose variance is usable.
    Eigendirections with non-positive (or numerically zero) eigenvalues are
    dropped; coordinates loading on them are marked not-ok, so a duplicated
    parameter poisons only itself rather than the whole vector.
    """
    H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    d = H.shape[0]
    try:
        vals, vecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError:
        return np.full((d, d), np.nan), np.zeros(d, dtype=bool)
    scale = np.max(np.abs(vals)) if np.max(np.abs(vals)) > 0 else 1.0
    good = vals > scale * 1e-10
    cov = (vecs[:, good] / vals[good]) @ vecs[:, good].T
    flat = ~good
    ok = np.ones(d, dtype=bool)
    if np.any(flat):
        loading = np.max(np.abs(vecs[:, flat]), axis=1)
        ok &= loading < 1e-8
    ok &= np.diag(cov) > 0
    return cov, ok


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------


def default_start(layout: ParameterLayout, cm: CompiledModel) -> np.ndarray:
    """Scale-aware starting values on the natural scale.

    Measurement variance: half the sample variance of within-row slot
    differences of the series (two slots of one row differ only through
    measurement noise); falls back to half the total sample variance.
    Trend variance: total sample variance divided by the observed time
    span. Correlations start at zero.
    """
    spec = cm.spec
    eps_start = {}
    eta_start = {}
    for j, sr in enumerate(spec.series):
        cols = slice(j * MAX_SLOTS, (j + 1) * MAX_SLOTS)
        block = cm.values[:, cols]
        vals = block[np.isfinite(block)]
        total_var = float(np.var(vals, ddof=1)) if vals.size >= 2 else 1.0
        diffs = []
        for nu in range(cm.n):
            row = block[nu]
            row = row[np.isfinite(row)]
            for i in range(row.size):
                for i2 in range(i + 1, row.size):
                    diffs.append(row[i] - row[i2])
        if len(diffs) >= 2:
            eps = 0.5 * float(np.var(diffs, ddof=1))
        else:
            eps = 0.5 * total_var
        obs_rows = np.isfinite(block).any(axis=1)
        if obs_rows.any():
            span = float(cm.stamps[obs_rows][-1] - cm.stamps[obs_rows][0])
        else:
            span = 1.0
        eta = total_var / span if span > 0 else total_var
        eps_start[sr] = eps if math.isfinite(eps) and eps > 0 else 1e-4
        eta_start[sr] = eta if math.isfinite(eta) and eta > 0 else 1e-4

    start = np.empty(layout.n_params)
    for i, info in enumerate(layout.params):
        if info.role == "sigma_eps2":
            start[i] = eps_start[info.series]
        elif info.role == "sigma_eta2":
            start[i] = eta_start[info.series]
        else:
            start[i] = 0.0
    return start


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    """Estimates on the natural scale plus fit diagnostics."""

    spec: ModelSpec
    param_names: tuple
    param_groups: tuple
    params_hat: np.ndarray
    std_errors: np.ndarray
    loglik: float
    bic: float
    n_obs: int
    n_params: int
    converged: bool
    iterations: int
    theta_hat: np.ndarray | None = None
    layout: ParameterLayout | None = None
    n_evals: int = 0
    notes: tuple = ()

    def to_json_dict(self) -> dict:
        params = []
        for name, group, est, se in zip(
            self.param_names, self.param_groups, self.params_hat, self.std_errors
        ):
            params.append(
                {
                    "name": name,
                    "group": group,
                    "estimate": float(est),
                    "se": None if not np.isfinite(se) else float(se),
                }
            )
        return {
            "model": self.spec.to_json(),
            "params": params,
            "loglik": float(self.loglik),
            "bic": float(self.bic),
            "n_obs": int(self.n_obs),
            "n_params": int(self.n_params),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FitResult":
        spec = ModelSpec.from_json(d["model"])
        names = tuple(p["name"] for p in d["params"])
        groups = tuple(p["group"] for p in d["params"])
        est = np.array([p["estimate"] for p in d["params"]], dtype=float)
        se = np.array(
            [np.nan if p.get("se") is None else p["se"] for p in d["params"]],
            dtype=float,
        )
        return cls(
            spec=spec,
            param_names=names,
            param_groups=groups,
            params_hat=est,
            std_errors=se,
            loglik=float(d["loglik"]),
            bic=float(d["bic"]),
            n_obs=int(d["n_obs"]),
            n_params=int(d["n_params"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
        )


@dataclass
class FitOptions:
    """Knobs for fit(); defaults reproduce the standard two-stage driver."""

    n_starts: int = 1
    seed: int = 0
    start: object = None  # natural-scale start vector, or None for defaults
    eval_budget: int | None = None
    max_polish_rounds: int = 6
    compute_se: bool = True


def bic(loglik: float, n_params: int, n_obs: int) -> float:
    """Bayes information criterion, -2*loglik + n_params*ln(n_obs)."""
    if n_obs < 1:
        raise ValueError(f"n_obs must be >= 1, got {n_obs}")
    return -2.0 * float(loglik) + n_params * math.log(n_obs)


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------


def _polish(obj, theta, f_start, max_rounds) -> tuple:
    """BFGS rounds until the convergence criteria hold; returns
    (theta, f, converged, iterations)."""
    grad = lambda x: _central_gradient(obj, x)  # noqa: E731
    x_best = np.asarray(theta, dtype=float)
    f_best = f_start
    prev = f_start
    iterations = 0
    converged = False
    for _ in range(max_rounds):
        res = optimize.minimize(
            obj,
            x_best,
            jac=grad,
            method="BFGS",
            options={"gtol": _GRAD_TOL, "maxiter": 100 * max(1, x_best.size)},
        )
        iterations += int(res.nit)
        if res.fun < f_best:
            f_best = float(res.fun)
            x_best = np.asarray(res.x, dtype=float)
        improvement = prev - f_best
        gnorm = float(np.max(np.abs(grad(x_best))))
        if gnorm < _GRAD_TOL and improvement < _IMPROVE_TOL:
            converged = True
            break
        if improvement <= 0.0 and gnorm >= _GRAD_TOL:
            # stalled short of the gradient criterion
            break
        prev = f_best
    return x_best, f_best, converged, iterations


def fit(
    spec: ModelSpec,
    data: PanelDataset,
    options: FitOptions | None = None,
    layout: ParameterLayout | None = None,
    compiled: CompiledModel | None = None,
) -> FitResult:
    """Maximize the exact-diffuse loglik over the layout's parameters.

    Deterministic given (data, spec, options.seed, options.start). On an
    optimizer stall the best point found is returned with converged False;
    a non-finite loglik at the starting point raises InitializationError.
    """
    options = options or FitOptions()
    if layout is None:
        layout = build_layout(spec, data)
    if layout.n_params == 0:
        raise InitializationError("the layout has no parameters to estimate")
    cm = compiled if compiled is not None else compile_model(spec, layout, data)
    transform = ParamTransform.for_layout(layout)

    if options.start is not None:
        start_nat = layout.validate_params(options.start)
    else:
        start_nat = default_start(layout, cm)
    theta0 = transform.to_unconstrained(start_nat)

    n_scale = max(1, cm.n_obs_slots)
    obj = _Objective(cm, transform, budget=options.eval_budget, scale=1.0 / n_scale)
    dim = layout.n_params
    try:
        f0 = obj(theta0)
    except _BudgetExhausted:
        raise InitializationError("evaluation budget exhausted before the first point")
    if f0 >= _PENALTY:
        raise InitializationError(
            "loglik is not finite at the starting point; check the data and spec"
        )

    rng = np.random.default_rng(options.seed)
    starts = [theta0]
    for _ in range(max(0, options.n_starts - 1)):
        starts.append(theta0 + rng.normal(0.0, 0.5, size=dim))

    best_x = theta0
    best_f = f0
    best_converged = False
    iterations = 0
    budget_hit = False
    for th in starts:
        try:
            nm = optimize.minimize(
                obj,
                th,
                method="Nelder-Mead",
                options={
                    "maxfev": 200 * dim,
                    "xatol": 1e-6,
                    "fatol": 1e-9,
                    "adaptive": dim > 4,
                },
            )
            iterations += int(nm.nit)
            x, f = np.asarray(nm.x, dtype=float), float(nm.fun)
            x, f, conv, nit = _polish(obj, x, f, options.max_polish_rounds)
            iterations += nit
        except _BudgetExhausted:
            budget_hit = True
            if obj.best_x is not None:
                x, f = obj.best_x, obj.best_f
            else:
                x, f = th, _PENALTY
            conv = False
        if f < best_f:
            best_f = f
            best_x = x
            best_converged = conv
        elif f == best_f and not best_converged:
            best_converged = conv
        if budget_hit:
            break

    theta_hat = np.asarray(best_x, dtype=float)
    params_hat = transform.to_natural(theta_hat)
    loglik = -best_f * n_scale

    notes = []
    if budget_hit:
        notes.append("evaluation budget exhausted; returning best point seen")
        best_converged = False

    se_nat = np.full(dim, np.nan)
    if options.compute_se and not budget_hit:
        free_obj = _Objective(cm, transform, budget=None)
        H = numerical_hessian(free_obj, theta_hat)
        cov, ok = covariance_from_hessian(H)
        se_theta = np.full(dim, np.nan)
        diag = np.diag(cov)
        se_theta[ok] = np.sqrt(diag[ok])
        if not ok.all():
            notes.append("singular Hessian: some standard errors are missing")
        se_nat = transform.natural_jacobian_diag(theta_hat) * se_theta
        se_nat = np.abs(se_nat)

    n_obs = cm.n_obs_slots
    return FitResult(
        spec=spec,
        param_names=tuple(layout.names()),
        param_groups=tuple(p.group for p in layout.params),
        params_hat=params_hat,
        std_errors=se_nat,
        loglik=float(loglik),
        bic=bic(loglik, dim, n_obs),
        n_obs=n_obs,
        n_params=dim,
        converged=bool(best_converged),
        iterations=int(iterations),
        theta_hat=theta_hat,
        layout=layout,
        n_evals=obj.n_evals,
        notes=tuple(notes),
    )


def standard_errors(
    theta_hat,
    spec: ModelSpec,
    data: PanelDataset,
    layout: ParameterLayout | None = None,
) -> np.ndarray:
    """Natural-scale standard errors at an unconstrained optimum theta_hat.

    Central-difference Hessian of -loglik (step 1e-4*(1+|theta|)),
    inverted, then delta-method mapped: SE(sigma^2) = sigma^2 * SE(theta),
    SE(rho) = (1 - rho^2) * SE(theta). Coordinates in flat directions of a
    singular Hessian come back as NaN.
    """
    if layout is None:
        layout = build_layout(spec, data)
    cm = compile_model(spec, layout, data)
    transform = ParamTransform.for_layout(layout)
    obj = _Objective(cm, transform, budget=None)
    theta_hat = np.asarray(theta_hat, dtype=float)
    H = numerical_hessian(obj, theta_hat)
    cov, ok = covariance_from_hessian(H)
    se_theta = np.full(theta_hat.size, np.nan)
    diag = np.diag(cov)
    se_theta[ok] = np.sqrt(diag[ok])
    return np.abs(transform.natural_jacobian_diag(theta_hat) * se_theta)
