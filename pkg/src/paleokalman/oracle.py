"""Simulation and brute-force small-instance answers for testing.

simulate() draws datasets from any model variant by exact discretization:
trend increments are N(0, Q(window)) with the min-overlap cross-covariance,
measurement noise is per-slot N(0, H). exact_gaussian() computes, for a
proper-prior instance, the joint multivariate-normal log-likelihood and the
predicted/filtered/smoothed conditionals directly from the stacked-state
covariance, with no Kalman recursion involved. diffuse_exact_gaussian() does
the same for the diffuse-prior limit via generalized least squares on the
initial-state loadings.

These routines are the measuring stick for the filter/smoother; they favor
clarity over speed and refuse instances with more than 64 observed values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    MISSING,
    PanelDataset,
    SERIES_NAMES,
    collate_rows,
)
from .modelspec import (
    ModelSpec,
    ParameterLayout,
    POOLED_KEY,
    booking_schedule,
    build_layout,
    trend_transition_matrix,
)

__all__ = [
    "simulate",
    "exact_gaussian",
    "diffuse_exact_gaussian",
    "ExactGaussianResult",
    "DiffuseExactResult",
]

_SIZE_CAP = 64


# ---------------------------------------------------------------------------
# shared plumbing: the linear-Gaussian chain implied by (spec, params, data)
# ---------------------------------------------------------------------------


def _chain_matrices(spec, layout, params, data):
    """Per-row transition matrices A_nu and disturbance covariances W_nu
    (both s x s) under the freeze-and-book missing-row semantics. Row 0 has
    A = I, W = 0 (the initial state covers it)."""
    m = spec.order_m
    k = spec.n_series
    s = spec.state_dim
    n = data.n_rows
    T_m = trend_transition_matrix(m)

    dts = np.array([row.dt for row in data.rows])
    observed = np.array(
        [[row.series_observed(sr) for sr in spec.series] for row in data.rows]
    )
    apply_, window = booking_schedule(dts, observed)

    A = np.zeros((n, s, s))
    W = np.zeros((n, s, s))
    for nu in range(n):
        row = data.rows[nu]
        regime = row.climate_state
        tkey = regime if spec.trans_grouping == "by-climate-state" else POOLED_KEY
        sig2 = np.zeros(k)
        for j, sr in enumerate(spec.series):
            block = slice(j * m, (j + 1) * m)
            A[nu][block, block] = T_m if apply_[nu, j] else np.eye(m)
            if apply_[nu, j]:
                sig2[j] = params[layout.trans_index[(sr, tkey)]]
                W[nu, j * m + m - 1, j * m + m - 1] = sig2[j] * window[nu, j]
        if k == 2 and apply_[nu, 0] and apply_[nu, 1]:
            ckey = regime if spec.corr_grouping == "by-climate-state" else POOLED_KEY
            idx = layout.corr_index.get(ckey)
            if idx is not None:
                cross = (
                    params[idx]
                    * np.sqrt(sig2[0] * sig2[1])
                    * min(window[nu, 0], window[nu, 1])
                )
                W[nu, m - 1, 2 * m - 1] = cross
                W[nu, 2 * m - 1, m - 1] = cross
    return A, W


def _observation_stack(spec, layout, params, data):
    """Flatten non-missing slots: selector matrix onto the stacked states,
    the value vector, and the measurement variance vector."""
    m = spec.order_m
    s = spec.state_dim
    n = data.n_rows
    rows_of = []
    z_cols = []
    y = []
    h = []
    for nu, row in enumerate(data.rows):
        for j, sr in enumerate(spec.series):
            for slot in row.slots(sr):
                if slot.missing:
                    continue
                rows_of.append(nu)
                z_cols.append(nu * s + j * m)
                y.append(slot.value)
                if spec.meas_grouping == "pooled":
                    key = POOLED_KEY
                elif spec.meas_grouping == "by-source":
                    key = slot.source_id
                else:
                    key = slot.species_id
                h.append(params[layout.meas_index[(sr, key)]])
    Zbig = np.zeros((len(y), n * s))
    for i, c in enumerate(z_cols):
        Zbig[i, c] = 1.0
    return np.array(rows_of), Zbig, np.array(y), np.array(h)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix, tolerant of zero/degenerate
    eigenvalues (used for drawing correlated increments, including the
    |rho| = 1 boundary)."""
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals) @ vecs.T


def _logpdf(y, mean, cov):
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("observation covariance not positive definite")
    resid = y - mean
    return -0.5 * (len(y) * np.log(2 * np.pi) + logdet + resid @ np.linalg.solve(cov, resid))


@dataclass
class ExactGaussianResult:
    loglik: float
    predicted_means: np.ndarray  # (n, s)
    predicted_covs: np.ndarray  # (n, s, s)
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    smoothed_means: np.ndarray
    smoothed_covs: np.ndarray


def exact_gaussian(
    spec: ModelSpec,
    params,
    data: PanelDataset,
    init_mean,
    init_cov,
    layout: ParameterLayout | None = None,
) -> ExactGaussianResult:
    """Exact proper-prior answers by joint-Gaussian conditioning.

    The stacked state vector (all rows) is jointly Gaussian; observations
    load on it through unit selectors. The log-likelihood is the joint
    density of the observed values, and predicted/filtered/smoothed moments
    at row nu come from conditioning the row-nu state block on the values of
    rows < nu, <= nu, and all rows respectively.
    """
    layout = layout or build_layout(spec, data)
    params = layout.validate_params(params)
    s = spec.state_dim
    n = data.n_rows

    A, W = _chain_matrices(spec, layout, params, data)
    rows_of, Zbig, y, h = _observation_stack(spec, layout, params, data)
    if len(y) > _SIZE_CAP:
        raise ValueError(
            f"exact_gaussian is capped at {_SIZE_CAP} observed values, got {len(y)}"
        )

    # joint moments of the stacked states
    mean_x = np.zeros(n * s)
    cov_x = np.zeros((n * s, n * s))
    a = np.asarray(init_mean, dtype=float).reshape(s)
    mean_x[0:s] = a
    cov_x[0:s, 0:s] = np.asarray(init_cov, dtype=float).reshape(s, s)
    for nu in range(1, n):
        cur = slice(nu * s, (nu + 1) * s)
        prev = slice((nu - 1) * s, nu * s)
        mean_x[cur] = A[nu] @ mean_x[prev]
        cov_x[cur, cur] = A[nu] @ cov_x[prev, prev] @ A[nu].T + W[nu]
        for mu in range(nu):
            old = slice(mu * s, (mu + 1) * s)
            blk = A[nu] @ cov_x[prev, old]
            cov_x[cur, old] = blk
            cov_x[old, cur] = blk.T

    mean_y = Zbig @ mean_x
    cov_xy = cov_x @ Zbig.T
    cov_y = Zbig @ cov_xy + np.diag(h)

    loglik = _logpdf(y, mean_y, cov_y)

    def condition(state_slice, obs_mask):
        mu_x = mean_x[state_slice]
        if not np.any(obs_mask):
            return mu_x, cov_x[state_slice, state_slice]
        Syy = cov_y[np.ix_(obs_mask, obs_mask)]
        Sxy = cov_xy[state_slice, obs_mask]
        gain = np.linalg.solve(Syy, Sxy.T).T
        mean = mu_x + gain @ (y[obs_mask] - mean_y[obs_mask])
        cov = cov_x[state_slice, state_slice] - gain @ Sxy.T
        return mean, 0.5 * (cov + cov.T)

    pred_m = np.zeros((n, s))
    pred_c = np.zeros((n, s, s))
    filt_m = np.zeros((n, s))
    filt_c = np.zeros((n, s, s))
    smo_m = np.zeros((n, s))
    smo_c = np.zeros((n, s, s))
    all_mask = np.ones(len(y), dtype=bool)
    for nu in range(n):
        sl = slice(nu * s, (nu + 1) * s)
        pred_m[nu], pred_c[nu] = condition(sl, rows_of < nu)
        filt_m[nu], filt_c[nu] = condition(sl, rows_of <= nu)
        smo_m[nu], smo_c[nu] = condition(sl, all_mask)

    return ExactGaussianResult(
        loglik=float(loglik),
        predicted_means=pred_m,
        predicted_covs=pred_c,
        filtered_means=filt_m,
        filtered_covs=filt_c,
        smoothed_means=smo_m,
        smoothed_covs=smo_c,
    )


@dataclass
class DiffuseExactResult:
    loglik: float
    smoothed_means: np.ndarray
    smoothed_covs: np.ndarray
    n_diffuse: int


def diffuse_exact_gaussian(
    spec: ModelSpec,
    params,
    data: PanelDataset,
    layout: ParameterLayout | None = None,
) -> DiffuseExactResult:
    """Exact diffuse-prior answers via the GLS limit.

    Write the stacked states as x = D delta + x~ where delta is the initial
    state (diffuse) and x~ the zero-mean disturbance part; observations are
    y = X delta + u with X = Z D and u ~ N(0, Omega). As the prior variance
    kappa -> infinity,

      loglik + (s/2) log kappa  ->
        -0.5 [ n_y log 2pi + log|Omega| + log|X' Omega^-1 X| + RSS_gls ]

    which is the value returned (the same limit the exact-initial filter
    computes, slot for slot). Requires X of full column rank: the data must
    identify every initial-state coordinate.
    """
    layout = layout or build_layout(spec, data)
    params = layout.validate_params(params)
    s = spec.state_dim
    n = data.n_rows

    A, W = _chain_matrices(spec, layout, params, data)
    rows_of, Zbig, y, h = _observation_stack(spec, layout, params, data)
    if len(y) > _SIZE_CAP:
        raise ValueError(
            f"diffuse_exact_gaussian is capped at {_SIZE_CAP} observed values"
        )
    n_y = len(y)
    if n_y < s:
        raise ValueError("not enough observed values to resolve the diffuse prior")

    # loadings of the initial state on every row: D_nu = A_nu ... A_1
    D = np.zeros((n * s, s))
    D[0:s] = np.eye(s)
    for nu in range(1, n):
        D[nu * s:(nu + 1) * s] = A[nu] @ D[(nu - 1) * s: nu * s]

    # zero-mean part: same chain with a zero initial block
    cov_x = np.zeros((n * s, n * s))
    for nu in range(1, n):
        cur = slice(nu * s, (nu + 1) * s)
        prev = slice((nu - 1) * s, nu * s)
        cov_x[cur, cur] = A[nu] @ cov_x[prev, prev] @ A[nu].T + W[nu]
        for mu in range(nu):
            old = slice(mu * s, (mu + 1) * s)
            blk = A[nu] @ cov_x[prev, old]
            cov_x[cur, old] = blk
            cov_x[old, cur] = blk.T

    X = Zbig @ D
    S = cov_x @ Zbig.T
    Omega = Zbig @ S + np.diag(h)

    Oi_X = np.linalg.solve(Omega, X)
    G = X.T @ Oi_X  # information about delta
    sign, logdet_G = np.linalg.slogdet(G)
    if sign <= 0:
        raise np.linalg.LinAlgError(
            "initial state not identified by the observations (X rank deficient)"
        )
    Oi_y = np.linalg.solve(Omega, y)
    delta_hat = np.linalg.solve(G, X.T @ Oi_y)
    resid = y - X @ delta_hat
    rss = resid @ np.linalg.solve(Omega, resid)
    sign_O, logdet_O = np.linalg.slogdet(Omega)
    if sign_O <= 0:
        raise np.linalg.LinAlgError("observation covariance not positive definite")
    loglik = -0.5 * (n_y * np.log(2 * np.pi) + logdet_O + logdet_G + rss)

    # smoothed moments in the same limit
    V_delta = np.linalg.inv(G)
    SOi = np.linalg.solve(Omega, S.T).T  # S Omega^-1
    x_hat = D @ delta_hat + SOi @ resid
    J = D - SOi @ X
    cov_full = cov_x - SOi @ S.T + J @ V_delta @ J.T

    smo_m = x_hat.reshape(n, s)
    smo_c = np.zeros((n, s, s))
    for nu in range(n):
        sl = slice(nu * s, (nu + 1) * s)
        blk = cov_full[sl, sl]
        smo_c[nu] = 0.5 * (blk + blk.T)

    return DiffuseExactResult(
        loglik=float(loglik),
        smoothed_means=smo_m,
        smoothed_covs=smo_c,
        n_diffuse=s,
    )


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate(
    spec: ModelSpec,
    params,
    stamps,
    slots_per_row: int = 1,
    seed: int = 0,
    n_sources: int = 1,
    n_species: int = 1,
    observed=None,
    init_mean=None,
    init_cov=None,
    diffuse_start: bool = False,
) -> PanelDataset:
    """Draw a dataset from the generative model.

    Parameters
    ----------
    spec, params : model variant and natural-scale parameters, in the layout
        order of the dataset being generated (group labels are "src0",
        "src1", ... and "sp0", ... assigned to slots round-robin).
    stamps : strictly increasing time stamps (My, negative-age convention).
    slots_per_row : values per active series at each observed row (<= 4).
    observed : optional (n,) or (n, n_series) bool mask; False rows for a
        series get no values there (the trend still diffuses across the gap,
        booked at the next observed row). Default: all observed.
    init_mean, init_cov : proper prior for the initial state (defaults to
        zeros). diffuse_start=True starts the state at exactly zero, which
        stands in for the diffuse case in a simulation.
    seed : feeds numpy's default 64-bit generator (PCG64).
    """
    stamps = [float(t) for t in stamps]
    n = len(stamps)
    if sorted(set(stamps)) != stamps:
        raise ValueError("stamps must be strictly increasing and unique")
    if not 1 <= slots_per_row <= 4:
        raise ValueError("slots_per_row must be in 1..4")

    k = spec.n_series
    if observed is None:
        observed = np.ones((n, k), dtype=bool)
    else:
        observed = np.asarray(observed, dtype=bool)
        if observed.ndim == 1:
            observed = np.repeat(observed[:, None], k, axis=1)

    # skeleton with placeholder values fixes the registries and the layout
    def records(values=None):
        recs = []
        counter = 0
        for nu in range(n):
            any_here = False
            for j, sr in enumerate(spec.series):
                if not observed[nu, j]:
                    continue
                any_here = True
                for i in range(slots_per_row):
                    v = 0.0 if values is None else values[nu][j][i]
                    recs.append(
                        (
                            stamps[nu],
                            SERIES_NAMES[sr],
                            v,
                            f"src{(counter + i) % n_sources}",
                            f"sp{(counter + i) % n_species}",
                        )
                    )
                counter += slots_per_row
            if not any_here:
                recs.append((stamps[nu], SERIES_NAMES[spec.series[0]], None, "", ""))
        return recs

    skeleton = collate_rows(records())
    layout = build_layout(spec, skeleton)
    # simulation tolerates the degenerate boundary |rho| = 1 that estimation
    # rejects, so validate by hand
    params = np.asarray(params, dtype=float)
    if params.shape != (layout.n_params,):
        raise ValueError(f"expected {layout.n_params} parameters")
    for info, value in zip(layout.params, params):
        if info.role == "rho":
            if not abs(value) <= 1.0:
                raise ValueError(f"{info.name}: |rho| must be <= 1")
        elif not value >= 0.0:
            raise ValueError(f"{info.name}: variance must be nonnegative")

    m = spec.order_m
    s = spec.state_dim
    A, W = _chain_matrices(spec, layout, params, skeleton)

    rng = np.random.default_rng(seed)
    if diffuse_start or init_mean is None:
        x = np.zeros(s)
    else:
        x = np.asarray(init_mean, dtype=float).reshape(s).copy()
    if init_cov is not None and not diffuse_start:
        x = x + _psd_sqrt(
            np.asarray(init_cov, dtype=float).reshape(s, s)
        ) @ rng.standard_normal(s)

    values: list = []
    for nu in range(n):
        if nu > 0:
            x = A[nu] @ x
            Wn = W[nu]
            if np.any(Wn):
                x = x + _psd_sqrt(Wn) @ rng.standard_normal(s)
        per_row = []
        row = skeleton.rows[nu]
        for j, sr in enumerate(spec.series):
            vals = []
            if observed[nu, j]:
                level = x[j * m]
                for i in range(slots_per_row):
                    slot = row.slots(sr)[i]
                    key = (
                        POOLED_KEY
                        if spec.meas_grouping == "pooled"
                        else (
                            slot.source_id
                            if spec.meas_grouping == "by-source"
                            else slot.species_id
                        )
                    )
                    hvar = params[layout.meas_index[(sr, key)]]
                    vals.append(level + np.sqrt(hvar) * rng.standard_normal())
            per_row.append(vals)
        values.append(per_row)

    return collate_rows(records(values))
