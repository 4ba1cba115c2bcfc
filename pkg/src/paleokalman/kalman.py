"""Kalman filter and fixed-interval smoother with exact diffuse initialization.

The filter runs over time-varying system matrices produced from a ModelSpec,
processing the (at most eight) measurement slots of a row one at a time,
which is valid because the measurement covariance is diagonal. The initial
state is diffuse by default: its covariance is carried as P = P_star +
kappa * P_inf with the kappa -> infinity limit taken analytically, so no
large-kappa numerics enter. The diffuse phase ends once enough observations
have annihilated P_inf (max entry below 1e-10), after which the recursion
is the ordinary Kalman filter.

Missing-row semantics: a series' state block stays frozen across rows where
the series has no value, and the trend transition is applied once at its
next observed row with the disturbance variance scaled by the accumulated
window. Inserting all-missing rows therefore changes nothing at the
original rows.

The smoother is the matching backward pass. During the diffuse phase it
carries the kappa-expansion terms (r0, r1) and (N0, N1, N2); after the
phase the extra terms are identically zero, so one code path covers both
regimes. Smoothed covariances are finite everywhere once the data identify
the initial state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import MAX_SLOTS, SERIES_NAMES, is_missing, PanelDataset
from .modelspec import (
    ModelSpec,
    ParameterLayout,
    POOLED_KEY,
    booking_schedule,
)

__all__ = [
    "ConditioningError",
    "CompiledModel",
    "FilterState",
    "StatePaths",
    "FilterRun",
    "compile_model",
    "filter",
    "smooth",
    "standardized_residuals",
    "state_component_names",
    "write_state_paths_csv",
    "DIFFUSE_TOL",
]

DIFFUSE_TOL = 1e-10
_LOG2PI = float(np.log(2.0 * np.pi))


class ConditioningError(RuntimeError):
    """Innovation variance failed to be positive at some row."""

    def __init__(self, row_index: int, message: str):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


# ---------------------------------------------------------------------------
# compilation: dataset + spec -> flat arrays the recursions consume
# ---------------------------------------------------------------------------


@dataclass
class CompiledModel:
    """Flat-array view of (spec, layout, data) for filter passes.

    Everything parameter-independent is precomputed here, including the
    booking schedule: which rows apply the trend transition for each series
    and with what accumulated time window.
    """

    spec: ModelSpec
    layout: ParameterLayout
    n: int
    n_series: int
    m: int
    s: int
    p: int
    stamps: np.ndarray  # (n,)
    values: np.ndarray  # (n, p), NaN where missing
    hidx: np.ndarray  # (n, p) flat meas-variance param index, -1 missing
    lvl_of_col: np.ndarray  # (p,) state index of each slot's level
    apply: np.ndarray  # (n, n_series) bool
    window: np.ndarray  # (n, n_series)
    tvar_idx: np.ndarray  # (n, n_series) trans-variance index, -1 absent
    corr_idx: np.ndarray  # (n,) correlation index, -1 absent
    n_obs_slots: int


def compile_model(
    spec: ModelSpec, layout: ParameterLayout, data: PanelDataset
) -> CompiledModel:
    n = data.n_rows
    k = spec.n_series
    m = spec.order_m
    p = MAX_SLOTS * k

    stamps = np.array([r.stamp for r in data.rows])
    values = np.full((n, p), np.nan)
    hidx = np.full((n, p), -1, dtype=np.int64)
    observed = np.zeros((n, k), dtype=bool)
    tvar_idx = np.full((n, k), -1, dtype=np.int64)
    corr_idx = np.full(n, -1, dtype=np.int64)

    for nu, row in enumerate(data.rows):
        regime = row.climate_state
        tkey = regime if spec.trans_grouping == "by-climate-state" else POOLED_KEY
        for j, sr in enumerate(spec.series):
            tvar_idx[nu, j] = layout.trans_index.get((sr, tkey), -1)
            for i, slot in enumerate(row.slots(sr)):
                if slot.missing:
                    continue
                col = j * MAX_SLOTS + i
                values[nu, col] = slot.value
                observed[nu, j] = True
                if spec.meas_grouping == "pooled":
                    key = POOLED_KEY
                elif spec.meas_grouping == "by-source":
                    key = slot.source_id
                else:
                    key = slot.species_id
                hidx[nu, col] = layout.meas_index[(sr, key)]
        if k == 2:
            ckey = regime if spec.corr_grouping == "by-climate-state" else POOLED_KEY
            corr_idx[nu] = layout.corr_index.get(ckey, -1)

    dts = np.array([r.dt for r in data.rows])
    apply_, window = booking_schedule(dts, observed)
    lvl_of_col = np.array([j * m for j in range(k) for _ in range(MAX_SLOTS)])

    return CompiledModel(
        spec=spec,
        layout=layout,
        n=n,
        n_series=k,
        m=m,
        s=k * m,
        p=p,
        stamps=stamps,
        values=values,
        hidx=hidx,
        lvl_of_col=lvl_of_col,
        apply=apply_,
        window=window,
        tvar_idx=tvar_idx,
        corr_idx=corr_idx,
        n_obs_slots=int(np.sum(hidx >= 0)),
    )


# block operations for the unit upper-bidiagonal trend transition -----------


def _T_vec(x: np.ndarray, top: int, m: int) -> None:
    # x <- T x within a block: x[i] += x[i+1], ascending
    for i in range(top, top + m - 1):
        x[i] += x[i + 1]


def _T_mat(P: np.ndarray, blocks, m: int) -> None:
    # P <- A P A' with A applying T on the listed blocks, identity elsewhere
    for top in blocks:
        for i in range(top, top + m - 1):
            P[i, :] += P[i + 1, :]
    for top in blocks:
        for i in range(top, top + m - 1):
            P[:, i] += P[:, i + 1]


def _Tt_vec(x: np.ndarray, top: int, m: int) -> None:
    # x <- T' x within a block: x[i] += x[i-1], descending
    for i in range(top + m - 1, top, -1):
        x[i] += x[i - 1]


def _Tt_mat(N: np.ndarray, blocks, m: int) -> None:
    # N <- A' N A
    for top in blocks:
        for i in range(top + m - 1, top, -1):
            N[i, :] += N[i - 1, :]
    for top in blocks:
        for i in range(top + m - 1, top, -1):
            N[:, i] += N[:, i - 1]


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------


@dataclass
class FilterState:
    """Final state of a filter pass."""

    a: np.ndarray
    P: np.ndarray  # proper covariance part
    P_inf: np.ndarray  # diffuse part, zero once the diffuse phase has ended
    loglik_acc: float
    t_index: int


@dataclass
class StatePaths:
    """Per-row state estimates in predicted, filtered, and smoothed form.

    Covariance arrays hold the proper parts; *_covs_inf carry the diffuse
    parts, exactly zero after the diffuse phase. Innovations and their
    variances are per slot, NaN where the slot is missing. diffuse_rows
    flags rows processed while initialization was still diffuse.
    """

    stamps: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    predicted_covs_inf: np.ndarray
    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    filtered_covs_inf: np.ndarray
    innovations: np.ndarray
    innovation_variances: np.ndarray
    diffuse_rows: np.ndarray
    smoothed_means: np.ndarray | None = None
    smoothed_covs: np.ndarray | None = None


@dataclass
class FilterRun:
    """Filter output plus what the backward pass needs."""

    compiled: CompiledModel
    params: np.ndarray
    loglik: float
    final_state: FilterState
    paths: StatePaths
    n_diffuse_slots: int
    # per-row list of slot records for the smoother:
    # (col, kind, v, F_inf, F_star, M_inf, M_star) with kind 1 = diffuse
    slot_records: list = field(repr=False, default_factory=list)

    def __iter__(self):
        # allows (state, paths, loglik) unpacking
        return iter((self.final_state, self.paths, self.loglik))


def filter(
    spec: ModelSpec,
    layout: ParameterLayout,
    params,
    data: PanelDataset,
    init="diffuse",
    compiled: CompiledModel | None = None,
) -> FilterRun:
    """One forward pass: loglik, final state, predicted/filtered paths.

    init is "diffuse" (the default) or a proper prior (a1, P1). Missing
    slots are skipped; rows where every slot of a series is missing leave
    that series' state block frozen per the booking semantics.
    """
    cm = compiled if compiled is not None else compile_model(spec, layout, data)
    params = layout.validate_params(params)
    n, s, p = cm.n, cm.s, cm.p
    m, k = cm.m, cm.n_series

    a = np.zeros(s)
    Ps = np.zeros((s, s))
    if isinstance(init, str):
        if init != "diffuse":
            raise ValueError(f"unknown init mode {init!r}")
        Pi = np.eye(s)
        diffuse_active = True
    else:
        a1, P1 = init
        a = np.asarray(a1, dtype=float).reshape(s).copy()
        Ps = np.asarray(P1, dtype=float).reshape(s, s).copy()
        Pi = np.zeros((s, s))
        diffuse_active = False

    loglik = 0.0
    n_diffuse = 0

    pred_m = np.zeros((n, s))
    pred_c = np.zeros((n, s, s))
    pred_ci = np.zeros((n, s, s))
    filt_m = np.zeros((n, s))
    filt_c = np.zeros((n, s, s))
    filt_ci = np.zeros((n, s, s))
    innov = np.full((n, p), np.nan)
    innov_var = np.full((n, p), np.nan)
    diffuse_rows = np.zeros(n, dtype=bool)
    slot_records: list = []

    for nu in range(n):
        if nu > 0:
            blocks = [j * m for j in range(k) if cm.apply[nu, j]]
            if blocks:
                for top in blocks:
                    _T_vec(a, top, m)
                _T_mat(Ps, blocks, m)
                if diffuse_active:
                    _T_mat(Pi, blocks, m)
                for j in range(k):
                    if cm.apply[nu, j]:
                        last = j * m + m - 1
                        Ps[last, last] += params[cm.tvar_idx[nu, j]] * cm.window[nu, j]
                if k == 2 and cm.apply[nu, 0] and cm.apply[nu, 1]:
                    ci = cm.corr_idx[nu]
                    if ci >= 0 and params[ci] != 0.0:
                        cross = (
                            params[ci]
                            * np.sqrt(
                                params[cm.tvar_idx[nu, 0]]
                                * params[cm.tvar_idx[nu, 1]]
                            )
                            * min(cm.window[nu, 0], cm.window[nu, 1])
                        )
                        Ps[m - 1, 2 * m - 1] += cross
                        Ps[2 * m - 1, m - 1] += cross

        pred_m[nu] = a
        pred_c[nu] = Ps
        pred_ci[nu] = Pi
        diffuse_rows[nu] = diffuse_active

        records = []
        for col in range(p):
            hix = cm.hidx[nu, col]
            if hix < 0:
                continue
            lvl = cm.lvl_of_col[col]
            v = cm.values[nu, col] - a[lvl]
            Ms = Ps[:, lvl].copy()
            Fs = Ms[lvl] + params[hix]
            innov[nu, col] = v
            if diffuse_active and Pi[lvl, lvl] > DIFFUSE_TOL:
                Mi = Pi[:, lvl].copy()
                Fi = Mi[lvl]
                K0 = Mi / Fi
                a = a + K0 * v
                Ps = Ps + np.outer(K0, K0) * Fs - np.outer(K0, Ms) - np.outer(Ms, K0)
                Pi = Pi - np.outer(K0, Mi)
                loglik += -0.5 * (_LOG2PI + np.log(Fi))
                n_diffuse += 1
                innov_var[nu, col] = Fs
                records.append((col, 1, v, Fi, Fs, Mi, Ms))
            else:
                if not (np.isfinite(Fs) and Fs > 0.0):
                    raise ConditioningError(
                        nu, f"innovation variance {Fs} at slot column {col}"
                    )
                K = Ms / Fs
                a = a + K * v
                Ps = Ps - np.outer(K, Ms)
                loglik += -0.5 * (_LOG2PI + np.log(Fs) + v * v / Fs)
                innov_var[nu, col] = Fs
                records.append((col, 0, v, 0.0, Fs, None, Ms))

        Ps = 0.5 * (Ps + Ps.T)
        if diffuse_active:
            Pi = 0.5 * (Pi + Pi.T)
            if np.max(np.abs(Pi)) < DIFFUSE_TOL:
                Pi = np.zeros((s, s))
                diffuse_active = False

        filt_m[nu] = a
        filt_c[nu] = Ps
        filt_ci[nu] = Pi
        slot_records.append(records)

    paths = StatePaths(
        stamps=cm.stamps,
        predicted_means=pred_m,
        predicted_covs=pred_c,
        predicted_covs_inf=pred_ci,
        filtered_means=filt_m,
        filtered_covs=filt_c,
        filtered_covs_inf=filt_ci,
        innovations=innov,
        innovation_variances=innov_var,
        diffuse_rows=diffuse_rows,
    )
    state = FilterState(a=a, P=Ps, P_inf=Pi, loglik_acc=float(loglik), t_index=n - 1)
    return FilterRun(
        compiled=cm,
        params=params,
        loglik=float(loglik),
        final_state=state,
        paths=paths,
        n_diffuse_slots=n_diffuse,
        slot_records=slot_records,
    )


# ---------------------------------------------------------------------------
# smoother
# ---------------------------------------------------------------------------


def smooth(run: FilterRun) -> StatePaths:
    """Fixed-interval smoother; fills the smoothed fields of the paths.

    Backward recursion in (r0, r1) and (N0, N1, N2). Post-diffuse slots
    leave the extra terms at zero, so a single pass covers both phases.
    At each row, with P the proper and Pi the diffuse predicted parts:

        mean = a_pred + P r0 + Pi r1
        cov  = P - P N0 P - Pi N1 P - P N1 Pi - Pi N2 Pi
    """
    cm = run.compiled
    n, s, m, k = cm.n, cm.s, cm.m, cm.n_series
    paths = run.paths

    r0 = np.zeros(s)
    r1 = np.zeros(s)
    N0 = np.zeros((s, s))
    N1 = np.zeros((s, s))
    N2 = np.zeros((s, s))

    smo_m = np.zeros((n, s))
    smo_c = np.zeros((n, s, s))

    for nu in range(n - 1, -1, -1):
        in_diffuse = bool(paths.diffuse_rows[nu])
        for (col, kind, v, Fi, Fs, Mi, Ms) in reversed(run.slot_records[nu]):
            e = cm.lvl_of_col[col]
            if kind == 1:
                K0 = Mi / Fi
                K1 = Ms / Fi - Mi * (Fs / (Fi * Fi))
                # with L0 = I - K0 z', L1 = -K1 z', z the unit vector at e:
                # r1 <- z v/Fi + L0'r1 + L1'r0 ; r0 <- L0'r0
                c00 = K0 @ r0
                c01 = K0 @ r1
                c10 = K1 @ r0
                r1 = r1.copy()
                r1[e] += v / Fi - c01 - c10
                r0 = r0.copy()
                r0[e] -= c00

                w0 = N0 @ K0
                w1 = N1 @ K0
                w2 = N2 @ K0
                u0 = N0 @ K1
                u1 = N1 @ K1
                q00 = K0 @ w0
                q10 = K0 @ w1
                q20 = K0 @ w2
                c010 = K1 @ w0  # K1' N0 K0
                c110 = K1 @ w1  # K1' N1 K0
                d011 = K1 @ u0  # K1' N0 K1

                # N2 <- -zz' Fs/Fi^2 + L0'N2L0 + L1'N1L0 + L0'N1L1 + L1'N0L1
                N2 = N2.copy()
                N2[e, :] -= w2 + u1
                N2[:, e] -= w2 + u1
                N2[e, e] += q20 + 2.0 * c110 + d011 - Fs / (Fi * Fi)

                # N1 <- zz'/Fi + L0'N1L0 + L1'N0L0 + L0'N0L1
                N1 = N1.copy()
                N1[e, :] -= w1 + u0
                N1[:, e] -= w1 + u0
                N1[e, e] += q10 + 2.0 * c010 + 1.0 / Fi

                # N0 <- L0'N0L0
                N0 = N0.copy()
                N0[e, :] -= w0
                N0[:, e] -= w0
                N0[e, e] += q00
            else:
                # ordinary update, L = I - K z'
                K = Ms / Fs
                c0 = K @ r0
                r0 = r0.copy()
                r0[e] += v / Fs - c0
                w0 = N0 @ K
                q0 = K @ w0
                N0 = N0.copy()
                N0[e, :] -= w0
                N0[:, e] -= w0
                N0[e, e] += q0 + 1.0 / Fs
                if in_diffuse:
                    # the extra terms are nonzero inside the diffuse phase
                    # and must ride through ordinary slots too
                    c1 = K @ r1
                    r1 = r1.copy()
                    r1[e] -= c1
                    w1 = N1 @ K
                    q1 = K @ w1
                    N1 = N1.copy()
                    N1[e, :] -= w1
                    N1[:, e] -= w1
                    N1[e, e] += q1
                    w2 = N2 @ K
                    q2 = K @ w2
                    N2 = N2.copy()
                    N2[e, :] -= w2
                    N2[:, e] -= w2
                    N2[e, e] += q2

        P = paths.predicted_covs[nu]
        mean = paths.predicted_means[nu] + P @ r0
        V = P - P @ N0 @ P
        if in_diffuse:
            Pi = paths.predicted_covs_inf[nu]
            mean = mean + Pi @ r1
            PiN1P = Pi @ N1 @ P
            V = V - PiN1P - PiN1P.T - Pi @ N2 @ Pi
        smo_m[nu] = mean
        smo_c[nu] = 0.5 * (V + V.T)

        if nu > 0:
            blocks = [j * m for j in range(k) if cm.apply[nu, j]]
            if blocks:
                for top in blocks:
                    _Tt_vec(r0, top, m)
                    _Tt_vec(r1, top, m)
                _Tt_mat(N0, blocks, m)
                _Tt_mat(N1, blocks, m)
                _Tt_mat(N2, blocks, m)

    paths.smoothed_means = smo_m
    paths.smoothed_covs = smo_c
    return paths


def standardized_residuals(run: FilterRun) -> np.ndarray:
    """Per-slot innovations divided by their standard deviation.

    Shape (n_rows, n_slot_columns); NaN at missing slots and over every
    row still inside the diffuse phase, where no proper innovation
    variance exists.
    """
    with np.errstate(invalid="ignore"):
        out = run.paths.innovations / np.sqrt(run.paths.innovation_variances)
    out[run.paths.diffuse_rows, :] = np.nan
    return out


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def state_component_names(spec: ModelSpec) -> list:
    """Column labels for the state vector, level first per series block."""
    names = []
    for sr in spec.series:
        base = SERIES_NAMES[sr]
        names.append(f"{base}.level")
        for d in range(spec.order_m - 1, 0, -1):
            names.append(f"{base}.d{d}")
    return names


def write_state_paths_csv(paths: StatePaths, spec: ModelSpec, path, header_lines=()):
    """Write smoothed states and residual columns to CSV.

    Columns: stamp, per-component smoothed mean and variance, then per-slot
    standardized residuals. Missing entries are written as empty fields.
    Extra header lines (comments) go in first, verbatim.
    """
    if paths.smoothed_means is None:
        raise ValueError("smoothed paths required; run smooth() first")
    comp = state_component_names(spec)
    n, s = paths.smoothed_means.shape
    p = paths.innovations.shape[1]

    with np.errstate(invalid="ignore"):
        resid = paths.innovations / np.sqrt(paths.innovation_variances)
    resid[paths.diffuse_rows, :] = np.nan

    slot_names = [
        f"resid.{SERIES_NAMES[sr]}.{i}" for sr in spec.series for i in range(MAX_SLOTS)
    ]

    def fmt(x):
        return "" if is_missing(x) else repr(float(x))

    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["stamp"]
            + [f"mean.{c}" for c in comp]
            + [f"var.{c}" for c in comp]
            + slot_names
        )
        for nu in range(n):
            row = [repr(float(paths.stamps[nu]))]
            row += [fmt(paths.smoothed_means[nu, i]) for i in range(s)]
            row += [fmt(paths.smoothed_covs[nu, i, i]) for i in range(s)]
            row += [fmt(resid[nu, i]) for i in range(p)]
            writer.writerow(row)
