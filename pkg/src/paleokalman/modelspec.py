"""Declarative model variants and their realization as system matrices.

A ModelSpec names one member of the model family: which series it covers,
the integration order m of the trend, and how measurement variances,
transition variances, and (bivariate only) trend-disturbance correlations
are grouped. build_layout() resolves the spec against a dataset into a
concrete parameter vector layout; realize() produces the per-row matrices
(Z, H, T, R, Q) the filter consumes.

Transition semantics for rows where a series has no observation: that
series' state block is frozen (T block = identity, no disturbance), and the
elapsed time accumulates; at the series' next observed row the trend
transition applies once with the disturbance variance scaled by the whole
accumulated window. The two windows of a bivariate disturbance both end at
the current stamp, so their overlap is min(w1, w2), which scales the
cross-covariance term.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    SERIES_NAMES,
    CLIMATE_STATE_NAMES,
    MAX_SLOTS,
    ObservationRow,
    PanelDataset,
)

__all__ = [
    "ARITIES",
    "MEAS_GROUPINGS",
    "TRANS_GROUPINGS",
    "ModelSpec",
    "ParamInfo",
    "ParameterLayout",
    "GapState",
    "SystemMatrices",
    "build_layout",
    "realize",
    "trend_transition_matrix",
]

ARITIES = ("univariate-series1", "univariate-series2", "bivariate")
MEAS_GROUPINGS = ("pooled", "by-source", "by-species")
TRANS_GROUPINGS = ("pooled", "by-climate-state")
CORR_GROUPINGS = ("pooled", "by-climate-state")

POOLED_KEY = 0  # group key used when a grouping is pooled


@dataclass(frozen=True)
class ModelSpec:
    """One model variant, serializable to/from a flat JSON object."""

    arity: str = "univariate-series1"
    order_m: int = 1
    meas_grouping: str = "pooled"
    trans_grouping: str = "pooled"
    corr_grouping: str | None = None

    def __post_init__(self):
        if self.arity not in ARITIES:
            raise ValueError(f"arity must be one of {ARITIES}, got {self.arity!r}")
        if not (1 <= int(self.order_m) <= 8):
            raise ValueError(f"order_m must be in [1, 8], got {self.order_m}")
        if self.meas_grouping not in MEAS_GROUPINGS:
            raise ValueError(f"unknown meas_grouping {self.meas_grouping!r}")
        if self.trans_grouping not in TRANS_GROUPINGS:
            raise ValueError(f"unknown trans_grouping {self.trans_grouping!r}")
        if self.arity == "bivariate":
            if self.corr_grouping not in CORR_GROUPINGS:
                raise ValueError(
                    "bivariate models need corr_grouping in "
                    f"{CORR_GROUPINGS}, got {self.corr_grouping!r}"
                )
        elif self.corr_grouping is not None:
            raise ValueError("corr_grouping only applies to bivariate models")

    @property
    def series(self) -> tuple:
        """Active series indices, in state-block order."""
        if self.arity == "univariate-series1":
            return (0,)
        if self.arity == "univariate-series2":
            return (1,)
        return (0, 1)

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def state_dim(self) -> int:
        return self.n_series * self.order_m

    def to_json(self) -> dict:
        return {
            "arity": self.arity,
            "order_m": self.order_m,
            "meas_grouping": self.meas_grouping,
            "trans_grouping": self.trans_grouping,
            "corr_grouping": self.corr_grouping,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls(
            arity=obj["arity"],
            order_m=int(obj["order_m"]),
            meas_grouping=obj["meas_grouping"],
            trans_grouping=obj["trans_grouping"],
            corr_grouping=obj.get("corr_grouping"),
        )


@dataclass(frozen=True)
class ParamInfo:
    """One coordinate of the natural-scale parameter vector."""

    role: str  # "sigma_eps2" | "sigma_eta2" | "rho"
    series: int | None  # None for rho
    group_key: int  # registry id / regime j / POOLED_KEY
    name: str
    group: str


@dataclass(frozen=True)
class ParameterLayout:
    """Resolved parameter vector: only groups actually present in the data
    get a coordinate (a group with zero observations for its series is
    dropped rather than left unidentified)."""

    spec: ModelSpec
    params: tuple  # of ParamInfo, in vector order
    meas_index: dict  # (series, group_key) -> flat index
    trans_index: dict  # (series, regime_key) -> flat index
    corr_index: dict  # regime_key -> flat index

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def meas_var_count(self) -> int:
        return len(self.meas_index)

    @property
    def trans_var_count(self) -> int:
        return len(self.trans_index)

    @property
    def corr_count(self) -> int:
        return len(self.corr_index)

    def names(self) -> list:
        return [p.name for p in self.params]

    def validate_params(self, params) -> np.ndarray:
        """Check admissibility: variances positive, correlations in (-1, 1)."""
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got shape {params.shape}"
            )
        for info, value in zip(self.params, params):
            if info.role == "rho":
                if not abs(value) < 1.0:
                    raise ValueError(f"{info.name}: correlation must be in (-1, 1)")
            elif not value > 0.0:
                raise ValueError(f"{info.name}: variance must be positive")
        return params

    def hash(self) -> str:
        """Stable fingerprint of spec + parameter identities, used to detect
        fit-file/data mismatches."""
        payload = json.dumps(
            {
                "spec": self.spec.to_json(),
                "params": [(p.role, p.series, p.group) for p in self.params],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _meas_group_key(spec: ModelSpec, slot) -> int:
    if spec.meas_grouping == "pooled":
        return POOLED_KEY
    if spec.meas_grouping == "by-source":
        return slot.source_id
    return slot.species_id


def build_layout(spec: ModelSpec, data: PanelDataset) -> ParameterLayout:
    """Resolve a ModelSpec against a dataset.

    One measurement variance per non-empty (group x series) cell, one
    transition variance per non-empty (regime x series) cell, and for
    bivariate specs one correlation per regime with at least one row where
    both series are observed (pooled groupings collapse to one cell).
    """
    if data.n_rows == 0:
        raise ValueError("cannot build a parameter layout on an empty dataset")

    meas_groups = {s: set() for s in spec.series}
    trans_groups = {s: set() for s in spec.series}
    corr_groups: set = set()

    for row in data.rows:
        both = all(row.series_observed(s) for s in spec.series)
        for s in spec.series:
            observed = False
            for slot in row.slots(s):
                if not slot.missing:
                    observed = True
                    meas_groups[s].add(_meas_group_key(spec, slot))
            if observed:
                key = (
                    row.climate_state
                    if spec.trans_grouping == "by-climate-state"
                    else POOLED_KEY
                )
                trans_groups[s].add(key)
        if spec.arity == "bivariate" and both:
            corr_groups.add(
                row.climate_state
                if spec.corr_grouping == "by-climate-state"
                else POOLED_KEY
            )

    def group_label(grouping: str, key: int) -> str:
        if grouping == "pooled":
            return "pooled"
        if grouping == "by-source":
            return data.sources.get(key, f"source#{key}")
        if grouping == "by-species":
            return data.species.get(key, f"species#{key}")
        return CLIMATE_STATE_NAMES[key - 1]

    params: list = []
    meas_index: dict = {}
    trans_index: dict = {}
    corr_index: dict = {}

    for s in spec.series:
        for key in sorted(meas_groups[s]):
            meas_index[(s, key)] = len(params)
            label = group_label(spec.meas_grouping, key)
            params.append(
                ParamInfo(
                    role="sigma_eps2",
                    series=s,
                    group_key=key,
                    name=f"sigma_eps2.{SERIES_NAMES[s]}",
                    group=label,
                )
            )
    for s in spec.series:
        for key in sorted(trans_groups[s]):
            trans_index[(s, key)] = len(params)
            label = group_label(spec.trans_grouping, key)
            params.append(
                ParamInfo(
                    role="sigma_eta2",
                    series=s,
                    group_key=key,
                    name=f"sigma_eta2.{SERIES_NAMES[s]}",
                    group=label,
                )
            )
    for key in sorted(corr_groups):
        corr_index[key] = len(params)
        label = group_label(spec.corr_grouping or "pooled", key)
        params.append(
            ParamInfo(role="rho", series=None, group_key=key, name="rho", group=label)
        )

    return ParameterLayout(
        spec=spec,
        params=tuple(params),
        meas_index=meas_index,
        trans_index=trans_index,
        corr_index=corr_index,
    )


def trend_transition_matrix(m: int) -> np.ndarray:
    """Unit upper bidiagonal m x m transition: ones on the diagonal and the
    superdiagonal. The state block is (level, d^(m-1), ..., d^(1)) and the
    disturbance enters the last component only."""
    T = np.eye(m)
    for i in range(m - 1):
        T[i, i + 1] = 1.0
    return T


class GapState:
    """Caller-owned per-filter-pass tracker of the per-series accumulated
    time window. One instance per pass; realize() advances it row by row.

    A series' clock starts at its first observed row (nothing is booked
    there; the initial state covers it), so summing the booked windows over
    a series' observed rows telescopes to last observed stamp minus first
    observed stamp.
    """

    def __init__(self, n_series: int):
        self.seen = [False] * n_series
        self.acc = [0.0] * n_series

    def advance(self, local_series: int, dt: float, observed: bool) -> tuple:
        """Step one row for one series; returns (apply_trend, window)."""
        if not self.seen[local_series]:
            if observed:
                self.seen[local_series] = True
            return (False, 0.0)
        self.acc[local_series] += dt
        if observed:
            window = self.acc[local_series]
            self.acc[local_series] = 0.0
            return (True, window)
        return (False, 0.0)


def booking_schedule(dts, observed) -> tuple:
    """Vectorized form of the GapState walk over a whole dataset.

    Parameters
    ----------
    dts : (n,) array of row increments (first entry may be NaN).
    observed : (n, k) bool array, True where the series has a value.

    Returns
    -------
    apply : (n, k) bool, True where the trend transition applies.
    window : (n, k) float, accumulated time booked at applied rows (0 else).
    """
    dts = np.asarray(dts, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    if observed.ndim == 1:
        observed = observed[:, None]
    n, k = observed.shape
    apply_ = np.zeros((n, k), dtype=bool)
    window = np.zeros((n, k))
    gap = GapState(k)
    for nu in range(n):
        dt = dts[nu] if nu > 0 else 0.0
        for j in range(k):
            a, w = gap.advance(j, dt, bool(observed[nu, j]))
            apply_[nu, j] = a
            window[nu, j] = w
    return apply_, window


@dataclass(frozen=True)
class SystemMatrices:
    """Realization of a ModelSpec at one observation row.

    Z is p x s with a single unit entry per slot row pointing at the level
    state of the slot's series; H is the p x p diagonal measurement
    covariance (zero and masked where the slot is missing); T, R, Q describe
    the transition into this row (identity/empty at a row where every block
    is frozen, including the first row).
    """

    Z: np.ndarray
    H: np.ndarray
    T: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    missing: np.ndarray  # bool per slot row
    windows: tuple  # booked window per active series (0.0 if frozen)


def realize(
    spec: ModelSpec,
    layout: ParameterLayout,
    params,
    row: ObservationRow,
    gap_state: GapState,
) -> SystemMatrices:
    """System matrices for one row; advances gap_state in place.

    params are on the natural scale in layout order. Variances must be
    positive and correlations inside (-1, 1).
    """
    params = layout.validate_params(params)
    m = spec.order_m
    s_dim = spec.state_dim
    p = MAX_SLOTS * spec.n_series

    Z = np.zeros((p, s_dim))
    H = np.zeros((p, p))
    missing = np.ones(p, dtype=bool)
    for k, s in enumerate(spec.series):
        for i, slot in enumerate(row.slots(s)):
            r_idx = k * MAX_SLOTS + i
            Z[r_idx, k * m] = 1.0
            if not slot.missing:
                missing[r_idx] = False
                H[r_idx, r_idx] = params[
                    layout.meas_index[(s, _meas_group_key(spec, slot))]
                ]

    dt = row.dt if row.dt == row.dt else 0.0
    regime = row.climate_state
    T = np.zeros((s_dim, s_dim))
    R = np.zeros((s_dim, spec.n_series))
    Q = np.zeros((spec.n_series, spec.n_series))
    windows = []
    applied = []
    for k, s in enumerate(spec.series):
        apply_trend, window = gap_state.advance(k, dt, row.series_observed(s))
        windows.append(window)
        applied.append(apply_trend)
        block = slice(k * m, (k + 1) * m)
        T[block, block] = trend_transition_matrix(m) if apply_trend else np.eye(m)
        R[k * m + m - 1, k] = 1.0
        if apply_trend:
            key = regime if spec.trans_grouping == "by-climate-state" else POOLED_KEY
            Q[k, k] = params[layout.trans_index[(s, key)]] * window

    if spec.arity == "bivariate" and applied[0] and applied[1]:
        key = regime if spec.corr_grouping == "by-climate-state" else POOLED_KEY
        idx = layout.corr_index.get(key)
        if idx is not None:
            rho = params[idx]
            # both windows end at this stamp, so the increments overlap on
            # the shorter one
            k1 = regime if spec.trans_grouping == "by-climate-state" else POOLED_KEY
            sig1 = np.sqrt(params[layout.trans_index[(0, k1)]])
            sig2 = np.sqrt(params[layout.trans_index[(1, k1)]])
            cross = rho * sig1 * sig2 * min(windows)
            Q[0, 1] = Q[1, 0] = cross

    return SystemMatrices(
        Z=Z, H=H, T=T, R=R, Q=Q, missing=missing, windows=tuple(windows)
    )
