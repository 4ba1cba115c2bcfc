"""Shared builders for small synthetic datasets used across the test modules."""

import numpy as np
import pytest

from paleokalman import ModelSpec, simulate
from paleokalman.core import (
    MAX_SLOTS,
    MISSING,
    MeasurementSlot,
    ObservationRow,
    PanelDataset,
    clamped_climate_state,
    compute_increments,
)


def rows_from_values(stamps, values_series1, values_series2=None, sources=None):
    """Build a PanelDataset from per-row value lists.

    values_series1/2: list (len == len(stamps)) of lists of floats, one entry
    per filled slot of that row; None entries mean the series is unobserved.
    sources: optional per-slot source ids (parallel structure), default 0.
    """
    def pad(slots):
        return tuple(slots) + tuple(
            MeasurementSlot() for _ in range(MAX_SLOTS - len(slots))
        )

    dts = compute_increments(stamps)
    rows = []
    for nu, stamp in enumerate(stamps):
        s1 = values_series1[nu] if values_series1 is not None else None
        s2 = values_series2[nu] if values_series2 is not None else None
        slots1 = pad(
            [
                MeasurementSlot(
                    value=v,
                    source_id=(sources[nu][i] if sources else 0),
                    species_id=0,
                )
                for i, v in enumerate(s1 or [])
            ]
        )
        slots2 = pad(
            [MeasurementSlot(value=v, source_id=0, species_id=0) for v in (s2 or [])]
        )
        rows.append(
            ObservationRow(
                stamp=stamp,
                dt=dts[nu],
                slots_series1=slots1,
                slots_series2=slots2,
                climate_state=clamped_climate_state(abs(stamp)),
            )
        )
    n_src = 1 + max(
        (sl.source_id for r in rows for sl in r.slots_series1 + r.slots_series2),
        default=0,
    )
    return PanelDataset(
        rows=tuple(rows),
        sources={i: f"source_{i}" for i in range(n_src)},
        species={0: "species_0"},
    )


@pytest.fixture
def rwn_spec():
    return ModelSpec(
        arity="univariate-series1",
        order_m=1,
        meas_grouping="pooled",
        trans_grouping="pooled",
    )


@pytest.fixture
def biv_spec():
    return ModelSpec(
        arity="bivariate",
        order_m=1,
        meas_grouping="pooled",
        trans_grouping="pooled",
        corr_grouping="pooled",
    )


def random_stamps(rng, n, mean_dt=0.05, start=-3.0):
    gaps = rng.exponential(mean_dt, n - 1)
    stamps = start + np.concatenate([[0.0], np.cumsum(gaps)])
    if stamps[-1] >= 0.0:  # keep every stamp a negative age
        stamps -= stamps[-1] + 0.001
    return list(stamps)


def small_simulated(spec, params, n_rows=6, slots=2, seed=0, n_sources=1, observed=None):
    rng = np.random.default_rng(seed + 1000)
    stamps = random_stamps(rng, n_rows)
    return simulate(
        spec,
        params,
        stamps,
        slots_per_row=slots,
        seed=seed,
        n_sources=n_sources,
        observed=observed,
    )


__all__ = ["rows_from_values", "random_stamps", "small_simulated", "MISSING"]
