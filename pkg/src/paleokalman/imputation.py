"""Smoothed values on an equidistant time grid.

Grid stamps are merged into the dataset as all-missing rows (stamps within
1e-12 My of an existing row are not duplicated; the data row itself serves
as the grid row), one smoother pass runs at the fitted parameters, and the
grid rows are read off. Because transitions are booked at observed rows
only, inserting grid rows changes nothing at the original stamps; a grid
row carries the state of the nearest observed row on its old side.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import kalman
from .core import (
    MAX_SLOTS,
    MeasurementSlot,
    ObservationRow,
    PanelDataset,
    SERIES_NAMES,
    clamped_climate_state,
    compute_increments,
)
from .modelspec import ModelSpec, ParameterLayout, build_layout

__all__ = [
    "COINCIDENCE_TOL",
    "make_grid",
    "merge_grid",
    "ImputationTable",
    "impute",
    "write_impute_csv",
]

COINCIDENCE_TOL = 1e-12

_EMPTY_SLOTS = tuple(MeasurementSlot() for _ in range(MAX_SLOTS))


def make_grid(span_start_mya: float, span_end_mya: float, mesh_years: float) -> list:
    """Equidistant stamps over [span_start, span_end] MYA, oldest first.

    The grid has floor(span_years / mesh_years) points spaced mesh_years
    apart starting at the old end; the final partial interval is dropped.
    Returns stamps (negative-age convention), ascending.
    """
    if not span_start_mya > span_end_mya >= 0.0:
        raise ValueError(
            f"need span_start > span_end >= 0, got ({span_start_mya}, {span_end_mya})"
        )
    if mesh_years <= 0:
        raise ValueError(f"mesh_years must be positive, got {mesh_years}")
    span_years = (span_start_mya - span_end_mya) * 1e6
    n_g = int(math.floor(span_years / mesh_years))
    if n_g == 0:
        warnings.warn(
            f"mesh of {mesh_years} years exceeds the {span_years}-year span; "
            "empty grid",
            stacklevel=2,
        )
        return []
    return [-(span_start_mya - (i * mesh_years) / 1e6) for i in range(n_g)]


def merge_grid(data: PanelDataset, grid, tol: float = COINCIDENCE_TOL) -> tuple:
    """Insert grid stamps as all-missing rows; returns (merged, indices).

    indices[i] is the merged-row index holding grid stamp grid[i]. Stamps
    within tol of an existing row are not inserted; the existing row is
    referenced instead.
    """
    stamps = np.array([r.stamp for r in data.rows])
    extra = []
    for g in grid:
        idx = int(np.searchsorted(stamps, g))
        hit = False
        for j in (idx - 1, idx):
            if 0 <= j < stamps.size and abs(stamps[j] - g) <= tol:
                hit = True
                break
        if not hit:
            extra.append(float(g))

    rows = list(data.rows)
    for g in extra:
        rows.append(
            ObservationRow(
                stamp=g,
                dt=float("nan"),
                slots_series1=_EMPTY_SLOTS,
                slots_series2=_EMPTY_SLOTS,
                climate_state=clamped_climate_state(abs(g)),
            )
        )
    rows.sort(key=lambda r: r.stamp)
    dts = compute_increments([r.stamp for r in rows])
    rows = [replace(r, dt=dt) for r, dt in zip(rows, dts)]
    merged = PanelDataset(rows=tuple(rows), sources=data.sources, species=data.species)

    merged_stamps = np.array([r.stamp for r in merged.rows])
    indices = []
    for g in grid:
        idx = int(np.searchsorted(merged_stamps, g))
        row_idx = None
        for j in (idx - 1, idx, idx + 1):
            if 0 <= j < merged_stamps.size and abs(merged_stamps[j] - g) <= tol:
                row_idx = j
                break
        if row_idx is None:
            raise AssertionError(f"grid stamp {g} lost in the merge")
        indices.append(row_idx)
    return merged, indices


@dataclass(frozen=True)
class ImputationTable:
    """Grid stamps with smoothed mean and SD per series."""

    stamps: tuple
    series: tuple  # series names in column order
    means: np.ndarray  # (n_grid, n_series)
    sds: np.ndarray  # (n_grid, n_series)

    @property
    def n_rows(self) -> int:
        return len(self.stamps)


def impute(fit, spec: ModelSpec, data: PanelDataset, grid) -> ImputationTable:
    """Smoothed state values at the grid stamps under fitted parameters.

    fit is a FitResult (params and their layout order are read off it) or
    a bare natural-scale parameter vector. Coincident grid stamps reuse
    the data row, so their values equal the data-row smoothed values.
    """
    layout = build_layout(spec, data)
    params = getattr(fit, "params_hat", fit)
    names = getattr(fit, "param_names", None)
    if names is not None and tuple(names) != tuple(layout.names()):
        raise ValueError(
            "fit result does not match this (spec, data): parameter layouts differ"
        )

    merged, indices = merge_grid(data, grid)
    run = kalman.filter(spec, layout, params, merged)
    paths = kalman.smooth(run)

    m = spec.order_m
    k = spec.n_series
    n_g = len(grid)
    means = np.empty((n_g, k))
    sds = np.empty((n_g, k))
    for i, r in enumerate(indices):
        for j in range(k):
            lvl = j * m
            means[i, j] = paths.smoothed_means[r, lvl]
            sds[i, j] = math.sqrt(max(paths.smoothed_covs[r, lvl, lvl], 0.0))
    return ImputationTable(
        stamps=tuple(float(g) for g in grid),
        series=tuple(SERIES_NAMES[s] for s in spec.series),
        means=means,
        sds=sds,
    )


def write_impute_csv(table: ImputationTable, path, header_lines=()) -> None:
    """CSV with stamp_mya then mean/sd column pair per series."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        writer = csv.writer(fh)
        header = ["stamp_mya"]
        for name in table.series:
            header += [f"mean_{name}", f"sd_{name}"]
        writer.writerow(header)
        for i, stamp in enumerate(table.stamps):
            row = [repr(stamp)]
            for j in range(len(table.series)):
                row += [repr(float(table.means[i, j])), repr(float(table.sds[i, j]))]
            writer.writerow(row)
