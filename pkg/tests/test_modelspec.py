"""Model variants, parameter layouts, and per-row system matrices."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paleokalman.core import MeasurementSlot
from paleokalman.modelspec import (
    GapState,
    ModelSpec,
    booking_schedule,
    build_layout,
    realize,
    trend_transition_matrix,
)

from conftest import rows_from_values


# ---------------------------------------------------------------------------
# spec validation and JSON
# ---------------------------------------------------------------------------


def test_spec_defaults():
    spec = ModelSpec()
    assert spec.arity == "univariate-series1"
    assert spec.order_m == 1
    assert spec.series == (0,)
    assert spec.state_dim == 1


def test_spec_bivariate_needs_corr():
    with pytest.raises(ValueError):
        ModelSpec(arity="bivariate")
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    assert spec.series == (0, 1)
    assert spec.state_dim == 2


def test_spec_corr_rejected_for_univariate():
    with pytest.raises(ValueError):
        ModelSpec(arity="univariate-series1", corr_grouping="pooled")


@pytest.mark.parametrize("m", [0, 9, -1])
def test_spec_order_bounds(m):
    with pytest.raises(ValueError):
        ModelSpec(order_m=m)


def test_spec_rejects_unknown_groupings():
    with pytest.raises(ValueError):
        ModelSpec(meas_grouping="by-color")
    with pytest.raises(ValueError):
        ModelSpec(trans_grouping="by-source")  # transitions group by regime only
    with pytest.raises(ValueError):
        ModelSpec(arity="sideways")


def test_spec_json_round_trip():
    spec = ModelSpec(
        arity="bivariate",
        order_m=3,
        meas_grouping="by-source",
        trans_grouping="by-climate-state",
        corr_grouping="by-climate-state",
    )
    assert ModelSpec.from_json(spec.to_json()) == spec


def test_state_dim_scales_with_order():
    spec = ModelSpec(arity="bivariate", order_m=4, corr_grouping="pooled")
    assert spec.state_dim == 8


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------


def test_layout_pooled_univariate():
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]])
    layout = build_layout(ModelSpec(), data)
    assert layout.names() == ["sigma_eps2.d18O", "sigma_eta2.d18O"]
    assert layout.n_params == 2
    assert layout.meas_var_count == 1
    assert layout.trans_var_count == 1
    assert layout.corr_count == 0


def test_layout_by_source_orders_by_registry():
    data = rows_from_values(
        [-3.0, -2.0, -1.0],
        [[1.0], [1.1, 0.9], [1.2]],
        sources=[[1], [0, 1], [0]],
    )
    spec = ModelSpec(meas_grouping="by-source")
    layout = build_layout(spec, data)
    eps = [p for p in layout.params if p.role == "sigma_eps2"]
    assert [p.group_key for p in eps] == [0, 1]
    assert [p.group for p in eps] == ["source_0", "source_1"]
    assert layout.n_params == 3


def test_layout_drops_empty_cells():
    # only sources 0 and 2 ever carry values; no coordinate for source 1
    data = rows_from_values(
        [-3.0, -2.0],
        [[1.0], [1.2]],
        sources=[[0], [2]],
    )
    data.sources[1] = "never used"
    layout = build_layout(ModelSpec(meas_grouping="by-source"), data)
    eps = [p for p in layout.params if p.role == "sigma_eps2"]
    assert [p.group_key for p in eps] == [0, 2]


def test_layout_by_climate_state_trans():
    # rows in two regimes: 60 MYA (state 1) and 10 MYA (state 5)
    data = rows_from_values([-60.0, -59.0, -10.0], [[1.0], [1.1], [1.2]])
    spec = ModelSpec(trans_grouping="by-climate-state")
    layout = build_layout(spec, data)
    trans = [p for p in layout.params if p.role == "sigma_eta2"]
    assert [p.group_key for p in trans] == [1, 5]
    assert [p.group for p in trans] == ["Warmhouse 2", "Coolhouse 2"]


def test_layout_bivariate_order():
    data = rows_from_values(
        [-3.0, -2.0],
        [[1.0], [1.1]],
        [[0.5], [0.6]],
    )
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    layout = build_layout(spec, data)
    assert [p.role for p in layout.params] == [
        "sigma_eps2",
        "sigma_eps2",
        "sigma_eta2",
        "sigma_eta2",
        "rho",
    ]
    assert [p.series for p in layout.params] == [0, 1, 0, 1, None]
    assert layout.names()[-1] == "rho"


def test_layout_corr_needs_joint_rows():
    # series never observed at the same stamp: no correlation coordinate
    data = rows_from_values(
        [-3.0, -2.0],
        [[1.0], None],
        [None, [0.5]],
    )
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    layout = build_layout(spec, data)
    assert layout.corr_count == 0


def test_validate_params_bounds():
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]])
    layout = build_layout(ModelSpec(), data)
    layout.validate_params([0.1, 0.2])
    with pytest.raises(ValueError):
        layout.validate_params([0.0, 0.2])
    with pytest.raises(ValueError):
        layout.validate_params([0.1, -1.0])
    with pytest.raises(ValueError):
        layout.validate_params([0.1])


def test_validate_params_rho_open_interval():
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]], [[0.5], [0.6]])
    layout = build_layout(ModelSpec(arity="bivariate", corr_grouping="pooled"), data)
    layout.validate_params([0.1, 0.1, 0.1, 0.1, 0.9999])
    with pytest.raises(ValueError):
        layout.validate_params([0.1, 0.1, 0.1, 0.1, 1.0])


def test_layout_hash_stability_and_sensitivity():
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]])
    h1 = build_layout(ModelSpec(), data).hash()
    h2 = build_layout(ModelSpec(), data).hash()
    h3 = build_layout(ModelSpec(order_m=2), data).hash()
    assert h1 == h2
    assert h1 != h3


# ---------------------------------------------------------------------------
# transition structure
# ---------------------------------------------------------------------------


def test_trend_transition_matrix_shape():
    assert np.array_equal(trend_transition_matrix(1), np.eye(1))
    T3 = trend_transition_matrix(3)
    expected = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    assert np.array_equal(T3, expected)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_trend_transition_powers_differ(m):
    # T^2 != T for m >= 2: collapsing consecutive steps is not allowed
    T = trend_transition_matrix(m)
    assert not np.allclose(T @ T, T)


# ---------------------------------------------------------------------------
# gap booking
# ---------------------------------------------------------------------------


def test_gap_state_frozen_until_first_observed():
    gap = GapState(1)
    assert gap.advance(0, 0.0, False) == (False, 0.0)
    assert gap.advance(0, 0.5, False) == (False, 0.0)
    # first observation: still nothing booked
    assert gap.advance(0, 0.3, True) == (False, 0.0)
    # now the clock runs
    assert gap.advance(0, 0.2, True) == (True, pytest.approx(0.2))
    assert gap.advance(0, 0.1, False) == (False, 0.0)
    assert gap.advance(0, 0.4, True) == (True, pytest.approx(0.5))


def test_booking_schedule_windows_telescope():
    dts = [np.nan, 0.2, 0.3, 0.1, 0.4]
    observed = np.array([[True], [False], [True], [False], [True]])
    apply_, window = booking_schedule(dts, observed)
    assert apply_[:, 0].tolist() == [False, False, True, False, True]
    assert window[2, 0] == pytest.approx(0.5)
    assert window[4, 0] == pytest.approx(0.5)
    # booked time sums to span between first and last observed stamps
    assert window.sum() == pytest.approx(1.0)


def test_booking_schedule_independent_series():
    dts = [np.nan, 0.2, 0.3]
    observed = np.array([[True, False], [False, True], [True, True]])
    apply_, window = booking_schedule(dts, observed)
    assert apply_.tolist() == [[False, False], [False, False], [True, True]]
    assert window[2, 0] == pytest.approx(0.5)
    assert window[2, 1] == pytest.approx(0.3)


@given(
    st.lists(st.booleans(), min_size=2, max_size=30),
    st.integers(min_value=0, max_value=10_000),
)
def test_booking_schedule_telescopes_any_pattern(pattern, seed):
    rng = np.random.default_rng(seed)
    n = len(pattern)
    dts = np.concatenate([[np.nan], rng.uniform(0.01, 1.0, n - 1)])
    observed = np.array(pattern)[:, None]
    apply_, window = booking_schedule(dts, observed)
    idx = np.flatnonzero(observed[:, 0])
    if idx.size >= 2:
        stamps = np.concatenate([[0.0], np.cumsum(dts[1:])])
        assert window.sum() == pytest.approx(stamps[idx[-1]] - stamps[idx[0]])
        assert not apply_[idx[0], 0]
        assert apply_[idx[1:], 0].all()
    else:
        assert window.sum() == 0.0
        assert not apply_.any()


# ---------------------------------------------------------------------------
# realize
# ---------------------------------------------------------------------------


def test_realize_first_row_frozen():
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]])
    layout = build_layout(ModelSpec(), data)
    gap = GapState(1)
    sm = realize(ModelSpec(), layout, [0.3, 0.7], data.rows[0], gap)
    assert np.array_equal(sm.T, np.eye(1))
    assert sm.Q[0, 0] == 0.0
    assert sm.H[0, 0] == pytest.approx(0.3)
    sm2 = realize(ModelSpec(), layout, [0.3, 0.7], data.rows[1], gap)
    assert sm2.Q[0, 0] == pytest.approx(0.7 * 1.0)


def test_realize_bivariate_cross_term_uses_min_window():
    data = rows_from_values(
        [-3.0, -2.5, -2.0],
        [[1.0], None, [1.1]],  # series 1 skips the middle row
        [[0.5], [0.6], [0.7]],
    )
    spec = ModelSpec(arity="bivariate", corr_grouping="pooled")
    layout = build_layout(spec, data)
    params = [0.1, 0.2, 0.4, 0.9, 0.5]
    gap = GapState(2)
    realize(spec, layout, params, data.rows[0], gap)
    sm1 = realize(spec, layout, params, data.rows[1], gap)
    # only series 2 books here: no cross term
    assert sm1.Q[0, 1] == 0.0
    assert sm1.Q[1, 1] == pytest.approx(0.9 * 0.5)
    sm2 = realize(spec, layout, params, data.rows[2], gap)
    # series 1 booked 1.0, series 2 booked 0.5; overlap is min = 0.5
    assert sm2.Q[0, 0] == pytest.approx(0.4 * 1.0)
    assert sm2.Q[1, 1] == pytest.approx(0.9 * 0.5)
    expected_cross = 0.5 * np.sqrt(0.4) * np.sqrt(0.9) * 0.5
    assert sm2.Q[0, 1] == pytest.approx(expected_cross)
    assert sm2.Q[1, 0] == sm2.Q[0, 1]


def test_realize_z_points_at_levels():
    spec = ModelSpec(arity="bivariate", order_m=2, corr_grouping="pooled")
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]], [[0.5], [0.6]])
    layout = build_layout(spec, data)
    gap = GapState(2)
    sm = realize(spec, layout, [0.1, 0.2, 0.3, 0.4, 0.0], data.rows[0], gap)
    assert sm.Z.shape == (8, 4)
    assert sm.Z[0, 0] == 1.0  # series-1 slot 0 -> series-1 level (index 0)
    assert sm.Z[4, 2] == 1.0  # series-2 slot 0 -> series-2 level (index m)
    assert sm.missing.tolist() == [False, True, True, True, False, True, True, True]


def test_realize_disturbance_enters_last_component():
    spec = ModelSpec(order_m=3)
    data = rows_from_values([-3.0, -2.0], [[1.0], [1.1]])
    layout = build_layout(spec, data)
    gap = GapState(1)
    realize(spec, layout, [0.1, 0.5], data.rows[0], gap)
    sm = realize(spec, layout, [0.1, 0.5], data.rows[1], gap)
    assert sm.R[:, 0].tolist() == [0.0, 0.0, 1.0]
    assert sm.Q[0, 0] == pytest.approx(0.5)
