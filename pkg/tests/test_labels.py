from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodnet.errors import ConfigError, RegistryError, ValidationError
from prodnet.features import FeatureConfig, FeatureMatrix, assemble_feature_matrix
from prodnet.ingest import VARIABLES, WellSeries
from prodnet.labels import (
    RuleConfig,
    LabelFrame,
    aggregate_labels,
    label_well,
    rule_gor_deviation,
    rule_pressure_flow,
    rule_production_drop,
    trailing_zscore,
)


def make_features(n=80, cfg=FeatureConfig(), **overrides):
    values = {v: np.full(n, 50.0) for v in VARIABLES}
    values["oil_vol"] = np.full(n, 100.0)
    values["gas_vol"] = np.zeros(n)
    values["water_vol"] = np.zeros(n)
    values["on_stream_hrs"] = np.full(n, 24.0)
    for k, v in overrides.items():
        values[k] = np.asarray(v, dtype=np.float64)
    series = WellSeries("W", "F", "FLD", [date(2021, 1, 1) + timedelta(days=i) for i in range(n)], values)
    return assemble_feature_matrix(series, cfg)


def fired(mask):
    return np.flatnonzero(mask).tolist()


# -- production drop -------------------------------------------------------------

def test_drop_fires_on_unexpected_fall():
    oil = np.full(40, 100.0)
    oil[20] = 45.0
    fm = make_features(40, oil_vol=oil)
    assert fired(rule_production_drop(fm)) == [20]
    lf = label_well(fm)
    assert fired(lf.y) == [20]
    assert fired(lf.rule_mask[:, 1]) == [] and fired(lf.rule_mask[:, 2]) == []


def test_drop_excluded_during_downtime():
    oil = np.full(40, 100.0)
    oil[20] = 45.0
    hrs = np.full(40, 24.0)
    hrs[20] = 2.0
    assert fired(rule_production_drop(make_features(40, oil_vol=oil, on_stream_hrs=hrs))) == []


def test_flat_series_never_fires():
    lf = label_well(make_features(100))
    assert lf.y.sum() == 0 and lf.rule_mask.sum() == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lo=st.floats(0.05, 0.9), hi=st.floats(0.05, 0.95))
def test_drop_threshold_monotone(seed, lo, hi):
    lo, hi = sorted((lo, hi))
    rng = np.random.default_rng(seed)
    oil = rng.uniform(0, 200, size=60)
    fm = make_features(60, oil_vol=oil)
    assert rule_production_drop(fm, RuleConfig(drop_frac=hi)).sum() <= rule_production_drop(fm, RuleConfig(drop_frac=lo)).sum()


# -- pressure / flow -------------------------------------------------------------

def _pressure_flow_series(n=80, step_at=60):
    t = np.arange(n)
    oil = 100 + 2.0 * np.sin(1.7 * t)
    whp = 50 + 0.5 * np.cos(2.3 * t)
    oil[step_at:] -= 20.0
    whp[step_at:] += 5.0
    return oil, whp


def test_pressure_flow_fires_at_constructed_step():
    oil, whp = _pressure_flow_series()
    fm = make_features(80, oil_vol=oil, wellhead_pressure=whp)
    z_oil = trailing_zscore(fm.column("d_oil_vol"), 30)
    z_whp = trailing_zscore(fm.column("d_wellhead_pressure"), 30)
    assert z_oil[60] < -2 and z_whp[60] > 2
    assert fired(rule_pressure_flow(fm)) == [60]
    assert fired(label_well(fm).y) == [60]


def test_pressure_flow_needs_opposite_signs():
    oil, whp = _pressure_flow_series()
    oil[60:] += 40.0  # flow now rises with pressure
    assert fired(rule_pressure_flow(make_features(80, oil_vol=oil, wellhead_pressure=whp))) == []


def test_pressure_flow_zero_variance_history():
    oil = np.full(40, 100.0)
    whp = np.full(40, 50.0)
    oil[35] = 70.0
    whp[35] = 60.0
    fm = make_features(40, oil_vol=oil, wellhead_pressure=whp)
    assert fired(rule_pressure_flow(fm)) == []


def test_trailing_zscore_is_causal():
    x = np.random.default_rng(3).normal(size=50)
    z = trailing_zscore(x, 10)
    x2 = x.copy()
    x2[30:] += 100.0
    np.testing.assert_array_equal(trailing_zscore(x2, 10)[:30], z[:30])
    hist = x[19:29]
    assert z[29] == pytest.approx((x[29] - hist.mean()) / hist.std(), abs=1e-12)
    assert not z[:11].any()


# -- GOR deviation -----------------------------------------------------------------

def test_gor_spike_fires_only_at_spike():
    t = np.arange(60)
    oil = np.full(60, 100.0)
    gas = 100.0 * (10 + 0.5 * np.sin(2.1 * t))
    gas[40] = 100.0 * 30
    fm = make_features(60, oil_vol=oil, gas_vol=gas)
    assert fired(rule_gor_deviation(fm)) == [40]
    assert fired(label_well(fm).y) == [40]


def test_gor_constant_never_fires():
    fm = make_features(60, gas_vol=np.full(60, 1000.0))
    assert fired(rule_gor_deviation(fm)) == []


def test_gor_boundary_is_strict():
    # k=4 window [9, 11, 9, 11] has mean 10 and population std 1 exactly
    cfg = FeatureConfig(k=4)
    gas = np.array([9.0, 11.0, 9.0, 11.0, 9.0, 11.0, 9.0, 11.0, 13.0]) * 100.0
    oil = np.full(9, 100.0 - 1e-6)  # GOR = gas / (oil + eps) exactly gas / 100
    fm = make_features(9, cfg=cfg, oil_vol=oil, gas_vol=gas)
    np.testing.assert_array_equal(fm.column("gor"), gas / 100.0)
    assert fm.column("rmean_gor")[7] == 10.0 and fm.column("rstd_gor")[7] == 1.0
    rules = RuleConfig(gor_m=3.0, gor_min_history=4)
    assert fired(rule_gor_deviation(fm, rules)) == []
    gas[8] = 1300.01
    fm = make_features(9, cfg=cfg, oil_vol=oil, gas_vol=gas)
    assert fired(rule_gor_deviation(fm, rules)) == [8]


# -- aggregation -------------------------------------------------------------------

def test_aggregate_examples():
    lf = aggregate_labels([[0], [1], [0]])
    assert lf.y.tolist() == [1]
    assert aggregate_labels([[0, 0], [0, 0]]).y.tolist() == [0, 0]
    assert aggregate_labels([[1], [1], [1]]).y.tolist() == [1]
    with pytest.raises(ValidationError):
        aggregate_labels([[0, 1], [1]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5).flatmap(lambda k: st.lists(st.lists(st.integers(0, 1), min_size=k, max_size=k), min_size=1, max_size=40)))
def test_aggregate_is_or_and_monotone(rows):
    masks = [np.array(col) for col in zip(*rows)]
    lf = aggregate_labels(masks)
    np.testing.assert_array_equal(lf.y, np.logical_or.reduce(np.column_stack(masks), axis=1).astype(int))
    extra = aggregate_labels(masks + [np.ones(len(rows), dtype=int)])
    assert (extra.y >= lf.y).all()


def test_rule_config_and_registry_errors():
    with pytest.raises(ConfigError):
        RuleConfig(drop_frac=1.2)
    with pytest.raises(ConfigError):
        RuleConfig(gor_m=0)
    fm = make_features(10)
    broken = FeatureMatrix("W", fm.timestamps, fm.names[1:], fm.values[:, 1:], fm.kinds[1:])
    with pytest.raises(RegistryError, match="oil_vol"):
        rule_production_drop(broken)


def test_label_frame_csv_and_determinism():
    oil, whp = _pressure_flow_series()
    fm = make_features(80, oil_vol=oil, wellhead_pressure=whp)
    a, b = label_well(fm), label_well(fm)
    np.testing.assert_array_equal(a.rule_mask, b.rule_mask)
    back = LabelFrame.from_csv(a.to_csv(), "W")
    np.testing.assert_array_equal(back.y, a.y)
    np.testing.assert_array_equal(back.rule_mask, a.rule_mask)
    assert back.timestamps == a.timestamps and back.rule_names == a.rule_names
