import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from common.errors import ConfigurationError, ContractError, DimensionError, SchemaError, UndefinedMetricError
from data_clean.normalization import fit_normalizer
from evaluation.metrics import mae, mape, residual_band_analysis
from evaluation.report import REPORT_SCHEMA_KEYS, report_from_predictions, stationwise_report, validate_report_dict
from models.fusion import build_model

pairs = st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=1, max_size=40)


# -- metrics -----------------------------------------------------------------
def test_mae_examples():
    assert mae([0.3, 0.2], [0.3, 0.2]) == 0.0
    assert mae([0.25, 0.35], [0.2, 0.4]) == pytest.approx(0.05)
    assert mae([0.3], [0.26]) == pytest.approx(0.04)


def test_mape_examples():
    assert mape([0.3, 0.2], [0.3, 0.2]) == 0.0
    assert mape([0.30, 0.20], [0.25, 0.25]) == pytest.approx(20.0)
    with pytest.raises(UndefinedMetricError, match="index 1"):
        mape([0.1, 0.2], [0.1, 0.0])


def test_metric_input_errors():
    with pytest.raises(ContractError):
        mae([], [])
    with pytest.raises(DimensionError):
        mae([0.1, 0.2], [0.1])


def test_residual_band_examples():
    targets = np.full(5, 0.3)
    residuals = np.array([-0.06, -0.02, 0.0, 0.03, 0.08])
    assert residual_band_analysis(targets + residuals, targets).fraction == pytest.approx(0.6)
    assert residual_band_analysis(targets, targets).fraction == 1.0
    assert residual_band_analysis([0.05], [0.0]).fraction == 1.0
    with pytest.raises(ConfigurationError):
        residual_band_analysis([0.1], [0.1], band=(0.05, -0.05))


def test_residual_histogram_covers_all_residuals():
    rng = np.random.default_rng(0)
    result = residual_band_analysis(rng.uniform(0, 1, 200), rng.uniform(0, 1, 200))
    assert result.histogram.counts.sum() == 200
    assert len(result.histogram.edges) == len(result.histogram.counts) + 1
    np.testing.assert_allclose(np.diff(result.histogram.edges), 0.01)


@settings(max_examples=100, deadline=None)
@given(pairs, st.randoms(use_true_random=False))
def test_metrics_ignore_pair_order(values, random):
    p, t = map(np.array, zip(*values))
    order = list(range(len(p)))
    random.shuffle(order)
    assert mae(p[order], t[order]) == pytest.approx(mae(p, t), abs=1e-12)
    assert mape(p[order], t[order]) == pytest.approx(mape(p, t), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(pairs, st.floats(-0.5, 0.5))
def test_mae_is_shift_invariant(values, shift):
    p, t = map(np.array, zip(*values))
    assert mae(p + shift, t + shift) == pytest.approx(mae(p, t), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(pairs, st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_band_fraction_grows_with_the_band(values, half_width, extra):
    p, t = map(np.array, zip(*values))
    narrow = residual_band_analysis(p, t, (-half_width - 1e-9, half_width + 1e-9)).fraction
    wide = residual_band_analysis(p, t, (-half_width - extra - 1e-9, half_width + extra + 1e-9)).fraction
    assert 0.0 <= narrow <= wide <= 1.0


def test_metrics_match_loops_on_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        p, t = rng.uniform(0.05, 0.6, n), rng.uniform(0.05, 0.6, n)
        errors = [abs(a - b) for a, b in zip(p, t)]
        assert mae(p, t) == pytest.approx(sum(errors) / n, abs=1e-12)
        assert mape(p, t) == pytest.approx(100 * sum(e / b for e, b in zip(errors, t)) / n, abs=1e-12)
        inside = sum(-0.05 <= a - b <= 0.05 for a, b in zip(p, t))
        assert residual_band_analysis(p, t).fraction == pytest.approx(inside / n, abs=1e-12)


# -- reports -----------------------------------------------------------------
@pytest.fixture
def trained_setup(tiny_config, make_samples):
    samples = make_samples(30, seed=2)
    stats = fit_normalizer(samples)
    return build_model(tiny_config("concat"), seed=0).eval(), samples, stats


def test_per_station_maes_recombine_to_overall(trained_setup):
    model, samples, stats = trained_setup
    report = stationwise_report(model, samples, stats)
    assert sum(r.n_samples for r in report.per_station.values()) == report.n_samples == 30
    weighted = sum(r.n_samples * r.mae for r in report.per_station.values()) / report.n_samples
    assert weighted == pytest.approx(report.mae, abs=1e-12)
    assert report.normalizer_fingerprint == stats.fingerprint()


def test_report_is_deterministic(trained_setup):
    model, samples, stats = trained_setup
    assert stationwise_report(model, samples, stats).to_dict() == stationwise_report(model, samples, stats).to_dict()


def test_single_station_overall_equals_station(make_samples):
    samples = make_samples(10, stations=("S1",))
    predictions = samples.targets + 0.01
    report = report_from_predictions("concat", predictions, samples)
    station = report.per_station["S1"]
    assert (station.mae, station.mape, station.band_fraction) == (report.mae, report.mape, report.band_fraction)


def test_report_json_matches_schema(tmp_path, trained_setup):
    model, samples, stats = trained_setup
    report = stationwise_report(model, samples, stats)
    path = report.to_json(tmp_path / "eval_report.json")
    loaded = json.loads(path.read_text())
    assert set(loaded) == set(REPORT_SCHEMA_KEYS)
    assert loaded["band"] == [-0.05, 0.05]
    validate_report_dict(loaded)
    del loaded["per_station"]["S1"]["mape"]
    with pytest.raises(SchemaError):
        validate_report_dict(loaded)


def test_report_frames(trained_setup):
    model, samples, stats = trained_setup
    report = stationwise_report(model, samples, stats)
    summary = report.to_frame()
    assert list(summary["scope"]) == ["overall", "S1", "S2", "S3"]
    residuals = report.residual_frame()
    np.testing.assert_allclose(residuals["residual"], residuals["prediction"] - residuals["target"])
    assert list(residuals["sample_id"]) == list(samples.sample_ids)
