from dataclasses import replace

import numpy as np
import pytest

from common.errors import ConfigurationError, ContractError, TrainingDivergedError
from data_clean.splitting import split_dataset
from models.fusion import HybridOutputs, build_model
from nn_core.tensor import Tensor
from training.experiments import (
    DEFAULT_FRACTIONS,
    ExperimentData,
    default_coefficient_grid,
    run_cells,
    run_coefficient_grid,
    run_station_fraction_experiment,
    simplex_grid,
    station_fraction_cells,
)
from training.losses import HybridCoefficients, base_loss, hybrid_loss
from training.trainer import ModelTrainer, TrainingConfig, train_model

FEATURES = ("f0", "f1", "f2", "f3")
FAST = TrainingConfig(epochs=3, batch_size=4, lr=1e-2, patience=0, seed=3)


def constant_outputs(concat, meteo, image):
    return HybridOutputs(Tensor(np.array([concat])), Tensor(np.array([meteo])), Tensor(np.array([image])))


@pytest.fixture
def experiment_data(make_samples):
    samples = make_samples(36, seed=4)
    return ExperimentData.from_splits(split_dataset(samples, seed=1), samples.feature_names)


# -- losses ------------------------------------------------------------------
def test_base_loss_examples():
    assert base_loss(Tensor(np.array([0.3, 0.2])), [0.3, 0.2]).item() == 0.0
    assert base_loss(Tensor(np.array([0.3])), [0.25], "mse").item() == pytest.approx(0.0025)
    assert base_loss(Tensor(np.array([0.3, 0.2])), [0.25, 0.25], "mae").item() == pytest.approx(0.05)
    with pytest.raises(ContractError):
        base_loss(Tensor(np.zeros(0)), np.zeros(0))
    with pytest.raises(ConfigurationError):
        base_loss(Tensor(np.array([0.3])), [0.25], "huber")


def test_hybrid_loss_weighted_sum():
    outputs = constant_outputs(0.2, 0.3, 0.1)
    total, terms = hybrid_loss(outputs, [0.0], HybridCoefficients(1.0, 1.0, 1.0), "mae")
    assert total.item() == pytest.approx(0.6)
    assert (terms.concat, terms.meteo, terms.image) == pytest.approx((0.2, 0.3, 0.1))
    total, _ = hybrid_loss(outputs, [0.0], HybridCoefficients(0.9, 0.0, 0.1), "mae")
    assert total.item() == pytest.approx(0.19)
    total, terms = hybrid_loss(outputs, [0.0], HybridCoefficients(0.7, 0.0, 0.0), "mae")
    assert total.item() == 0.7 * terms.concat


def test_hybrid_loss_is_linear_in_each_coefficient():
    outputs = constant_outputs(0.2, 0.3, 0.1)
    one, terms = hybrid_loss(outputs, [0.0], HybridCoefficients(0.5, 0.25, 0.125), "mae")
    two, _ = hybrid_loss(outputs, [0.0], HybridCoefficients(1.0, 0.25, 0.125), "mae")
    assert two.item() - one.item() == pytest.approx(0.5 * terms.concat, abs=1e-15)


def test_hybrid_loss_matches_the_weighted_terms_at_random_coefficients():
    rng = np.random.default_rng(12)
    outputs = HybridOutputs(*(Tensor(rng.uniform(0.1, 0.5, size=6)) for _ in range(3)))
    targets = rng.uniform(0.1, 0.5, size=6)
    for _ in range(5):
        coeffs = HybridCoefficients(*rng.uniform(0.0, 1.0, size=3))
        total, terms = hybrid_loss(outputs, targets, coeffs)
        expected = coeffs.delta * terms.concat + coeffs.gamma * terms.meteo + coeffs.lam * terms.image
        assert total.item() == pytest.approx(expected, abs=1e-12)


def test_invalid_coefficients():
    with pytest.raises(ConfigurationError):
        HybridCoefficients(0.0, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        HybridCoefficients(1.0, -0.1, 0.0)


def test_zero_auxiliary_weights_leave_concat_gradients_unchanged(tiny_config, tiny_samples):
    model = build_model(tiny_config("hybrid"), seed=4)
    batch = tiny_samples.batch(np.arange(6))
    shared = [p for name, p in model.named_parameters() if not name.startswith(("meteo_head", "image_head"))]

    model.zero_grad()
    total, _ = hybrid_loss(model(batch), batch.targets, HybridCoefficients(0.8, 0.0, 0.0))
    total.backward()
    hybrid_grads = [p.grad.copy() for p in shared]

    model.zero_grad()
    (base_loss(model(batch).combined, batch.targets) * 0.8).backward()
    for p, expected in zip(shared, hybrid_grads):
        np.testing.assert_allclose(p.grad, expected, rtol=0, atol=1e-12)


# -- training loop -----------------------------------------------------------
def test_training_config_validation():
    with pytest.raises(ConfigurationError):
        TrainingConfig(batch_size=1)
    with pytest.raises(ConfigurationError):
        TrainingConfig(lr=0.0)
    with pytest.raises(ConfigurationError):
        TrainingConfig(optimizer="rmsprop")
    cfg = TrainingConfig.from_mapping({"epochs": 5, "coefficients": {"delta": 0.9, "gamma": 0.0, "lambda": 0.1}})
    assert cfg.epochs == 5 and cfg.coefficients.as_tuple() == (0.9, 0.0, 0.1)


def test_same_seed_gives_identical_training(tiny_config, experiment_data):
    runs = []
    for _ in range(2):
        model, log = train_model(build_model(tiny_config("hybrid"), seed=2), experiment_data.train,
                                 experiment_data.val, FAST)
        runs.append((model.state_dict(), log.to_frame()))
    (state_a, log_a), (state_b, log_b) = runs
    assert log_a.equals(log_b)
    for name, value in state_a.items():
        np.testing.assert_array_equal(state_b[name], value)


def test_meteo_only_model_fits_a_linear_task(tiny_config, make_samples):
    samples = make_samples(64, seed=8)
    f = np.random.default_rng(9).uniform(-1.0, 1.0, size=samples.features.shape)
    samples = replace(samples, features=f, targets=0.45 + 0.15 * (f[:, 0] - f[:, 1] + 0.5 * f[:, 2]))
    config = TrainingConfig(epochs=200, batch_size=16, lr=1e-2, patience=0, seed=0)
    _, log = train_model(build_model(tiny_config("meteo_only"), seed=0), samples, samples, config)
    frame = log.to_frame()
    assert frame["train_loss"].iloc[-1] < 0.01 * frame["train_loss"].iloc[0]


def test_early_stopping_keeps_the_best_checkpoint(tiny_config, experiment_data):
    config = TrainingConfig(epochs=30, batch_size=4, lr=0.05, patience=2, seed=1)
    trainer = ModelTrainer(build_model(tiny_config("concat"), seed=1), config)
    log = trainer.fit(experiment_data.train, experiment_data.val)
    assert 1 <= len(log) <= 30
    assert log.best_val_loss == min(r.val_loss for r in log.records)
    assert trainer.validate(experiment_data.val) == log.best_val_loss
    assert not trainer.model.training


def test_log_columns_follow_the_variant(tiny_config, experiment_data):
    _, hybrid = train_model(build_model(tiny_config("hybrid"), seed=0), experiment_data.train, experiment_data.val, FAST)
    assert list(hybrid.to_frame().columns) == ["epoch", "train_loss", "val_loss", "l_concat", "l_meteo", "l_image"]
    _, concat = train_model(build_model(tiny_config("concat"), seed=0), experiment_data.train, experiment_data.val, FAST)
    assert list(concat.to_frame(include_seconds=True).columns) == ["epoch", "train_loss", "val_loss", "seconds"]


def test_learnable_weights_are_logged_from_their_initial_values(tiny_config, experiment_data):
    cfg = tiny_config("learnable_param", init_alpha=1.0, init_beta=1.0)
    _, log = train_model(build_model(cfg, seed=0), experiment_data.train, experiment_data.val, FAST)
    frame = log.to_frame()
    assert len(frame) == len(log) == 3
    assert (frame["alpha"].iloc[0], frame["beta"].iloc[0]) == (1.0, 1.0)
    assert frame["alpha"].iloc[1] != 1.0


def test_single_complementary_weights_sum_to_one(tiny_config, experiment_data):
    cfg = tiny_config("learnable_param", learnable_mode="single_complementary", init_alpha=0.5)
    model, log = train_model(build_model(cfg, seed=0), experiment_data.train, experiment_data.val, FAST)
    frame = log.to_frame()
    np.testing.assert_allclose(frame["alpha"] + frame["beta"], 1.0, atol=1e-15)
    alpha, beta = model.modality_weights()
    assert alpha + beta == pytest.approx(1.0, abs=1e-15)


def test_non_finite_loss_names_epoch_and_batch(tiny_config, tiny_samples):
    broken = replace(tiny_samples, targets=np.full(len(tiny_samples), np.nan))
    with pytest.raises(TrainingDivergedError) as info:
        train_model(build_model(tiny_config("concat"), seed=0), broken, broken, FAST)
    assert (info.value.epoch, info.value.batch) == (1, 0)


# -- experiment drivers ------------------------------------------------------
def test_default_coefficient_grid():
    grid = [c.as_tuple() for c in default_coefficient_grid()]
    for triple in [(1.0, 1.0, 1.0), (0.9, 0.0, 0.1), (0.9, 0.1, 0.0), (0.8, 0.2, 0.0)]:
        assert triple in grid
    assert len(grid) == len(set(grid))
    assert all(sum(t) == pytest.approx(1.0) for t in simplex_grid(0.25))
    assert len(simplex_grid(0.5)) == 6
    with pytest.raises(ConfigurationError):
        simplex_grid(0.0)


def test_single_triple_grid_gives_one_row(tiny_config, experiment_data):
    frame = run_coefficient_grid(tiny_config("concat"), FAST.replace(epochs=2), experiment_data,
                                 [HybridCoefficients(1.0, 1.0, 1.0)])
    assert len(frame) == 1
    row = frame.iloc[0]
    assert (row["delta"], row["gamma"], row["lambda"], row["status"]) == (1.0, 1.0, 1.0, "ok")
    assert row["test_mae"] >= 0 and row["test_mape"] >= 0
    with pytest.raises(ConfigurationError):
        run_coefficient_grid(tiny_config("concat"), FAST, experiment_data, [])


def test_failing_cells_are_recorded_and_the_rest_continue():
    def fails():
        raise ContractError("boom")

    frame = run_cells([({"cell": 0}, lambda: {"test_mae": 0.1}), ({"cell": 1}, fails), ({"cell": 2}, lambda: {"test_mae": 0.2})])
    assert list(frame["cell"]) == [0, 1, 2]
    assert list(frame["status"]) == ["ok", "failed", "ok"]
    assert frame.loc[1, "error"] == "boom"
    assert np.isnan(frame.loc[1, "test_mae"])
    assert list(frame.columns[-2:]) == ["status", "error"]


def test_unexpected_cell_error_does_not_abort_the_grid():
    def fails():
        raise ValueError("shapes (3,) and (4,) not aligned")

    cells = [({"cell": i}, (fails if i == 0 else lambda i=i: {"test_mae": 0.1 * i})) for i in range(3)]
    frame = run_cells(cells)
    assert list(frame["status"]) == ["failed", "ok", "ok"]
    assert frame.loc[0, "error"] == "ValueError: shapes (3,) and (4,) not aligned"
    assert frame.loc[2, "test_mae"] == pytest.approx(0.2)


def test_station_fraction_cells(make_samples):
    samples = make_samples(90, seed=5)
    cells = station_fraction_cells(samples, FEATURES, "S1", seed=3)
    assert [c.fraction for c in cells] == list(DEFAULT_FRACTIONS)
    assert DEFAULT_FRACTIONS == pytest.approx((0.0, 1 / 3, 2 / 3, 1.0))

    target_ids = set(samples.sample_ids[samples.station_ids == "S1"])
    empty = cells[0].data
    assert not target_ids & set(empty.train.sample_ids)
    assert not target_ids & set(empty.val.sample_ids)
    assert set(empty.test.station_ids) == {"S1"}

    counts = [c.n_target_train for c in cells]
    assert counts == sorted(counts) and counts[0] == 0
    used = [set(c.data.train.sample_ids) & target_ids for c in cells]
    assert all(a <= b for a, b in zip(used, used[1:]))
    assert all(list(c.data.test.sample_ids) == list(empty.test.sample_ids) for c in cells)


def test_station_fraction_preconditions(make_samples):
    with pytest.raises(ConfigurationError):
        station_fraction_cells(make_samples(30), FEATURES, "S9")
    with pytest.raises(ContractError):
        station_fraction_cells(make_samples(30, stations=("S1",)), FEATURES, "S1")


def test_station_fraction_experiment_rows(tiny_config, make_samples):
    frame = run_station_fraction_experiment(tiny_config("concat"), FAST.replace(epochs=2), make_samples(60, seed=6),
                                            FEATURES, "S2", seed=1)
    assert list(frame["fraction"]) == pytest.approx(list(DEFAULT_FRACTIONS))
    assert set(frame["target_station"]) == {"S2"}
    assert (frame["status"] == "ok").all()
