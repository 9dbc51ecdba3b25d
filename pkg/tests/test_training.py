import numpy as np
import pytest

from cafata import (
    Dataset,
    ItemCatalog,
    TrainingConfig,
    Variant,
    backward,
    gradient_check,
    loss,
    predict,
    train,
)
from cafata.exceptions import TrainingDivergedError
from cafata.synthetic import PlantedConfig, planted_dataset, random_gradcheck_instance
from cafata.training import write_history_csv

from conftest import WORKED_SITUATION, make_worked_catalog, make_worked_space


def worked_sample(rating):
    return ("u1", "i1", WORKED_SITUATION, rating)


class TestLoss:
    def test_zero_residual_zero_lambda(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        b = predict("u1", "i1", WORKED_SITUATION, Variant.CA_FATA, space, catalog)
        value = loss([worked_sample(b.rating_hat)], space, catalog, l2_lambda=0.0)
        assert value == 0.0

    def test_single_sample_squared_error(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        b = predict("u1", "i1", WORKED_SITUATION, Variant.CA_FATA, space, catalog)
        value = loss([worked_sample(b.rating_hat - 0.5)], space, catalog, l2_lambda=0.0)
        assert value == pytest.approx(0.25, abs=1e-12)

    def test_l2_term_uses_all_parameters(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        b = predict("u1", "i1", WORKED_SITUATION, Variant.CA_FATA, space, catalog)
        norm = space.parameter_squared_norm()
        value = loss([worked_sample(b.rating_hat - 0.5)], space, catalog, l2_lambda=0.01)
        assert value == pytest.approx(0.25 + 0.01 * norm, abs=1e-12)

    def test_derived_penalty_arithmetic(self):
        # one sample with residual 0.5 and ||theta||^2 = 4 at lambda 0.01 -> 0.29
        space = make_worked_space()
        catalog = ItemCatalog({"i": {"t1": ["f"]}})
        space.feature_table.clear()
        space.user_table.clear()
        space.factor_table.clear()
        space.condition_table.clear()
        space.type_table.clear()
        space.user_table["u"] = np.array([2.0])       # contributes 4 to the norm
        space.type_table["t1"] = np.array([0.0])
        space.feature_table["f"] = np.array([0.0])
        value = loss([("u", "i", {}, -0.5)], space, catalog, l2_lambda=0.01)
        assert value == pytest.approx(0.29, abs=1e-12)

    def test_sparse_reg_counts_touched_only(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        space.user_table["unused"] = np.array([10.0])
        b = predict("u1", "i1", WORKED_SITUATION, Variant.CA_FATA, space, catalog)
        dense = loss([worked_sample(b.rating_hat)], space, catalog, l2_lambda=1.0, reg="dense")
        sparse = loss([worked_sample(b.rating_hat)], space, catalog, l2_lambda=1.0, reg="sparse")
        assert dense == pytest.approx(sparse + 100.0, abs=1e-9)

    def test_empty_batch_errors(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        with pytest.raises(ValueError, match="empty batch"):
            loss([], space, catalog, l2_lambda=0.0)


class TestBackward:
    def test_zero_residual_zero_gradients(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        b = predict("u1", "i1", WORKED_SITUATION, Variant.CA_FATA, space, catalog)
        grads = backward([worked_sample(b.rating_hat)], space, catalog, l2_lambda=0.0)
        for table in ("user", "factor", "condition", "type", "feature"):
            for entity_id in grads.ids(table):
                np.testing.assert_allclose(grads.get(table, entity_id), 0.0, atol=1e-15)

    def test_zero_vectors_with_l2_give_zero_gradient(self):
        space = make_worked_space()
        for table in ("user", "factor", "condition", "type", "feature"):
            for key in space.table(table):
                space.table(table)[key] = np.zeros(1)
        catalog = make_worked_catalog()
        grads = backward([worked_sample(0.0)], space, catalog, l2_lambda=0.5)
        for table in ("user", "type", "feature"):
            for entity_id in grads.ids(table):
                np.testing.assert_array_equal(grads.get(table, entity_id), np.zeros(1))

    def test_untouched_parameters_absent_by_default(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        space.user_table["bystander"] = np.array([1.0])
        grads = backward([worked_sample(0.0)], space, catalog, l2_lambda=0.1)
        assert "bystander" not in grads.ids("user")

    def test_dense_reg_covers_untouched(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        space.user_table["bystander"] = np.array([1.0])
        grads = backward([worked_sample(0.0)], space, catalog, l2_lambda=0.1, dense_reg=True)
        np.testing.assert_allclose(grads.get("user", "bystander"), [0.2], atol=1e-15)

    def test_matches_finite_differences_on_worked_instance(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        err = gradient_check(space, catalog, worked_sample(0.1), h=1e-6)
        assert err <= 1e-6


class TestGradientCheck:
    @pytest.mark.parametrize("variant", list(Variant))
    @pytest.mark.parametrize("dim", [1, 4, 8])
    def test_random_models(self, variant, dim):
        for seed in range(3):
            space, catalog, sample = random_gradcheck_instance(
                1000 * seed + dim, dim, variant
            )
            err = gradient_check(space, catalog, sample, h=1e-6, variant=variant)
            assert err <= 1e-5

    def test_with_regularization(self):
        space, catalog, sample = random_gradcheck_instance(3, 8, Variant.CA_FATA)
        err = gradient_check(
            space, catalog, sample, h=1e-6, variant=Variant.CA_FATA, l2_lambda=0.01
        )
        assert err <= 1e-4  # the penalty term adds differencing noise

    def test_all_zero_model_exact(self):
        space = make_worked_space()
        for table in ("user", "factor", "condition", "type", "feature"):
            for key in space.table(table):
                space.table(table)[key] = np.zeros(1)
        catalog = make_worked_catalog()
        err = gradient_check(space, catalog, worked_sample(0.0), h=1e-6)
        assert err == 0.0

    def test_invalid_h(self):
        space, catalog = make_worked_space(), make_worked_catalog()
        with pytest.raises(ValueError, match="h must be"):
            gradient_check(space, catalog, worked_sample(0.0), h=0.0)


def small_dataset(seed=0, **overrides) -> Dataset:
    cfg = PlantedConfig(
        n_users=25, n_items=15, interactions_per_user=12, seed=seed, **overrides
    )
    dataset, _ = planted_dataset(cfg)
    return dataset


class TestTrain:
    def test_zero_learning_rate_keeps_parameters(self):
        dataset = small_dataset()
        config = TrainingConfig(
            variant=Variant.CA_FATA, dimension=4, learning_rate=0.0,
            max_epochs=3, patience=5, seed=1,
        )
        result = train(dataset, config)
        from cafata.training import initialize_space

        init = initialize_space(dataset, config)
        for name in ("user", "factor", "condition", "type", "feature"):
            for key in init.table(name):
                np.testing.assert_array_equal(
                    result.space.table(name)[key], init.table(name)[key]
                )

    def test_patience_zero_single_epoch(self):
        dataset = small_dataset()
        config = TrainingConfig(dimension=4, max_epochs=1, patience=0, seed=1)
        result = train(dataset, config)
        assert len(result.history) == 1
        assert result.history[0].epoch == 1

    def test_deterministic_given_seed(self):
        dataset = small_dataset()
        config = TrainingConfig(dimension=4, max_epochs=5, patience=2, seed=3)
        r1 = train(dataset, config)
        r2 = train(dataset, config)
        assert [h.val_rmse for h in r1.history] == [h.val_rmse for h in r2.history]
        for name in ("user", "factor", "condition", "type", "feature"):
            for key in r1.space.table(name):
                np.testing.assert_array_equal(
                    r1.space.table(name)[key], r2.space.table(name)[key]
                )

    def test_training_improves_over_init(self):
        dataset = small_dataset()
        config = TrainingConfig(dimension=8, max_epochs=40, patience=10, seed=5)
        result = train(dataset, config)
        first = result.history[0].val_rmse
        assert result.best_val_rmse <= first

    def test_empty_partitions_rejected(self):
        dataset = small_dataset()
        empty = Dataset(
            train=[], val=dataset.val, test=dataset.test,
            catalog=dataset.catalog, scale=dataset.scale,
            factor_schema=dataset.factor_schema,
        )
        with pytest.raises(ValueError, match="train"):
            train(empty, TrainingConfig(dimension=4))

    def test_divergence_raises_with_location(self):
        dataset = small_dataset()
        for inter in dataset.train:
            inter.rating = 1.0
        dataset.train[0].rating = float("nan")
        config = TrainingConfig(dimension=4, max_epochs=2, seed=1)
        with pytest.raises(TrainingDivergedError, match="epoch 1"):
            train(dataset, config)

    def test_mf_variant_trains(self):
        dataset = small_dataset()
        config = TrainingConfig(variant=Variant.MF, dimension=8, max_epochs=30, patience=10, seed=2)
        result = train(dataset, config)
        assert result.space.item_table
        assert result.best_val_rmse <= result.history[0].val_rmse

    def test_history_csv_round_trip(self, tmp_path):
        dataset = small_dataset()
        config = TrainingConfig(dimension=4, max_epochs=3, patience=5, seed=1)
        result = train(dataset, config)
        path = tmp_path / "history.csv"
        write_history_csv(result.history, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_rmse"
        assert len(lines) == len(result.history) + 1
        first = lines[1].split(",")
        assert int(first[0]) == 1
        assert float(first[2]) == result.history[0].val_rmse


class TestTrainingConfig:
    def test_learning_rate_grid_bounds(self):
        with pytest.raises(ValueError, match="learning_rate"):
            TrainingConfig(learning_rate=0.5)
        with pytest.raises(ValueError, match="learning_rate"):
            TrainingConfig(learning_rate=1e-6)
        TrainingConfig(learning_rate=0.0)  # documented degenerate case
        TrainingConfig(learning_rate=1e-5)
        TrainingConfig(learning_rate=1e-1)

    def test_batch_size_positive(self):
        with pytest.raises(ValueError, match="batch_size"):
            TrainingConfig(batch_size=0)

    def test_betas_open_interval(self):
        with pytest.raises(ValueError, match="betas"):
            TrainingConfig(adam_beta1=1.0)
        with pytest.raises(ValueError, match="betas"):
            TrainingConfig(adam_beta2=0.0)
