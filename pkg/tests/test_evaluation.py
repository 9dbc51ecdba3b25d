import json
import math

import numpy as np
import pytest

from cafata import (
    Dataset,
    Interaction,
    ItemCatalog,
    MetricsReport,
    RatingScale,
    TrainingConfig,
    Variant,
    binarize,
    classification_metrics,
    evaluate_model,
    rmse_mae,
    train,
)
from cafata.synthetic import PlantedConfig, planted_dataset


class TestRmseMae:
    def test_perfect_predictions(self):
        assert rmse_mae([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)

    def test_constant_offset(self):
        rmse, mae = rmse_mae([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
        assert rmse == pytest.approx(1.0) and mae == pytest.approx(1.0)

    def test_mixed_errors(self):
        rmse, mae = rmse_mae([1.0, -1.0, 2.0], [0.0, 0.0, 0.0])
        assert rmse == pytest.approx(math.sqrt(2.0))
        assert mae == pytest.approx(4.0 / 3.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            rmse_mae([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            rmse_mae([], [])

    def test_rmse_at_least_mae(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 50))
            rmse, mae = rmse_mae(rng.normal(size=n), rng.normal(size=n))
            assert rmse >= mae - 1e-12


class TestBinarize:
    def test_boundary_inclusive(self):
        out = binarize([2.9, 3.0, 3.1], 3.0)
        np.testing.assert_array_equal(out, [False, True, True])

    def test_frappe_threshold_inclusive(self):
        assert binarize([0.9030], 0.9030)[0]

    def test_all_below(self):
        assert not binarize([0.1, 0.2], 0.5).any()

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            binarize([float("nan")], 0.0)


class TestClassificationMetrics:
    def test_perfect(self):
        p, r, f1 = classification_metrics([True, False, True], [True, False, True])
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_counting(self):
        # TP=2, FP=1, FN=1
        pred = [True, True, True, False, False]
        targ = [True, True, False, True, False]
        p, r, f1 = classification_metrics(pred, targ)
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(2 / 3)
        assert f1 == pytest.approx(2 / 3)

    def test_zero_denominators(self):
        p, r, f1 = classification_metrics([False, False], [True, True])
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            classification_metrics([True], [True, False])


class TestMetricsReport:
    def test_f1_identity(self):
        report = MetricsReport(
            rmse=1.0, mae=0.5, precision=0.8, recall=0.4, f1=2 * 0.8 * 0.4 / 1.2,
            n=10, threshold=3.0,
        )
        assert report.f1 == pytest.approx(2 * 0.8 * 0.4 / (0.8 + 0.4))

    def test_mae_above_rmse_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            MetricsReport(rmse=0.5, mae=1.0, precision=0, recall=0, f1=0, n=1, threshold=0)

    def test_json_and_table(self):
        report = MetricsReport(rmse=1.0, mae=0.5, precision=1.0, recall=1.0, f1=1.0, n=3, threshold=2.0)
        doc = json.loads(report.to_json())
        assert doc["rmse"] == 1.0 and doc["n"] == 3
        table = report.format_table()
        assert "rmse" in table and "1.0000" in table


def memorizable_dataset():
    """20 interactions reused as train/val/test so a model can memorize them.

    Every item carries a unique tag feature, so each (user, item) rating has
    a dedicated degree of freedom and an exact fit exists.
    """
    rng = np.random.default_rng(5)
    catalog = ItemCatalog(
        {
            f"i{j}": {"genre": [f"g{j % 3}"], "tag": [f"tag{j}"]}
            for j in range(5)
        }
    )
    rows = [
        Interaction(f"u{j % 4}", f"i{j % 5}", float(rng.uniform(1, 5)), {})
        for j in range(20)
    ]
    scale = RatingScale(1, 5)
    return Dataset(
        train=rows, val=rows, test=rows, catalog=catalog,
        scale=scale, factor_schema={},
    )


class TestEvaluateModel:
    def test_memorization_oracle(self):
        dataset = memorizable_dataset()
        config = TrainingConfig(
            variant=Variant.FATA, dimension=16, learning_rate=1e-2,
            batch_size=20, l2_lambda=0.0, max_epochs=3000, patience=3000, seed=2,
        )
        result = train(dataset, config)
        report = evaluate_model(result.space, dataset, Variant.FATA, threshold=3.0)
        assert report.rmse <= 0.05

    def test_constant_predictor_mae(self):
        dataset = memorizable_dataset()
        # zero embeddings predict the scale midpoint after inverse scaling
        from cafata.training import initialize_space

        config = TrainingConfig(variant=Variant.FATA, dimension=4, seed=0, init_std=1e-12)
        space = initialize_space(dataset, config)
        for name in ("user", "type", "feature"):
            for key in space.table(name):
                space.table(name)[key] = np.zeros(4)
        report = evaluate_model(space, dataset, Variant.FATA, threshold=3.0)
        targets = np.array([i.rating for i in dataset.test])
        midpoint = 3.0
        assert report.mae == pytest.approx(np.mean(np.abs(targets - midpoint)), abs=1e-12)

    def test_n_equals_test_size(self):
        dataset, _ = planted_dataset(PlantedConfig(n_users=15, n_items=10, interactions_per_user=8, seed=1))
        config = TrainingConfig(dimension=4, max_epochs=2, seed=1)
        result = train(dataset, config)
        report = evaluate_model(result.space, dataset, Variant.CA_FATA, threshold=0.0)
        assert report.n == len(dataset.test)

    def test_empty_test_rejected(self):
        dataset = memorizable_dataset()
        dataset.test = []
        space = train(dataset, TrainingConfig(variant=Variant.FATA, dimension=2, max_epochs=1, seed=0)).space
        with pytest.raises(ValueError, match="empty test"):
            evaluate_model(space, dataset, Variant.FATA, threshold=3.0)

    def test_scale_consistency(self):
        # normalized-space errors scaled by half the range match original-space errors
        dataset, _ = planted_dataset(PlantedConfig(n_users=15, n_items=10, interactions_per_user=8, seed=4))
        config = TrainingConfig(dimension=4, max_epochs=3, seed=3)
        result = train(dataset, config)
        from cafata.training import predict_batch

        queries = [(i.user, i.item, i.situation) for i in dataset.test]
        preds_norm = predict_batch(result.space, dataset.catalog, queries, Variant.CA_FATA)
        targets_norm = np.array([dataset.scale.to_normalized(i.rating) for i in dataset.test])
        rmse_norm = float(np.sqrt(np.mean((preds_norm - targets_norm) ** 2)))
        report = evaluate_model(result.space, dataset, Variant.CA_FATA, threshold=0.0)
        assert report.rmse == pytest.approx(rmse_norm * dataset.scale.half_width, abs=1e-9)
