import numpy as np
import pytest

from cafata import Variant, predict, predict_batch
from cafata.kernels import HAVE_NUMBA, active_backend, available_backends

from conftest import random_instance


def test_numba_backend_available():
    # numba is a declared dependency; the fast path must exist here
    assert HAVE_NUMBA
    assert set(available_backends()) == {"numba", "numpy"}


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("CAFATA_BACKEND", "numpy")
    assert active_backend() == "numpy"
    monkeypatch.setenv("CAFATA_BACKEND", "numba")
    assert active_backend() == "numba"
    monkeypatch.setenv("CAFATA_BACKEND", "auto")
    assert active_backend() == "numba"
    monkeypatch.delenv("CAFATA_BACKEND")
    assert active_backend() == "numba"
    monkeypatch.setenv("CAFATA_BACKEND", "bogus")
    with pytest.raises(ValueError, match="invalid backend"):
        active_backend()


def test_explicit_override_beats_env(monkeypatch):
    monkeypatch.setenv("CAFATA_BACKEND", "numpy")
    assert active_backend("numba") == "numba"


def test_backends_agree_on_forward():
    rng = np.random.default_rng(17)
    for variant in Variant:
        for _ in range(10):
            dim = int(rng.integers(1, 9))
            space, catalog, user, situation = random_instance(rng, dim)
            queries = [(user, "i0" if variant is not Variant.MF else "i0", situation)]
            if variant is Variant.MF:
                space.item_table.setdefault("i0", rng.normal(size=dim))
            a = predict_batch(space, catalog, queries, variant, backend="numba")
            b = predict_batch(space, catalog, queries, variant, backend="numpy")
            # same source, same operation order: observed bit-identical
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_kernel_matches_reference_forward():
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        space, catalog, user, situation = random_instance(rng, dim)
        b = predict(user, "i0", situation, Variant.CA_FATA, space, catalog)
        kp = predict_batch(space, catalog, [(user, "i0", situation)], Variant.CA_FATA)
        worst = max(worst, abs(float(kp[0]) - b.rating_hat))
    assert worst <= 1e-12


def test_training_parity_across_backends():
    from cafata import TrainingConfig, train
    from cafata.synthetic import PlantedConfig, planted_dataset

    dataset, _ = planted_dataset(
        PlantedConfig(n_users=12, n_items=8, interactions_per_user=6, seed=2)
    )
    results = {}
    for backend in ("numba", "numpy"):
        config = TrainingConfig(
            dimension=4, max_epochs=4, patience=4, seed=9, backend=backend
        )
        results[backend] = train(dataset, config)
    a, b = results["numba"], results["numpy"]
    assert [h.val_rmse for h in a.history] == pytest.approx(
        [h.val_rmse for h in b.history], rel=1e-12
    )
    for name in ("user", "factor", "condition", "type", "feature"):
        for key in a.space.table(name):
            np.testing.assert_allclose(
                a.space.table(name)[key], b.space.table(name)[key],
                rtol=1e-12, atol=1e-15,
            )


def test_kernel_matches_reference_all_variants():
    rng = np.random.default_rng(29)
    for variant in Variant:
        for _ in range(20):
            dim = int(rng.integers(1, 6))
            space, catalog, user, situation = random_instance(rng, dim)
            if variant is Variant.MF:
                space.item_table.setdefault("i0", rng.normal(size=dim))
            b = predict(user, "i0", situation, variant, space, catalog)
            kp = predict_batch(space, catalog, [(user, "i0", situation)], variant)
            assert abs(float(kp[0]) - b.rating_hat) <= 1e-12
