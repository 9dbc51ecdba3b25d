import numpy as np
import pytest

from cafata import EmbeddingSpace, ItemCatalog, Variant, predict


def make_worked_space() -> EmbeddingSpace:
    """The hand-evaluated d=1 instance used across modules.

    u=0.5 with one contextual factor (cf1=1.0, condition cd1=0.4) gives
    u_cs=0.9; types t1=1.0, t2=-1.0; features at_a=0.6 (t1), at_b=-0.5 and
    at_c=0.1 (t2). Expected rating 0.3574756..., type importances
    0.74649.../0.25350... at slope 0.2.
    """
    space = EmbeddingSpace(dimension=1, leaky_slope=0.2)
    space.user_table["u1"] = np.array([0.5])
    space.factor_table["cf1"] = np.array([1.0])
    space.condition_table["cd1"] = np.array([0.4])
    space.type_table["t1"] = np.array([1.0])
    space.type_table["t2"] = np.array([-1.0])
    space.feature_table["at_a"] = np.array([0.6])
    space.feature_table["at_b"] = np.array([-0.5])
    space.feature_table["at_c"] = np.array([0.1])
    return space


def make_worked_catalog() -> ItemCatalog:
    return ItemCatalog({"i1": {"t1": ["at_a"], "t2": ["at_b", "at_c"]}})


WORKED_SITUATION = {"cf1": "cd1"}
WORKED_RATING = 0.35747566800311675
WORKED_MUTED_AT_B = 0.41451452175214276
WORKED_PI_T1 = 0.7464939833376621


@pytest.fixture
def worked_space():
    return make_worked_space()


@pytest.fixture
def worked_catalog():
    return make_worked_catalog()


@pytest.fixture
def worked_breakdown(worked_space, worked_catalog):
    return predict(
        "u1", "i1", WORKED_SITUATION, Variant.CA_FATA, worked_space, worked_catalog
    )


def random_space(
    rng: np.random.Generator,
    dim: int,
    n_users: int = 3,
    n_factors: int = 2,
    n_conditions: int = 3,
    n_types: int = 3,
    n_features: int = 8,
    n_items: int = 2,
    std: float = 0.4,
) -> EmbeddingSpace:
    space = EmbeddingSpace(dimension=dim, leaky_slope=0.2)
    tables = (
        (space.user_table, [f"u{j}" for j in range(n_users)]),
        (space.factor_table, [f"cf{j}" for j in range(n_factors)]),
        (space.condition_table, [f"cd{j}" for j in range(n_conditions)]),
        (space.type_table, [f"t{j}" for j in range(n_types)]),
        (space.feature_table, [f"at{j}" for j in range(n_features)]),
        (space.item_table, [f"i{j}" for j in range(n_items)]),
    )
    for table, ids in tables:
        for entity_id in ids:
            table[entity_id] = rng.normal(0.0, std, dim)
    return space


def random_instance(rng: np.random.Generator, dim: int):
    """Random space plus a multi-feature pseudo item and situation."""
    space = random_space(rng, dim)
    catalog = ItemCatalog()
    feats = sorted(space.feature_table)
    rng.shuffle(feats)
    pos = 0
    for t in sorted(space.type_table)[: int(rng.integers(1, 4))]:
        for _ in range(int(rng.integers(1, 4))):
            if pos >= len(feats):
                break
            catalog.add("i0", t, feats[pos])
            pos += 1
    if pos == 0:
        catalog.add("i0", "t0", feats[0])
    factors = sorted(space.factor_table)
    conds = sorted(space.condition_table)
    situation = {
        cf: conds[int(rng.integers(len(conds)))]
        for cf in factors
        if rng.random() < 0.7
    }
    user = sorted(space.user_table)[int(rng.integers(len(space.user_table)))]
    return space, catalog, user, situation
