"""Synthetic datasets generated from a hidden model.

Ratings are produced by running the full forward pass of a randomly drawn
embedding space and adding Gaussian noise, so a trained model of the same
shape can in principle recover them down to the noise floor. The per-table
scales control what matters: large condition vectors make ratings strongly
context-dependent, large type vectors make type importances peaked and
user-specific.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Interaction, RatingScale, split
from .model import EmbeddingSpace, ItemCatalog, Variant, contextual_user, predict
from .training import predict_batch


@dataclass
class PlantedConfig:
    n_users: int = 200
    n_items: int = 100
    n_factors: int = 3
    conditions_per_factor: int = 3
    n_types: int = 3
    features_per_type: int = 10
    min_item_features: int = 2
    max_item_features: int = 4
    interactions_per_user: int = 40
    hidden_dim: int = 8
    user_std: float = 0.32
    factor_std: float = 0.32
    condition_std: float = 0.32
    type_std: float = 0.32
    feature_std: float = 0.32
    noise_std: float = 0.05
    leaky_slope: float = 0.2
    seed: int = 0


def _fill_table(table: dict, ids, rng: np.random.Generator, std: float, dim: int) -> None:
    for entity_id in sorted(ids):
        table[entity_id] = rng.normal(0.0, std, dim)


def planted_model(cfg: PlantedConfig) -> tuple[EmbeddingSpace, ItemCatalog, dict[str, set[str]]]:
    """Hidden space, catalog and factor schema for one configuration."""
    rng = np.random.default_rng(cfg.seed)
    users = [f"u{j:04d}" for j in range(cfg.n_users)]
    items = [f"i{j:04d}" for j in range(cfg.n_items)]
    factors = [f"cf{j}" for j in range(cfg.n_factors)]
    schema = {
        cf: {f"{cf}v{k}" for k in range(cfg.conditions_per_factor)} for cf in factors
    }
    conditions = sorted(c for conds in schema.values() for c in conds)
    types = [f"t{j}" for j in range(cfg.n_types)]
    feature_pool = {
        t: [f"{t}f{k:02d}" for k in range(cfg.features_per_type)] for t in types
    }

    space = EmbeddingSpace(
        dimension=cfg.hidden_dim, leaky_slope=cfg.leaky_slope, rng_seed=cfg.seed
    )
    _fill_table(space.user_table, users, rng, cfg.user_std, cfg.hidden_dim)
    _fill_table(space.factor_table, factors, rng, cfg.factor_std, cfg.hidden_dim)
    _fill_table(space.condition_table, conditions, rng, cfg.condition_std, cfg.hidden_dim)
    _fill_table(space.type_table, types, rng, cfg.type_std, cfg.hidden_dim)
    all_features = sorted(f for feats in feature_pool.values() for f in feats)
    _fill_table(space.feature_table, all_features, rng, cfg.feature_std, cfg.hidden_dim)

    catalog = ItemCatalog()
    for item in items:
        for t in types:
            count = int(rng.integers(cfg.min_item_features, cfg.max_item_features + 1))
            picks = rng.choice(cfg.features_per_type, size=count, replace=False)
            for p in picks:
                catalog.add(item, t, feature_pool[t][int(p)])
    return space, catalog, schema


def planted_dataset(
    cfg: PlantedConfig, split_seed: int | None = None
) -> tuple[Dataset, EmbeddingSpace]:
    """Dataset drawn from a hidden model, split 8:1:1.

    Ratings live directly on the normalized [-1, 1] scale (the declared
    scale is the identity map); values falling outside are clipped.
    """
    space, catalog, schema = planted_model(cfg)
    rng = np.random.default_rng(cfg.seed + 1)

    users = sorted(space.user_table)
    items = sorted(catalog.items())
    factors = sorted(schema)
    conditions = {cf: sorted(schema[cf]) for cf in factors}

    queries = []
    for user in users:
        for _ in range(cfg.interactions_per_user):
            item = items[int(rng.integers(len(items)))]
            situation = {
                cf: conditions[cf][int(rng.integers(len(conditions[cf])))]
                for cf in factors
            }
            queries.append((user, item, situation))

    ratings = predict_batch(space, catalog, queries, Variant.CA_FATA)
    ratings = ratings + rng.normal(0.0, cfg.noise_std, len(queries))
    ratings = np.clip(ratings, -1.0, 1.0)

    interactions = [
        Interaction(user, item, float(r), dict(situation))
        for (user, item, situation), r in zip(queries, ratings)
    ]
    train, val, test = split(interactions, cfg.seed if split_seed is None else split_seed)
    dataset = Dataset(
        train=train,
        val=val,
        test=test,
        catalog=catalog,
        scale=RatingScale(-1.0, 1.0),
        factor_schema=schema,
    )
    dataset.validate()
    return dataset, space


def random_gradcheck_instance(
    seed: int,
    dim: int,
    variant: Variant = Variant.CA_FATA,
    kink_margin: float = 1e-4,
) -> tuple[EmbeddingSpace, ItemCatalog, tuple[str, str, dict[str, str], float]]:
    """Small random model plus one sample, safe for finite differences.

    Two numerical hazards are avoided by construction. Central differences
    are invalid where a softmax input sits on the LeakyReLU kink, so
    instances whose pre-activation scores fall within ``kink_margin`` of
    zero are redrawn. And the roundoff noise of the differenced loss scales
    with the squared residual while gradient magnitudes scale linearly, so
    the sample's target is placed a small controlled residual away from the
    model's own prediction; that keeps every per-coordinate relative error
    well below the noise floor of the comparison without weakening it (a
    wrong gradient formula still shows up at full size).
    """
    variant = Variant(variant)
    rng = np.random.default_rng(seed)
    for _ in range(200):
        n_factors = int(rng.integers(1, 3))
        factors = [f"cf{j}" for j in range(n_factors)]
        conditions = [f"{cf}v0" for cf in factors]
        types = ["t0", "t1"]
        features = {"t0": [], "t1": []}
        for t in types:
            for j in range(int(rng.integers(1, 4))):
                features[t].append(f"{t}f{j}")
        all_feats = [f for feats in features.values() for f in feats]

        space = EmbeddingSpace(dimension=dim, leaky_slope=0.2, rng_seed=seed)
        fill = lambda table, ids: _fill_table(table, ids, rng, 0.5, dim)
        fill(space.user_table, ["u0"])
        fill(space.factor_table, factors)
        fill(space.condition_table, conditions)
        fill(space.type_table, types)
        fill(space.feature_table, all_feats)
        fill(space.item_table, ["i0"])

        catalog = ItemCatalog({"i0": features})
        situation = dict(zip(factors, conditions))
        residual = float(rng.uniform(0.005, 0.03)) * (1 if rng.random() < 0.5 else -1)

        if variant is Variant.MF:
            rating_hat = predict("u0", "i0", situation, variant, space, catalog).rating_hat
            return space, catalog, ("u0", "i0", situation, rating_hat - residual)
        u = space.user_table["u0"]
        ok = True
        if variant.uses_context:
            betas = [float(np.dot(u, space.factor_table[cf])) for cf in factors]
            ok = all(abs(b) > kink_margin for b in betas)
            u_cs, _ = contextual_user("u0", situation, space) if ok else (u, {})
        else:
            u_cs = u
        if ok and not variant.uniform_types:
            gammas = [float(np.dot(u_cs, space.type_table[t])) for t in types]
            ok = all(abs(g) > kink_margin for g in gammas)
        if ok:
            rating_hat = predict("u0", "i0", situation, variant, space, catalog).rating_hat
            return space, catalog, ("u0", "i0", situation, rating_hat - residual)
    raise RuntimeError("could not draw a kink-free instance")


def context_heavy_config(seed: int = 0) -> PlantedConfig:
    """Configuration whose ratings depend strongly on the situation and on
    per-user type importance, used for the ablation trend check."""
    return PlantedConfig(
        condition_std=0.9,
        factor_std=0.6,
        type_std=1.2,
        user_std=0.3,
        feature_std=0.3,
        seed=seed,
    )
