"""Core additive rating model.

Every prediction is an additive aggregation of per-feature ratings: the user
vector is shifted by an importance-weighted sum of contextual-condition
vectors, feature-type importances are a softmax over the item's types, and the
item rating is the importance-weighted mean of per-feature inner products.
The full trace of one prediction is returned as a :class:`PredictionBreakdown`
so downstream consumers (argumentation, explanations) never recompute scores.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import FeaturelessItemError, UnknownIdError

#: Situations map a contextual-factor id to the active condition id.
Situation = Mapping[str, str]


class Variant(str, enum.Enum):
    """Model variants. AVG variants force uniform type importance, the
    context-free variants ignore the situation, MF drops features entirely."""

    CA_FATA = "ca-fata"
    FATA = "fata"
    AVG_CA_FATA = "avg-ca-fata"
    AVG_FATA = "avg-fata"
    MF = "mf"

    @property
    def uses_context(self) -> bool:
        return self in (Variant.CA_FATA, Variant.AVG_CA_FATA)

    @property
    def uniform_types(self) -> bool:
        return self in (Variant.AVG_CA_FATA, Variant.AVG_FATA)

    @classmethod
    def parse(cls, text: str) -> "Variant":
        try:
            return cls(text.strip().lower())
        except ValueError:
            options = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown variant {text!r} (expected one of: {options})")


TABLE_NAMES = ("user", "factor", "condition", "type", "feature", "item")


def leaky_relu(x: float, slope: float) -> float:
    return x if x > 0.0 else slope * x


@dataclass
class EmbeddingSpace:
    """All learnable vectors, one shared dimension.

    Tables map string ids to float64 vectors of length ``dimension``. The
    ``item_table`` only participates in the MF variant. Lookups in non-strict
    mode fall back to an implicit all-zero vector for unseen ids, so inference
    degrades gracefully instead of erroring.
    """

    dimension: int
    leaky_slope: float = 0.2
    rng_seed: int = 0
    user_table: dict[str, np.ndarray] = field(default_factory=dict)
    factor_table: dict[str, np.ndarray] = field(default_factory=dict)
    condition_table: dict[str, np.ndarray] = field(default_factory=dict)
    type_table: dict[str, np.ndarray] = field(default_factory=dict)
    feature_table: dict[str, np.ndarray] = field(default_factory=dict)
    item_table: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if not (0.0 < self.leaky_slope < 1.0):
            raise ValueError("leaky_slope must lie in (0, 1)")
        for name in TABLE_NAMES:
            table = self.table(name)
            for key, vec in table.items():
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (self.dimension,):
                    raise ValueError(
                        f"vector for {key!r} in table {name!r} has shape "
                        f"{arr.shape}, expected ({self.dimension},)"
                    )
                table[key] = arr

    def table(self, name: str) -> dict[str, np.ndarray]:
        if name not in TABLE_NAMES:
            raise KeyError(f"no table named {name!r}")
        return getattr(self, f"{name}_table")

    def vector(self, table: str, entity_id: str, strict: bool = True) -> np.ndarray:
        """Look up one embedding; zero vector for unseen ids when not strict."""
        tab = self.table(table)
        vec = tab.get(entity_id)
        if vec is None:
            if strict:
                raise UnknownIdError(table, entity_id)
            return np.zeros(self.dimension)
        return vec

    @classmethod
    def initialize(
        cls,
        dimension: int,
        *,
        users: Iterable[str] = (),
        factors: Iterable[str] = (),
        conditions: Iterable[str] = (),
        types: Iterable[str] = (),
        features: Iterable[str] = (),
        items: Iterable[str] = (),
        seed: int = 0,
        leaky_slope: float = 0.2,
        init_std: float = 0.1,
    ) -> "EmbeddingSpace":
        """Seeded i.i.d. Gaussian init, mean 0 and std ``init_std``.

        Small-magnitude starts keep both softmaxes near uniform early in
        training. Tables are filled in a fixed order with ids sorted, so the
        same seed always produces bit-identical vectors.
        """
        rng = np.random.default_rng(seed)
        space = cls(dimension=dimension, leaky_slope=leaky_slope, rng_seed=seed)
        groups = (users, factors, conditions, types, features, items)
        for name, ids in zip(TABLE_NAMES, groups):
            table = space.table(name)
            for entity_id in sorted(set(ids)):
                table[entity_id] = rng.normal(0.0, init_std, dimension)
        return space

    def parameter_squared_norm(self) -> float:
        total = 0.0
        for name in TABLE_NAMES:
            for vec in self.table(name).values():
                total += float(np.dot(vec, vec))
        return total


class ItemCatalog:
    """Per item: feature ids grouped by feature type.

    Types and features are stored sorted so every traversal of the catalog is
    canonical; predictions are therefore exactly invariant to the order in
    which features were declared.
    """

    def __init__(self, entries: Mapping[str, Mapping[str, Iterable[str]]] | None = None):
        self._items: dict[str, dict[str, tuple[str, ...]]] = {}
        if entries:
            for item_id, by_type in entries.items():
                for type_id, feats in by_type.items():
                    for feat in feats:
                        self.add(item_id, type_id, feat)

    def add(self, item_id: str, type_id: str, feature_id: str):
        by_type = self._items.setdefault(item_id, {})
        feats = set(by_type.get(type_id, ()))
        if feature_id not in feats:
            for other_type, other_feats in by_type.items():
                if other_type != type_id and feature_id in other_feats:
                    raise ValueError(
                        f"feature {feature_id!r} of item {item_id!r} already "
                        f"declared under type {other_type!r}"
                    )
            feats.add(feature_id)
            by_type[type_id] = tuple(sorted(feats))

    def items(self) -> list[str]:
        return sorted(self._items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._items

    def __len__(self) -> int:
        return len(self._items)

    def types_of(self, item_id: str) -> list[str]:
        return sorted(self._items.get(item_id, ()))

    def features_of(self, item_id: str, type_id: str) -> tuple[str, ...]:
        return self._items.get(item_id, {}).get(type_id, ())

    def grouped(self, item_id: str) -> dict[str, tuple[str, ...]]:
        by_type = self._items.get(item_id, {})
        return {t: by_type[t] for t in sorted(by_type)}

    def all_types(self) -> list[str]:
        seen = set()
        for by_type in self._items.values():
            seen.update(by_type)
        return sorted(seen)

    def all_features(self) -> list[str]:
        seen = set()
        for by_type in self._items.values():
            for feats in by_type.values():
                seen.update(feats)
        return sorted(seen)

    def as_dict(self) -> dict[str, dict[str, list[str]]]:
        return {
            item: {t: list(feats) for t, feats in sorted(by_type.items())}
            for item, by_type in sorted(self._items.items())
        }


@dataclass
class PredictionBreakdown:
    """Full trace of one prediction.

    ``rating_hat`` is always the exact weighted sum of ``type_contribution``
    under ``type_importance``; ``type_contribution[t]`` is the arithmetic mean
    of ``feature_rating`` over the features listed in ``type_features[t]``.
    """

    user: str
    item: str
    situation: dict[str, str]
    variant: Variant
    factor_importance: dict[str, float]
    type_importance: dict[str, float]
    feature_rating: dict[str, float]
    type_contribution: dict[str, float]
    type_features: dict[str, tuple[str, ...]]
    rating_hat: float
    no_evidence: bool = False

    def type_of(self, feature_id: str) -> str:
        for type_id, feats in self.type_features.items():
            if feature_id in feats:
                return type_id
        raise UnknownIdError("feature", feature_id)

    def as_dict(self) -> dict:
        return {
            "user": self.user,
            "item": self.item,
            "situation": dict(sorted(self.situation.items())),
            "variant": self.variant.value,
            "factor_importance": dict(sorted(self.factor_importance.items())),
            "type_importance": dict(sorted(self.type_importance.items())),
            "feature_rating": dict(sorted(self.feature_rating.items())),
            "type_contribution": dict(sorted(self.type_contribution.items())),
            "rating_hat": self.rating_hat,
            "no_evidence": self.no_evidence,
        }


def normalize_scores(
    scores: Sequence[tuple[str, float]], leaky_slope: float = 0.2
) -> dict[str, float]:
    """Map raw scores to strictly positive weights summing to one.

    Applies exp(LeakyReLU(score)) and normalizes. The sum runs over ids in
    sorted order, so the result is exactly invariant to input order. The max
    is subtracted before exponentiation for overflow safety; that leaves the
    mathematical result unchanged.
    """
    if len(scores) == 0:
        raise ValueError("empty normalization domain")
    ordered = sorted(scores, key=lambda kv: kv[0])
    ids = [k for k, _ in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in normalization domain")
    acts = []
    for key, value in ordered:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite score for {key!r}")
        acts.append(leaky_relu(value, leaky_slope))
    top = max(acts)
    exps = [math.exp(a - top) for a in acts]
    denom = sum(exps)
    return {key: e / denom for key, e in zip(ids, exps)}


def contextual_user(
    user: str,
    situation: Situation,
    space: EmbeddingSpace,
    strict: bool = True,
) -> tuple[np.ndarray, dict[str, float]]:
    """Situation-specific user vector plus the factor importances behind it.

    The importance of each factor present in the situation is the normalized
    inner product of the user vector with the factor vector; the user vector
    is then shifted by the importance-weighted sum of the active condition
    vectors. An empty situation returns the plain user vector.
    """
    u = space.vector("user", user, strict)
    if not situation:
        return u.copy(), {}
    factors = sorted(situation)
    scores = [
        (cf, float(np.dot(u, space.vector("factor", cf, strict)))) for cf in factors
    ]
    importance = normalize_scores(scores, space.leaky_slope)
    cs = np.zeros(space.dimension)
    for cf in factors:
        cd = space.vector("condition", situation[cf], strict)
        cs += importance[cf] * cd
    return u + cs, importance


def feature_type_importance(
    u_cs: np.ndarray,
    item: str,
    catalog: ItemCatalog,
    space: EmbeddingSpace,
    strict: bool = True,
) -> dict[str, float]:
    """Normalized importance of each of the item's feature types."""
    types = catalog.types_of(item)
    if not types:
        raise FeaturelessItemError(item)
    scores = [
        (t, float(np.dot(u_cs, space.vector("type", t, strict)))) for t in types
    ]
    return normalize_scores(scores, space.leaky_slope)


def feature_rating(
    u_cs: np.ndarray,
    feature: str,
    space: EmbeddingSpace,
    strict: bool = True,
) -> float:
    """Predicted rating of one feature: inner product with the user vector.

    The value is an unbounded real; trained models keep it approximately in
    [-1, 1] because targets live there, but no clamp is applied.
    """
    return float(np.dot(u_cs, space.vector("feature", feature, strict)))


def predict(
    user: str,
    item: str,
    situation: Situation,
    variant: Variant,
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    strict: bool = True,
) -> PredictionBreakdown:
    """Run the full forward pass and trace every intermediate quantity.

    In strict mode unknown ids and featureless items raise; otherwise unknown
    ids fall back to zero vectors and a featureless item yields a neutral
    rating of 0 flagged with ``no_evidence``.
    """
    variant = Variant(variant)
    situation = dict(situation or {})

    if variant is Variant.MF:
        u = space.vector("user", user, strict)
        i = space.vector("item", item, strict)
        return PredictionBreakdown(
            user=user,
            item=item,
            situation=situation,
            variant=variant,
            factor_importance={},
            type_importance={},
            feature_rating={},
            type_contribution={},
            type_features={},
            rating_hat=float(np.dot(u, i)),
        )

    if variant.uses_context:
        u_cs, factor_importance = contextual_user(user, situation, space, strict)
    else:
        u_cs = space.vector("user", user, strict).copy()
        factor_importance = {}

    grouped = catalog.grouped(item)
    if not grouped:
        if strict:
            raise FeaturelessItemError(item)
        return PredictionBreakdown(
            user=user,
            item=item,
            situation=situation,
            variant=variant,
            factor_importance=factor_importance,
            type_importance={},
            feature_rating={},
            type_contribution={},
            type_features={},
            rating_hat=0.0,
            no_evidence=True,
        )

    if variant.uniform_types:
        type_importance = {t: 1.0 / len(grouped) for t in grouped}
    else:
        type_importance = feature_type_importance(u_cs, item, catalog, space, strict)

    ratings: dict[str, float] = {}
    contributions: dict[str, float] = {}
    rating_hat = 0.0
    for type_id, feats in grouped.items():
        total = 0.0
        for feat in feats:
            p = feature_rating(u_cs, feat, space, strict)
            ratings[feat] = p
            total += p
        contributions[type_id] = total / len(feats)
        rating_hat += type_importance[type_id] * contributions[type_id]

    return PredictionBreakdown(
        user=user,
        item=item,
        situation=situation,
        variant=variant,
        factor_importance=factor_importance,
        type_importance=type_importance,
        feature_rating=ratings,
        type_contribution=contributions,
        type_features=grouped,
        rating_hat=rating_hat,
    )
