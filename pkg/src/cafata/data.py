"""Dataset ingestion, preprocessing and serialization.

Interactions arrive as CSV with mandatory ``user_id,item_id,rating`` columns;
every extra column is a contextual factor and empty cells map to the factor's
reserved ``unknown:<factor>`` condition. Item features use the long format
``item_id,feature_type,feature_value``. Feature values are kept verbatim as
ids, so a value reused across types shares one embedding; namespace values
upstream if that is not wanted.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataFormatError
from .model import TABLE_NAMES, EmbeddingSpace, ItemCatalog, Variant

REQUIRED_COLUMNS = ("user_id", "item_id", "rating")
FEATURE_COLUMNS = ("item_id", "feature_type", "feature_value")
MODEL_FORMAT_VERSION = 1


def unknown_condition(factor: str) -> str:
    return f"unknown:{factor}"


@dataclass(frozen=True)
class RatingScale:
    """Closed rating interval, mapped linearly onto [-1, 1] for training."""

    min: float
    max: float

    def __post_init__(self):
        if not (self.min < self.max):
            raise ValueError("rating scale requires min < max")

    def to_normalized(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if np.any(arr < self.min) or np.any(arr > self.max):
            raise ValueError(
                f"rating outside scale [{self.min}, {self.max}]"
            )
        out = 2.0 * (arr - self.min) / (self.max - self.min) - 1.0
        return float(out) if np.isscalar(values) else out

    def to_original(self, values):
        arr = np.asarray(values, dtype=np.float64)
        out = (arr + 1.0) * (self.max - self.min) / 2.0 + self.min
        return float(out) if np.isscalar(values) else out

    @property
    def half_width(self) -> float:
        return (self.max - self.min) / 2.0


def scale_ratings(values, scale: RatingScale, direction: str):
    """Linear min-max map between the original scale and [-1, 1]."""
    if direction == "to_normalized":
        return scale.to_normalized(values)
    if direction == "to_original":
        return scale.to_original(values)
    raise ValueError("direction must be 'to_normalized' or 'to_original'")


@dataclass
class Interaction:
    user: str
    item: str
    rating: float
    situation: dict[str, str] = field(default_factory=dict)


@dataclass
class Dataset:
    train: list[Interaction]
    val: list[Interaction]
    test: list[Interaction]
    catalog: ItemCatalog
    scale: RatingScale
    factor_schema: dict[str, set[str]]

    def all_interactions(self) -> list[Interaction]:
        return [*self.train, *self.val, *self.test]

    def validate(self, require_features: bool = True) -> None:
        check_catalog = require_features or len(self.catalog) > 0
        for inter in self.all_interactions():
            if check_catalog and inter.item not in self.catalog:
                raise DataFormatError(
                    f"interaction references item {inter.item!r} absent from the catalog"
                )
            if not (self.scale.min <= inter.rating <= self.scale.max):
                raise DataFormatError(
                    f"rating {inter.rating} of ({inter.user!r}, {inter.item!r}) "
                    f"outside scale [{self.scale.min}, {self.scale.max}]"
                )
            for factor, cond in inter.situation.items():
                conds = self.factor_schema.get(factor)
                if conds is None:
                    raise DataFormatError(f"factor {factor!r} missing from schema")
                if cond not in conds:
                    raise DataFormatError(
                        f"condition {cond!r} not declared for factor {factor!r}"
                    )


def load_interactions(path) -> tuple[list[Interaction], dict[str, set[str]]]:
    """Parse an interactions CSV; returns rows plus the observed factor schema."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise DataFormatError(f"{path}: missing mandatory column {col!r}")
        col_of = {name: header.index(name) for name in header}
        factors = [h for h in header if h not in REQUIRED_COLUMNS]

        interactions: list[Interaction] = []
        schema: dict[str, set[str]] = {f: set() for f in factors}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}"
                )
            user = row[col_of["user_id"]].strip()
            item = row[col_of["item_id"]].strip()
            if not user or not item:
                raise DataFormatError(f"{path}: empty user_id or item_id at row {rownum}")
            raw = row[col_of["rating"]].strip()
            try:
                rating = float(raw)
            except ValueError:
                raise DataFormatError(
                    f"{path}: non-numeric rating {raw!r} at row {rownum}"
                )
            if not math.isfinite(rating):
                raise DataFormatError(f"{path}: non-finite rating at row {rownum}")
            situation = {}
            for factor in factors:
                cell = row[col_of[factor]].strip()
                cond = cell if cell else unknown_condition(factor)
                situation[factor] = cond
                schema[factor].add(cond)
            interactions.append(Interaction(user, item, rating, situation))
    return interactions, schema


def load_item_features(path) -> ItemCatalog:
    """Parse the long-format item features CSV into a catalog."""
    path = Path(path)
    catalog = ItemCatalog()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        for col in FEATURE_COLUMNS:
            if col not in header:
                raise DataFormatError(f"{path}: missing mandatory column {col!r}")
        col_of = {name: header.index(name) for name in FEATURE_COLUMNS}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            item = row[col_of["item_id"]].strip()
            type_id = row[col_of["feature_type"]].strip()
            feat = row[col_of["feature_value"]].strip()
            if not item or not type_id or not feat:
                raise DataFormatError(f"{path}: empty cell at row {rownum}")
            catalog.add(item, type_id, feat)
    return catalog


def log_transform_ratings(interactions: Iterable[Interaction]) -> list[Interaction]:
    """Replace each rating r (an interaction count) with ln(1 + r)."""
    out = []
    for inter in interactions:
        if inter.rating < 0:
            raise ValueError("log transform requires non-negative ratings")
        out.append(
            Interaction(inter.user, inter.item, math.log1p(inter.rating), dict(inter.situation))
        )
    return out


def k_core_filter(
    interactions: Sequence[Interaction], k: int, users_only: bool = False
) -> list[Interaction]:
    """Iteratively drop users (and items, unless ``users_only``) with fewer
    than k interactions until the remaining set is a fixed point."""
    if k < 1:
        raise ValueError("k must be >= 1")
    current = list(interactions)
    while True:
        user_counts = Counter(i.user for i in current)
        item_counts = Counter(i.item for i in current)
        kept = [
            i
            for i in current
            if user_counts[i.user] >= k and (users_only or item_counts[i.item] >= k)
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def split(
    interactions: Sequence[Interaction], seed: int
) -> tuple[list[Interaction], list[Interaction], list[Interaction]]:
    """Seeded uniform shuffle, then 8:1:1 contiguous cut (floor boundaries)."""
    n = len(interactions)
    if n < 10:
        raise ValueError(f"need at least 10 interactions to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    cut1 = int(math.floor(0.8 * n))
    cut2 = int(math.floor(0.9 * n))
    shuffled = [interactions[j] for j in order]
    return shuffled[:cut1], shuffled[cut1:cut2], shuffled[cut2:]


def infer_schema(interactions: Iterable[Interaction]) -> dict[str, set[str]]:
    schema: dict[str, set[str]] = {}
    for inter in interactions:
        for factor, cond in inter.situation.items():
            schema.setdefault(factor, set()).add(cond)
    return schema


def infer_scale(interactions: Sequence[Interaction]) -> RatingScale:
    ratings = [i.rating for i in interactions]
    lo, hi = min(ratings), max(ratings)
    if lo == hi:
        raise ValueError(
            "cannot infer a rating scale from constant ratings; pass one explicitly"
        )
    return RatingScale(lo, hi)


def prepare_dataset(
    interactions: Sequence[Interaction],
    catalog: ItemCatalog,
    seed: int,
    scale: RatingScale | None = None,
    k_core: int | None = None,
    users_only_core: bool = False,
    log_transform: bool = False,
    require_features: bool = True,
) -> Dataset:
    """Apply preprocessing in order (log transform, k-core), then split 8:1:1."""
    rows = list(interactions)
    if log_transform:
        rows = log_transform_ratings(rows)
    if k_core is not None:
        rows = k_core_filter(rows, k_core, users_only=users_only_core)
    if scale is None:
        scale = infer_scale(rows)
    train, val, test = split(rows, seed)
    dataset = Dataset(
        train=train,
        val=val,
        test=test,
        catalog=catalog,
        scale=scale,
        factor_schema=infer_schema(rows),
    )
    dataset.validate(require_features=require_features)
    return dataset


def write_interactions_csv(path, interactions: Sequence[Interaction], factors: Sequence[str]) -> None:
    """Inverse of :func:`load_interactions`; reserved unknown conditions are
    written back as empty cells."""
    factors = list(factors)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*REQUIRED_COLUMNS, *factors])
        for inter in interactions:
            cells = [inter.user, inter.item, repr(inter.rating)]
            for factor in factors:
                cond = inter.situation.get(factor, unknown_condition(factor))
                cells.append("" if cond == unknown_condition(factor) else cond)
            writer.writerow(cells)


def write_features_csv(path, catalog: ItemCatalog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_COLUMNS)
        for item in catalog.items():
            for type_id, feats in catalog.grouped(item).items():
                for feat in feats:
                    writer.writerow([item, type_id, feat])


@dataclass
class ModelBundle:
    """Everything needed to serve a trained model from one JSON file."""

    space: EmbeddingSpace
    catalog: ItemCatalog
    factor_schema: dict[str, set[str]]
    scale: RatingScale
    variant: Variant
    meta: dict = field(default_factory=dict)


def save_model(path, bundle: ModelBundle) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "dimension": bundle.space.dimension,
        "leaky_slope": bundle.space.leaky_slope,
        "rng_seed": bundle.space.rng_seed,
        "variant": bundle.variant.value,
        "scale": {"min": bundle.scale.min, "max": bundle.scale.max},
        "factor_schema": {
            factor: sorted(conds) for factor, conds in bundle.factor_schema.items()
        },
        "catalog": bundle.catalog.as_dict(),
        "meta": bundle.meta,
        "tables": {
            name: {
                entity_id: [float(x) for x in vec]
                for entity_id, vec in sorted(bundle.space.table(name).items())
            }
            for name in TABLE_NAMES
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataFormatError(f"unsupported model format version {version!r}")
    tables = {
        name: {
            entity_id: np.asarray(values, dtype=np.float64)
            for entity_id, values in doc["tables"].get(name, {}).items()
        }
        for name in TABLE_NAMES
    }
    space = EmbeddingSpace(
        dimension=int(doc["dimension"]),
        leaky_slope=float(doc["leaky_slope"]),
        rng_seed=int(doc.get("rng_seed", 0)),
        **{f"{name}_table": tables[name] for name in TABLE_NAMES},
    )
    return ModelBundle(
        space=space,
        catalog=ItemCatalog(doc.get("catalog", {})),
        factor_schema={
            factor: set(conds) for factor, conds in doc.get("factor_schema", {}).items()
        },
        scale=RatingScale(float(doc["scale"]["min"]), float(doc["scale"]["max"])),
        variant=Variant(doc["variant"]),
        meta=doc.get("meta", {}),
    )
