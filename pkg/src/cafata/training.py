"""Mini-batch training with hand-derived gradients.

Embedding tables are packed into dense matrices, interactions are compiled
into ragged index arrays once, and every batch runs one fused kernel call
(see :mod:`cafata.kernels`). Gradients are sparse: a batch only touches the
rows it references, and by default the L2 penalty is applied per batch to
those rows only (``dense_reg`` switches to whole-table regularization).
Analytic gradients are validated against central finite differences via
:func:`gradient_check`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset
from .exceptions import FeaturelessItemError, TrainingDivergedError, UnknownIdError
from .kernels import VARIANT_CODES, fused_forward_backward
from .model import TABLE_NAMES, EmbeddingSpace, ItemCatalog, Situation, Variant

#: A training sample: (user, item, situation, rating on the normalized scale).
Sample = tuple[str, str, Situation, float]


@dataclass
class TrainingConfig:
    variant: Variant = Variant.CA_FATA
    dimension: int = 32
    learning_rate: float = 1e-3
    batch_size: int = 512
    l2_lambda: float = 1e-4
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    leaky_slope: float = 0.2
    init_std: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dense_reg: bool = False
    backend: str | None = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        # 0 is allowed as the documented degenerate no-op; otherwise stay on
        # the tuning grid range.
        if self.learning_rate != 0.0 and not (1e-5 <= self.learning_rate <= 1e-1):
            raise ValueError("learning_rate must be 0 or within [1e-5, 1e-1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not (0.0 < beta < 1.0):
                raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be > 0")


@dataclass
class GradientSet:
    """Sparse per-id gradients, same shape as the embedding tables."""

    tables: dict[str, dict[str, np.ndarray]]

    def get(self, table: str, entity_id: str) -> np.ndarray | None:
        return self.tables.get(table, {}).get(entity_id)

    def ids(self, table: str) -> list[str]:
        return sorted(self.tables.get(table, {}))


@dataclass
class PackedModel:
    """Embedding tables flattened to matrices with stable row order."""

    dimension: int
    leaky_slope: float
    rng_seed: int
    ids: dict[str, list[str]]
    index: dict[str, dict[str, int]]
    mats: dict[str, np.ndarray]


@dataclass
class CompiledCatalog:
    item_ids: list[str]
    item_index: dict[str, int]
    item_type_ptr: np.ndarray
    slot_type: np.ndarray
    slot_feat_ptr: np.ndarray
    slot_feat: np.ndarray
    max_types: int


@dataclass
class CompiledInteractions:
    user_idx: np.ndarray
    item_idx: np.ndarray
    target: np.ndarray
    sit_ptr: np.ndarray
    sit_factor: np.ndarray
    sit_cond: np.ndarray
    max_sit: int

    @property
    def n(self) -> int:
        return self.user_idx.shape[0]


def pack_space(space: EmbeddingSpace) -> PackedModel:
    ids = {name: sorted(space.table(name)) for name in TABLE_NAMES}
    mats = {}
    for name in TABLE_NAMES:
        rows = ids[name]
        if rows:
            mats[name] = np.stack([space.table(name)[i] for i in rows]).astype(np.float64)
        else:
            mats[name] = np.zeros((0, space.dimension))
    index = {name: {i: r for r, i in enumerate(ids[name])} for name in TABLE_NAMES}
    return PackedModel(
        dimension=space.dimension,
        leaky_slope=space.leaky_slope,
        rng_seed=space.rng_seed,
        ids=ids,
        index=index,
        mats=mats,
    )


def unpack_space(packed: PackedModel) -> EmbeddingSpace:
    space = EmbeddingSpace(
        dimension=packed.dimension,
        leaky_slope=packed.leaky_slope,
        rng_seed=packed.rng_seed,
    )
    for name in TABLE_NAMES:
        table = space.table(name)
        mat = packed.mats[name]
        for row, entity_id in enumerate(packed.ids[name]):
            table[entity_id] = mat[row].copy()
    return space


def compile_catalog(catalog: ItemCatalog, packed: PackedModel) -> CompiledCatalog:
    item_ids = sorted(set(catalog.items()) | set(packed.ids["item"]))
    item_index = {i: r for r, i in enumerate(item_ids)}
    type_index = packed.index["type"]
    feat_index = packed.index["feature"]

    item_type_ptr = [0]
    slot_type: list[int] = []
    slot_feat_ptr = [0]
    slot_feat: list[int] = []
    for item in item_ids:
        for type_id in catalog.types_of(item):
            if type_id not in type_index:
                raise UnknownIdError("type", type_id)
            slot_type.append(type_index[type_id])
            for feat in catalog.features_of(item, type_id):
                if feat not in feat_index:
                    raise UnknownIdError("feature", feat)
                slot_feat.append(feat_index[feat])
            slot_feat_ptr.append(len(slot_feat))
        item_type_ptr.append(len(slot_type))

    n_types = np.diff(np.asarray(item_type_ptr))
    max_types = int(n_types.max()) if n_types.size else 0
    return CompiledCatalog(
        item_ids=item_ids,
        item_index=item_index,
        item_type_ptr=np.asarray(item_type_ptr, dtype=np.int64),
        slot_type=np.asarray(slot_type, dtype=np.int64),
        slot_feat_ptr=np.asarray(slot_feat_ptr, dtype=np.int64),
        slot_feat=np.asarray(slot_feat, dtype=np.int64),
        max_types=max(1, max_types),
    )


def _compile_for(packed: PackedModel, catalog: ItemCatalog, variant: Variant) -> CompiledCatalog:
    # MF never reads features; an empty catalog keeps the item universe intact
    if Variant(variant) is Variant.MF:
        catalog = ItemCatalog()
    return compile_catalog(catalog, packed)


def compile_interactions(
    samples: Sequence[Sample],
    packed: PackedModel,
    ccat: CompiledCatalog,
    variant: Variant,
) -> CompiledInteractions:
    variant = Variant(variant)
    user_idx = np.empty(len(samples), dtype=np.int64)
    item_idx = np.empty(len(samples), dtype=np.int64)
    target = np.empty(len(samples), dtype=np.float64)
    sit_ptr = np.zeros(len(samples) + 1, dtype=np.int64)
    sit_factor: list[int] = []
    sit_cond: list[int] = []

    uindex = packed.index["user"]
    findex = packed.index["factor"]
    cindex = packed.index["condition"]

    for pos, (user, item, situation, rating) in enumerate(samples):
        if user not in uindex:
            raise UnknownIdError("user", user)
        if item not in ccat.item_index:
            raise UnknownIdError("item", item)
        row = ccat.item_index[item]
        if variant is not Variant.MF:
            if ccat.item_type_ptr[row + 1] == ccat.item_type_ptr[row]:
                raise FeaturelessItemError(item)
        user_idx[pos] = uindex[user]
        item_idx[pos] = row
        target[pos] = float(rating)
        if variant is not Variant.MF and situation:
            for cf in sorted(situation):
                cd = situation[cf]
                if cf not in findex:
                    raise UnknownIdError("factor", cf)
                if cd not in cindex:
                    raise UnknownIdError("condition", cd)
                sit_factor.append(findex[cf])
                sit_cond.append(cindex[cd])
        sit_ptr[pos + 1] = len(sit_factor)

    lengths = np.diff(sit_ptr)
    return CompiledInteractions(
        user_idx=user_idx,
        item_idx=item_idx,
        target=target,
        sit_ptr=sit_ptr,
        sit_factor=np.asarray(sit_factor, dtype=np.int64),
        sit_cond=np.asarray(sit_cond, dtype=np.int64),
        max_sit=max(1, int(lengths.max()) if lengths.size else 0),
    )


def _alloc_grads(packed: PackedModel):
    grads = {name: np.zeros_like(packed.mats[name]) for name in TABLE_NAMES}
    touched = {
        name: np.zeros(len(packed.ids[name]), dtype=np.bool_) for name in TABLE_NAMES
    }
    return grads, touched


def _dummy_grads(dim: int):
    grads = {name: np.zeros((0, dim)) for name in TABLE_NAMES}
    touched = {name: np.zeros(0, dtype=np.bool_) for name in TABLE_NAMES}
    return grads, touched


def _run_kernel(
    packed: PackedModel,
    ccat: CompiledCatalog,
    ci: CompiledInteractions,
    rows: np.ndarray,
    variant: Variant,
    compute_grad: bool,
    grads,
    touched,
    preds: np.ndarray,
    backend: str | None,
) -> float:
    return fused_forward_backward(
        packed.mats["user"],
        packed.mats["factor"],
        packed.mats["condition"],
        packed.mats["type"],
        packed.mats["feature"],
        packed.mats["item"],
        rows,
        ci.user_idx,
        ci.item_idx,
        ci.target,
        ci.sit_ptr,
        ci.sit_factor,
        ci.sit_cond,
        ccat.item_type_ptr,
        ccat.slot_type,
        ccat.slot_feat_ptr,
        ccat.slot_feat,
        packed.leaky_slope,
        VARIANT_CODES[Variant(variant).value],
        ci.max_sit,
        ccat.max_types,
        compute_grad,
        grads["user"],
        grads["factor"],
        grads["condition"],
        grads["type"],
        grads["feature"],
        grads["item"],
        touched["user"],
        touched["factor"],
        touched["condition"],
        touched["type"],
        touched["feature"],
        touched["item"],
        preds,
        backend=backend,
    )


def _touched_rows(
    ci: CompiledInteractions,
    ccat: CompiledCatalog,
    rows: np.ndarray,
    variant: Variant,
) -> dict[str, np.ndarray]:
    """Row indices each table would receive gradient on, per the forward pass."""
    variant = Variant(variant)
    out = {name: np.empty(0, dtype=np.int64) for name in TABLE_NAMES}
    out["user"] = np.unique(ci.user_idx[rows])
    if variant is Variant.MF:
        out["item"] = np.unique(ci.item_idx[rows])
        return out
    type_rows: list[np.ndarray] = []
    feat_rows: list[np.ndarray] = []
    for item_row in np.unique(ci.item_idx[rows]):
        a, b = ccat.item_type_ptr[item_row], ccat.item_type_ptr[item_row + 1]
        type_rows.append(ccat.slot_type[a:b])
        fa, fb = ccat.slot_feat_ptr[a], ccat.slot_feat_ptr[b]
        feat_rows.append(ccat.slot_feat[fa:fb])
    if feat_rows:
        out["feature"] = np.unique(np.concatenate(feat_rows))
    if not variant.uniform_types and type_rows:
        out["type"] = np.unique(np.concatenate(type_rows))
    if variant.uses_context:
        spans = [
            np.arange(ci.sit_ptr[s], ci.sit_ptr[s + 1]) for s in rows
        ]
        if spans:
            span = np.concatenate(spans)
            out["factor"] = np.unique(ci.sit_factor[span])
            out["condition"] = np.unique(ci.sit_cond[span])
    return out


def _squared_norm_rows(packed: PackedModel, touched: dict[str, np.ndarray]) -> float:
    total = 0.0
    for name in TABLE_NAMES:
        rows = touched[name]
        if rows.size:
            block = packed.mats[name][rows]
            total += float(np.sum(block * block))
    return total


def _dense_squared_norm(packed: PackedModel) -> float:
    return float(sum(np.sum(m * m) for m in packed.mats.values()))


def loss(
    batch: Sequence[Sample],
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    l2_lambda: float,
    variant: Variant = Variant.CA_FATA,
    reg: str = "dense",
    backend: str | None = None,
) -> float:
    """Sum of squared errors over the batch plus the L2 penalty.

    ``reg="dense"`` penalizes every parameter (the loss as written);
    ``reg="sparse"`` restricts the penalty to parameters the batch touches,
    matching what the training loop optimizes per batch.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if reg not in ("dense", "sparse"):
        raise ValueError("reg must be 'dense' or 'sparse'")
    variant = Variant(variant)
    packed = pack_space(space)
    ccat = _compile_for(packed, catalog, variant)
    ci = compile_interactions(batch, packed, ccat, variant)
    rows = np.arange(ci.n, dtype=np.int64)
    preds = np.empty(ci.n)
    grads, touched = _dummy_grads(packed.dimension)
    sse = _run_kernel(packed, ccat, ci, rows, variant, False, grads, touched, preds, backend)
    if l2_lambda == 0.0:
        return float(sse)
    if reg == "dense":
        return float(sse + l2_lambda * _dense_squared_norm(packed))
    touched_rows = _touched_rows(ci, ccat, rows, variant)
    return float(sse + l2_lambda * _squared_norm_rows(packed, touched_rows))


def backward(
    batch: Sequence[Sample],
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    l2_lambda: float,
    variant: Variant = Variant.CA_FATA,
    dense_reg: bool = False,
    backend: str | None = None,
) -> GradientSet:
    """Analytic gradient of :func:`loss` with respect to every touched vector.

    With ``dense_reg`` every parameter additionally receives its ``2*lambda*v``
    term; otherwise only batch-touched parameters appear in the result.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    variant = Variant(variant)
    packed = pack_space(space)
    ccat = _compile_for(packed, catalog, variant)
    ci = compile_interactions(batch, packed, ccat, variant)
    rows = np.arange(ci.n, dtype=np.int64)
    preds = np.empty(ci.n)
    grads, touched = _alloc_grads(packed)
    _run_kernel(packed, ccat, ci, rows, variant, True, grads, touched, preds, backend)

    result: dict[str, dict[str, np.ndarray]] = {name: {} for name in TABLE_NAMES}
    for name in TABLE_NAMES:
        mat = packed.mats[name]
        gmat = grads[name]
        if dense_reg and l2_lambda > 0.0:
            rows_out = np.arange(mat.shape[0])
        else:
            rows_out = np.nonzero(touched[name])[0]
        for row in rows_out:
            g = gmat[row].copy()
            if l2_lambda > 0.0 and (dense_reg or touched[name][row]):
                g += 2.0 * l2_lambda * mat[row]
            result[name][packed.ids[name][row]] = g
    return GradientSet(tables=result)


def gradient_check(
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    sample: Sample,
    h: float = 1e-6,
    variant: Variant = Variant.CA_FATA,
    l2_lambda: float = 0.0,
    backend: str | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every coordinate of every parameter touched by the sample is perturbed by
    ``+-h``; the relative error denominator is max(|analytic|, |numeric|,
    1e-8). The loss uses the sparse regularization scope, consistent with
    :func:`backward`'s default.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    variant = Variant(variant)
    packed = pack_space(space)
    ccat = _compile_for(packed, catalog, variant)
    ci = compile_interactions([sample], packed, ccat, variant)
    rows = np.arange(1, dtype=np.int64)
    preds = np.empty(1)

    grads, touched = _alloc_grads(packed)
    _run_kernel(packed, ccat, ci, rows, variant, True, grads, touched, preds, backend)
    touched_rows = {name: np.nonzero(touched[name])[0] for name in TABLE_NAMES}

    dummy_g, dummy_t = _dummy_grads(packed.dimension)

    def eval_loss() -> float:
        sse = _run_kernel(
            packed, ccat, ci, rows, variant, False, dummy_g, dummy_t, preds, backend
        )
        if l2_lambda == 0.0:
            return float(sse)
        return float(sse + l2_lambda * _squared_norm_rows(packed, touched_rows))

    max_rel = 0.0
    for name in TABLE_NAMES:
        mat = packed.mats[name]
        for row in touched_rows[name]:
            analytic_row = grads[name][row] + (
                2.0 * l2_lambda * mat[row] if l2_lambda > 0.0 else 0.0
            )
            for k in range(packed.dimension):
                orig = mat[row, k]
                mat[row, k] = orig + h
                up = eval_loss()
                mat[row, k] = orig - h
                down = eval_loss()
                mat[row, k] = orig
                numeric = (up - down) / (2.0 * h)
                analytic = float(analytic_row[k])
                denom = max(abs(analytic), abs(numeric), 1e-8)
                max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel


def predict_batch(
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    queries: Sequence[tuple[str, str, Situation]],
    variant: Variant = Variant.CA_FATA,
    backend: str | None = None,
) -> np.ndarray:
    """Vectorized ratings (normalized scale) for (user, item, situation) triples."""
    variant = Variant(variant)
    packed = pack_space(space)
    ccat = _compile_for(packed, catalog, variant)
    samples = [(u, i, s, 0.0) for (u, i, s) in queries]
    ci = compile_interactions(samples, packed, ccat, variant)
    rows = np.arange(ci.n, dtype=np.int64)
    preds = np.empty(ci.n)
    grads, touched = _dummy_grads(packed.dimension)
    _run_kernel(packed, ccat, ci, rows, variant, False, grads, touched, preds, backend)
    return preds


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float


@dataclass
class TrainingResult:
    space: EmbeddingSpace
    history: list[EpochStats]
    best_epoch: int
    best_val_rmse: float


def initialize_space(dataset: Dataset, config: TrainingConfig) -> EmbeddingSpace:
    """Seeded embedding space covering every id in the dataset.

    The item table is only materialized for the MF variant; feature-driven
    variants never read it.
    """
    interactions = dataset.all_interactions()
    users = {i.user for i in interactions}
    items = {i.item for i in interactions} | set(dataset.catalog.items())
    factors = set(dataset.factor_schema)
    conditions = set()
    for conds in dataset.factor_schema.values():
        conditions.update(conds)
    for inter in interactions:
        factors.update(inter.situation)
        conditions.update(inter.situation.values())
    if config.variant is Variant.MF:
        return EmbeddingSpace.initialize(
            config.dimension,
            users=users,
            items=items,
            seed=config.seed,
            leaky_slope=config.leaky_slope,
            init_std=config.init_std,
        )
    return EmbeddingSpace.initialize(
        config.dimension,
        users=users,
        factors=factors,
        conditions=conditions,
        types=dataset.catalog.all_types(),
        features=dataset.catalog.all_features(),
        seed=config.seed,
        leaky_slope=config.leaky_slope,
        init_std=config.init_std,
    )


def _as_samples(interactions, dataset: Dataset) -> list[Sample]:
    scale = dataset.scale
    return [
        (i.user, i.item, i.situation, scale.to_normalized(i.rating))
        for i in interactions
    ]


def train(dataset: Dataset, config: TrainingConfig) -> TrainingResult:
    """Optimize all embeddings with mini-batch Adam and early stopping.

    Deterministic for a fixed config and dataset: initialization, epoch
    shuffles and update order all flow from ``config.seed``. Returns the
    parameters of the epoch with the best validation RMSE (the untouched
    initialization counts as the starting snapshot).
    """
    if not dataset.train:
        raise ValueError("empty train partition")
    if not dataset.val:
        raise ValueError("empty validation partition")
    variant = config.variant

    space = initialize_space(dataset, config)
    packed = pack_space(space)
    ccat = _compile_for(packed, dataset.catalog, variant)
    ci_train = compile_interactions(_as_samples(dataset.train, dataset), packed, ccat, variant)
    ci_val = compile_interactions(_as_samples(dataset.val, dataset), packed, ccat, variant)

    grads, touched = _alloc_grads(packed)
    m1 = {name: np.zeros_like(packed.mats[name]) for name in TABLE_NAMES}
    m2 = {name: np.zeros_like(packed.mats[name]) for name in TABLE_NAMES}
    dummy_g, dummy_t = _dummy_grads(packed.dimension)
    val_rows = np.arange(ci_val.n, dtype=np.int64)
    val_preds = np.empty(ci_val.n)
    train_preds = np.empty(ci_train.n)

    def validation_rmse() -> float:
        _run_kernel(
            packed, ccat, ci_val, val_rows, variant, False, dummy_g, dummy_t, val_preds,
            config.backend,
        )
        return float(np.sqrt(np.mean((val_preds - ci_val.target) ** 2)))

    best_val = validation_rmse()
    best_mats = {name: packed.mats[name].copy() for name in TABLE_NAMES}
    best_epoch = 0
    epochs_since_best = 0

    rng = np.random.default_rng(config.seed)
    lam = config.l2_lambda
    step = 0
    history: list[EpochStats] = []

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(ci_train.n).astype(np.int64)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, ci_train.n, config.batch_size)):
            rows = np.ascontiguousarray(perm[start:start + config.batch_size])
            sse = _run_kernel(
                packed, ccat, ci_train, rows, variant, True, grads, touched,
                train_preds[: rows.size], config.backend,
            )
            if lam > 0.0:
                if config.dense_reg:
                    reg_val = lam * _dense_squared_norm(packed)
                    for name in TABLE_NAMES:
                        grads[name] += 2.0 * lam * packed.mats[name]
                        touched[name][:] = True
                else:
                    reg_rows = {
                        name: np.nonzero(touched[name])[0] for name in TABLE_NAMES
                    }
                    reg_val = lam * _squared_norm_rows(packed, reg_rows)
                    for name in TABLE_NAMES:
                        sel = reg_rows[name]
                        if sel.size:
                            grads[name][sel] += 2.0 * lam * packed.mats[name][sel]
            else:
                reg_val = 0.0
            batch_loss = float(sse + reg_val)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch, batch_no, batch_loss)
            epoch_loss += batch_loss

            step += 1
            corr1 = 1.0 - config.adam_beta1 ** step
            corr2 = 1.0 - config.adam_beta2 ** step
            for name in TABLE_NAMES:
                sel = np.nonzero(touched[name])[0]
                if not sel.size:
                    continue
                g = grads[name][sel]
                m1[name][sel] = config.adam_beta1 * m1[name][sel] + (1.0 - config.adam_beta1) * g
                m2[name][sel] = config.adam_beta2 * m2[name][sel] + (1.0 - config.adam_beta2) * (g * g)
                m_hat = m1[name][sel] / corr1
                v_hat = m2[name][sel] / corr2
                packed.mats[name][sel] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
                grads[name][sel] = 0.0
                touched[name][sel] = False

        val_rmse = validation_rmse()
        history.append(EpochStats(epoch=epoch, train_loss=epoch_loss, val_rmse=val_rmse))
        if val_rmse < best_val:
            best_val = val_rmse
            best_epoch = epoch
            for name in TABLE_NAMES:
                np.copyto(best_mats[name], packed.mats[name])
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > config.patience:
                break

    packed.mats = best_mats
    return TrainingResult(
        space=unpack_space(packed),
        history=history,
        best_epoch=best_epoch,
        best_val_rmse=best_val,
    )


def write_history_csv(history: Iterable[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_rmse"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_rmse)])
