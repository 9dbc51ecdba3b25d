"""Exception types shared across the package."""


class CafataError(Exception):
    """Base class for all package-specific errors."""


class UnknownIdError(CafataError, KeyError):
    """An id was not found in its embedding table (strict mode)."""

    def __init__(self, table: str, entity_id: str):
        super().__init__(f"unknown id {entity_id!r} in table {table!r}")
        self.table = table
        self.entity_id = entity_id


class FeaturelessItemError(CafataError, ValueError):
    """An item without any feature type was used where features are required."""

    def __init__(self, item_id: str):
        super().__init__(f"featureless item {item_id!r}")
        self.item_id = item_id


class DataFormatError(CafataError, ValueError):
    """A CSV input violated the documented schema."""


class TrainingDivergedError(CafataError, RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(
            f"non-finite loss ({value!r}) at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch
