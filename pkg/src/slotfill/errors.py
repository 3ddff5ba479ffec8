"""Exception types shared across the toolkit."""


class SlotFillError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SlotFillError):
    """Invalid configuration or incompatible settings."""


class DataError(SlotFillError):
    """Malformed corpus content or out-of-range ids."""


class ShapeError(SlotFillError):
    """Tensor shapes do not conform for a primitive."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        detail = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


class ContractError(SlotFillError):
    """An internal API contract was violated by the caller."""


class TrainingDiverged(SlotFillError):
    """Non-finite gradients were encountered; the run is aborted."""
