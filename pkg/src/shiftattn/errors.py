"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes do not satisfy an operation's requirements."""


class ConfigurationError(ValueError):
    """An attention / model / run configuration is internally inconsistent."""


class ContractError(RuntimeError):
    """A caller violated an operation's stated contract."""


class StateError(RuntimeError):
    """An operation was invoked in an invalid object state."""


class CapacityError(ValueError):
    """An input exceeds what the model geometry can represent."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
