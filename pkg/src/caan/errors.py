"""Exception hierarchy shared by every caan module."""


class CaanError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CaanError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(CaanError, ValueError):
    """Input is well-typed but too small or too flat for the operation."""


class ContractError(CaanError, ValueError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class UndefinedCorrelationError(CaanError, ValueError):
    """A rank correlation is undefined because one input has no rank variance."""


class ConfigurationError(CaanError, ValueError):
    """Invalid or inconsistent configuration."""


class NonFiniteLossError(CaanError, FloatingPointError):
    """A loss component became NaN or infinite during training."""

    def __init__(self, component, value, step=None):
        self.component = component
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss component {component!r} = {value}{where}")


class LeakError(CaanError, ValueError):
    """A video identifier appears in both the training and the test set."""
