"""Exception types raised across the package."""


class BusipError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(BusipError, ValueError):
    """Wavelet shape parameters outside their valid domain."""


class ConfigurationError(BusipError, ValueError):
    """Incompatible sizes or settings."""


class DatasetError(BusipError):
    """Unreadable, empty or inconsistent dataset."""


class NonFiniteLossError(BusipError, FloatingPointError):
    """A loss component became NaN or infinite during training."""

    def __init__(self, component, step=None, value=None):
        self.component = component
        self.step = step
        self.value = value
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss component '{component}'{where}: {value}")
