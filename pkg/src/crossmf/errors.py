"""Exceptions raised by the simulator."""


class CrossModelError(Exception):
    """Base class for all simulator errors."""


class ParameterError(CrossModelError, ValueError):
    """Invalid model, grid or experiment configuration."""


class UnknownPresetError(ParameterError, KeyError):
    """Preset name not registered."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class PositivityError(CrossModelError, RuntimeError):
    """Euler-Maruyama price step left the positive half-line."""


class StabilityError(CrossModelError, RuntimeError):
    """Explicit step requested above the stability bound."""


class DomainError(CrossModelError, ValueError):
    """Re-emission point lies outside the computational grid."""


class StatisticsError(CrossModelError, ValueError):
    """Statistic undefined for the given series."""


class SteadyStateError(CrossModelError, RuntimeError):
    """State cannot be classified as an equilibrium."""


class RecordError(CrossModelError, ValueError):
    """Malformed record or density CSV."""
