"""Exception hierarchy shared by every stereopatch module."""


class StereoPatchError(Exception):
    """Base class for all library errors."""


class DomainError(StereoPatchError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class PlacementError(StereoPatchError, ValueError):
    """A physical patch placement cannot be projected into the image."""


class DegeneratePlacementError(PlacementError):
    """The projected patch collapses to (nearly) zero area or is viewed edge-on."""


class PatchTooSmallError(StereoPatchError, ValueError):
    """The patch or texture element is too small to be optimized meaningfully."""


class AssemblyError(StereoPatchError, ValueError):
    pass


class DeploymentError(StereoPatchError, ValueError):
    pass


class CalibrationParseError(StereoPatchError, ValueError):
    pass


class SceneSpecError(StereoPatchError, ValueError):
    pass


class ConfigError(StereoPatchError, ValueError):
    pass


class NumericalError(StereoPatchError, ArithmeticError):
    """Optimization produced a non-finite value; ``trace`` holds the records so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
