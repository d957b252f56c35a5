"""Exception hierarchy shared by every subpackage."""


class MeshMoveError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MeshMoveError, ValueError):
    pass


class InvalidDomain(MeshMoveError, ValueError):
    pass


class InvalidMesh(MeshMoveError, ValueError):
    pass


class ShapeError(MeshMoveError, ValueError):
    pass


class StateError(MeshMoveError, RuntimeError):
    pass


class ConfigError(MeshMoveError, ValueError):
    pass


class NumericFailure(MeshMoveError, RuntimeError):
    """A numerical procedure failed; ``residual`` carries the last residual seen."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonConvergence(NumericFailure):
    pass


class InversionFailure(NumericFailure):
    pass
