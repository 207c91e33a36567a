"""Exception and warning types raised across the package."""


class IftSplatError(Exception):
    """Base class for hard errors."""


class EmptyScene(IftSplatError):
    pass


class DegenerateRotation(IftSplatError):
    pass


class ShapeError(IftSplatError, ValueError):
    pass


class CulledBehindCamera(IftSplatError):
    """Gaussian lies at or behind the near plane; renderers skip it."""


class InvalidDiag(IftSplatError, ValueError):
    pass


class NonFiniteBreakdown(IftSplatError, FloatingPointError):
    pass


class NonFiniteEval(IftSplatError, FloatingPointError):
    pass


class TooLarge(IftSplatError):
    pass


class SingularSystem(IftSplatError, ArithmeticError):
    pass


class LayoutError(IftSplatError, ValueError):
    """Serialized parameters do not match the expected layout version/stride."""


# Soft failures: computation continues and the condition is flagged.

class NonFiniteLoss(RuntimeWarning):
    pass


class NotStationary(RuntimeWarning):
    pass


class SolverStalled(RuntimeWarning):
    pass
