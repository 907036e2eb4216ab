"""Exception hierarchy.

Every domain failure derives from :class:`PoissonLabError` so the CLI can map
it to exit code 1 without catching programming errors.
"""


class PoissonLabError(Exception):
    """Base class for all domain errors."""


class InvalidGeometry(PoissonLabError, ValueError):
    pass


class EmptyDomain(PoissonLabError):
    pass


class DisconnectedDomain(PoissonLabError):
    pass


class MissingPatchBC(PoissonLabError, KeyError):
    pass


class NonPositiveCoefficient(PoissonLabError, ValueError):
    pass


class PinOnDirichletSystem(PoissonLabError):
    pass


class NotSPDDetected(PoissonLabError):
    pass


class NegativeQuadraticForm(PoissonLabError):
    pass


class NoConvergence(PoissonLabError):
    pass


class UnstableDynamics(PoissonLabError):
    pass


class FeatureMismatch(PoissonLabError, ValueError):
    pass


class DivergenceDetected(PoissonLabError):
    def __init__(self, step, loss):
        super().__init__(f"loss {loss:.6g} diverged at step {step}")
        self.step = step
        self.loss = loss
