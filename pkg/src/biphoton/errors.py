"""Exception types raised across the package."""


class BiphotonError(Exception):
    pass


class NotHermitian(BiphotonError, ValueError):
    pass


class NotPhysical(BiphotonError, ValueError):
    """Matrix fails trace or positivity beyond the repair tolerance."""


class OutOfRange(BiphotonError, ValueError):
    pass


class NumericalFailure(BiphotonError, ArithmeticError):
    pass


class ModelNonPhysical(BiphotonError, ValueError):
    pass


class NonConvergence(BiphotonError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class Misaligned(BiphotonError, ValueError):
    pass


class EmptyHistogram(BiphotonError, ValueError):
    pass
