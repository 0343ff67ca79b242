"""Exception types raised across the package."""


class ResidgenError(Exception):
    pass


class InvalidMatrix(ResidgenError, ValueError):
    pass


class DimensionError(ResidgenError, ValueError):
    pass


class EvaluationError(ResidgenError, ArithmeticError):
    pass


class InvalidSpec(ResidgenError, ValueError):
    pass


class InvalidState(ResidgenError, ValueError):
    pass


class UnsupportedOrder(ResidgenError):
    pass


class NoConvergence(ResidgenError, RuntimeError):
    pass


class NoSolution(ResidgenError):
    """Raised when a linear system or parity problem has no admissible solution.

    ``reason`` is a short human-readable diagnosis, ``residual`` the best
    least-squares residual found (if any).
    """

    def __init__(self, reason, residual=None, **diagnostics):
        super().__init__(reason)
        self.reason = reason
        self.residual = residual
        self.diagnostics = diagnostics


class DivergedSimulation(ResidgenError, RuntimeError):
    def __init__(self, message, last_time):
        super().__init__(f"{message} (last finite time t={last_time:g})")
        self.last_time = last_time
