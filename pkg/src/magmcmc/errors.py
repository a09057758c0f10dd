"""Exception hierarchy shared across the package."""


class MagMCMCError(Exception):
    """Base class for all errors raised by magmcmc."""


class NotSkewSymmetric(MagMCMCError, ValueError):
    pass


class NumericalFailure(MagMCMCError, RuntimeError):
    pass


class NonFiniteGradient(NumericalFailure):
    """Raised when a gradient oracle returns NaN or inf."""


class RankDeficient(MagMCMCError, ValueError):
    pass


class WrongComponent(MagMCMCError, ValueError):
    pass


class NonPositiveAlpha(MagMCMCError, ValueError):
    pass


class InitializationInfeasible(MagMCMCError, ValueError):
    pass


class DegenerateSeries(MagMCMCError, ValueError):
    pass


class ConvergenceFailure(NumericalFailure):
    """Newton iteration for the position multiplier did not reach tolerance.

    ``step`` is filled in by :func:`magmcmc.integrator.integrate` with the
    index of the failing step.
    """

    def __init__(self, iters, residual, step=None):
        self.iters = iters
        self.residual = residual
        self.step = step
        msg = f"Newton solve failed after {iters} iterations (residual {residual:.3e})"
        if step is not None:
            msg += f" at step {step}"
        super().__init__(msg)
