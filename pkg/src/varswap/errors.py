"""Exception hierarchy shared by every layer of the package."""


class VarswapError(Exception):
    """Base class for all package errors."""


class MissingParameter(VarswapError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class RangeViolation(VarswapError, ValueError):
    """A parameter lies outside its admissible range."""


class DomainError(VarswapError, ValueError):
    """A function was called outside its mathematical domain."""


class PoleError(DomainError):
    """Argument sits on a pole of Gamma or of the Kummer series."""


class NonConvergence(VarswapError, ArithmeticError):
    pass


class GridMismatch(VarswapError, ValueError):
    """Payoff sampling does not align with the simulation grid."""


class ResourceLimit(VarswapError, MemoryError):
    pass


class NumericalBreakdown(VarswapError, ArithmeticError):
    """A simulation step produced non-finite values."""


class InsufficientSamples(VarswapError, ValueError):
    pass


class NonFiniteSample(VarswapError, ValueError):
    pass


class InsufficientSignal(VarswapError, ValueError):
    """Too few convergence rows rise above Monte Carlo noise to fit a rate."""


class ConditionsFailed(VarswapError, RuntimeError):
    """Convergence conditions are not met and no override was given."""


class ConfigError(VarswapError, ValueError):
    """Invalid run configuration; the message names the offending key."""


class GammaOverflow(VarswapError, OverflowError):
    pass
