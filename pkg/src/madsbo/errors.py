"""Exception types shared across the package."""


class MixingMatrixError(ValueError):
    """Base class for rejected gossip weight matrices."""


class NotSymmetric(MixingMatrixError):
    pass


class NotStochastic(MixingMatrixError):
    pass


class NegativeWeight(MixingMatrixError):
    pass


class NoSpectralGap(MixingMatrixError):
    pass


class DivergedError(RuntimeError):
    """Raised when an iterate becomes nonfinite or exceeds the blow-up bound.

    ``where`` names the loop ("higp", "inner", "outer") and ``index`` is the
    round (or outer iteration) at which the blow-up was detected.
    """

    def __init__(self, where, index, message=None):
        self.where = where
        self.index = index
        super().__init__(message or f"{where} iterate diverged at round {index}")

    def __reduce__(self):
        # keep the exception picklable across worker processes
        return type(self), (self.where, self.index, str(self))


class ConfigError(ValueError):
    """Invalid run or experiment configuration."""


class BaselineUnavailable(NotImplementedError):
    """The problem has no per-agent closed-form lower-level solution."""
