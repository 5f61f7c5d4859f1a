"""Exception hierarchy shared by every module."""


class HybridPeftError(Exception):
    pass


class ShapeError(HybridPeftError, ValueError):
    pass


class InvalidRankError(HybridPeftError, ValueError):
    pass


class InvalidInputError(HybridPeftError, ValueError):
    pass


class InvalidLengthError(InvalidInputError):
    pass


class SingularityError(HybridPeftError, ArithmeticError):
    pass


class StepSizeError(SingularityError):
    """Cayley transform hit a singular (I - eta*Q); shrink eta."""


class ContractError(HybridPeftError, ValueError):
    """An input violated a manifold-membership precondition."""


class DivergenceError(HybridPeftError, ArithmeticError):
    def __init__(self, message, last_good=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


class StaleCacheError(HybridPeftError, RuntimeError):
    pass


class CorpusFormatError(HybridPeftError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class GovernanceError(HybridPeftError, ValueError):
    pass


class CheckpointError(HybridPeftError, ValueError):
    pass


class ConfigError(HybridPeftError, ValueError):
    pass
