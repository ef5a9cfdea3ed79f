class CtxNetError(Exception):
    """Base class for every error raised by ctxnet."""


class ShapeError(CtxNetError, ValueError):
    pass


class ContractError(CtxNetError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(CtxNetError, ValueError):
    pass


class LengthError(FormatError):
    """A file or buffer ended before its declared payload did."""


class UnsupportedShapeError(FormatError):
    pass


class RangeError(CtxNetError, ValueError):
    pass


class DependencyError(CtxNetError):
    """A required upstream artifact (checkpoint, trained module) is missing."""


class ContextTrainingError(CtxNetError):
    """Training one context net failed; ``index`` names the context."""

    def __init__(self, index: int, message: str):
        super().__init__(f"context {index}: {message}")
        self.index = index
