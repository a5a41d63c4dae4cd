"""Exception hierarchy shared by every module."""


class CompositionError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(CompositionError, ValueError):
    pass


class EmptyMask(CompositionError, ValueError):
    pass


class InvalidSteps(CompositionError, ValueError):
    pass


class IndexOutOfRange(CompositionError, IndexError):
    pass


class IndexUnderflow(IndexOutOfRange):
    pass


class IndexOverflow(IndexOutOfRange):
    pass


class BoxOutOfCanvas(CompositionError, ValueError):
    pass


class EmptyObjectMask(EmptyMask):
    pass


class ObjectOutsideUserBox(CompositionError, ValueError):
    pass


class DegenerateEmbedding(CompositionError, ArithmeticError):
    pass


class UnsupportedMode(CompositionError, ValueError):
    pass


class OutsideWindow(CompositionError, ValueError):
    pass


class EmptyDataset(CompositionError, ValueError):
    pass


class NonfiniteLoss(CompositionError, ArithmeticError):
    pass


class NonfiniteLatent(CompositionError, ArithmeticError):
    """A latent picked up NaN/Inf during a run; carries the step index."""

    def __init__(self, index: int, where: str = ""):
        self.index = index
        super().__init__(f"non-finite latent at step {index}" + (f" ({where})" if where else ""))


class ConfigError(CompositionError, ValueError):
    """Config validation failure naming the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
