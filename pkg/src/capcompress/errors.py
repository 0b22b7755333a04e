"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain (empty input, min > max, ...)."""


class FrozenMaskError(RuntimeError):
    """Attempt to update a pruning mask after it has been frozen."""


class AccumulatorOverflowError(ArithmeticError):
    """A 32-bit integer accumulator would have overflowed."""


class VocabError(KeyError):
    """Token id outside the vocabulary."""


class DivergenceError(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class FormatError(ValueError):
    """Malformed binary file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
