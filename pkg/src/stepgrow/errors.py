"""Exception types shared across the package.

The CLI maps these onto exit codes, so optimizers and checks raise the
specific class instead of a bare RuntimeError.
"""


class TheoremViolationError(RuntimeError):
    """A certified inequality failed during a run.

    This is never downgraded to a warning: a raise here means either the
    implementation or the guarantee it encodes is wrong, and the run that
    triggered it is named in the message.
    """


class DivergenceError(RuntimeError):
    """Loss overflowed or went non-finite (constant step-size baseline)."""


class NotSeparableError(RuntimeError):
    """Perceptron found no separating direction within the epoch budget."""


class ConvergenceError(RuntimeError):
    """An iterative numeric routine hit its iteration cap; carries the count."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


class CsvFormatError(ValueError):
    """Malformed dataset CSV; message names the offending line number."""
