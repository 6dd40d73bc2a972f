"""Exception hierarchy.

Every message is prefixed with ``<module>.<operation>`` so that CLI users can
tell which stage of a run failed.
"""


class ShiftNicheError(Exception):
    """Base class for all errors raised by the package."""

    def __init__(self, where, message, result=None):
        super().__init__(f"{where}: {message}")
        self.where = where
        self.result = result


class ValidationError(ShiftNicheError, ValueError):
    """Invalid input: bad parameters, hypothesis violations, malformed config."""


class TransformDivergent(ShiftNicheError, ValueError):
    """Exponential moment requested for a kernel whose tail makes it infinite."""


class NoTailBound(ShiftNicheError, ValueError):
    """The growth rate never drops below ``-delta`` far from the niche."""


class ConvergenceError(ShiftNicheError, RuntimeError):
    """An iterative method stopped before meeting its tolerance.

    The best available result is attached as ``result`` when there is one.
    """


class MonotonicityViolation(ShiftNicheError, RuntimeError):
    """An ordering guaranteed by a comparison principle was broken."""


class MetzlerViolation(ShiftNicheError, AssertionError):
    """An assembled operator has a negative off-diagonal entry."""
