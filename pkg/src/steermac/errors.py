"""Exception hierarchy shared by the simulator, decoder and CLI."""


class SteermacError(Exception):
    """Base class for all package errors."""


class InvalidShiftError(SteermacError, ValueError):
    pass


class DomainError(SteermacError, ValueError):
    pass


class DimensionError(SteermacError, ValueError):
    pass


class SingularSystemError(SteermacError):
    """Steering matrix is (numerically) rank deficient."""


class DegeneratePolynomialError(SteermacError, ValueError):
    pass


class NoConvergenceError(SteermacError):
    """The stop predicate never fired before the slot cap.

    The partially collected matrix is kept on ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IdentificationError(SteermacError):
    """Selected matches cannot account for the detected rank.

    ``partial`` holds whatever matches were selected before giving up.
    """

    def __init__(self, message, partial=(), diagnostics=None):
        super().__init__(message)
        self.partial = list(partial)
        self.diagnostics = diagnostics or {}


class AmbiguityError(IdentificationError):
    """Aligned/misaligned classification is undecidable without factor-2 weighting.

    ``hypotheses`` lists the competing match lists.
    """

    def __init__(self, message, hypotheses=(), partial=(), diagnostics=None):
        super().__init__(message, partial=partial, diagnostics=diagnostics)
        self.hypotheses = [list(h) for h in hypotheses]


class VanishingGainError(SteermacError):
    pass


class ReplayFormatError(SteermacError, ValueError):
    pass
