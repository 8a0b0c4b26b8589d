"""Exception hierarchy shared by all modules."""


class NonovershootError(Exception):
    """Base class for every error raised by this package."""


class ParseError(NonovershootError, ValueError):
    """A scenario file or expression could not be parsed."""


class ExprSyntaxError(ParseError):
    """Malformed expression text.

    Carries the character offset of the offending token and the tokens that
    would have been accepted there.
    """

    def __init__(self, message, text="", position=0, expected=()):
        self.text = text
        self.position = position
        self.expected = tuple(expected)
        detail = f"{message} at position {position}"
        if self.expected:
            detail += f" (expected {', '.join(self.expected)})"
        super().__init__(detail)


class UnknownSymbol(ParseError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown symbol {name!r}")


class ValidationError(NonovershootError, ValueError):
    """A scenario violates a named invariant."""

    def __init__(self, invariant, message, value=None):
        self.invariant = invariant
        self.value = value
        super().__init__(f"[{invariant}] {message}")


class DivisionNearZero(NonovershootError, ZeroDivisionError):
    pass


class DomainError(NonovershootError, ArithmeticError):
    pass


class NonFinite(NonovershootError, ArithmeticError):
    """A numerical quantity diverged; ``component`` names it, ``t`` is the time."""

    def __init__(self, message, component=None, t=None, partial=None):
        self.component = component
        self.t = t
        self.partial = partial
        super().__init__(message)


class CompileError(NonovershootError):
    pass


class NotPositiveDefinite(NonovershootError, ArithmeticError):
    pass


class InvalidMode(NonovershootError, ValueError):
    pass


class BoundViolated(NonovershootError, AssertionError):
    pass
