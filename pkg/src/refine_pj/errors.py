"""Exception hierarchy shared by every module of the checker."""


class ModelError(Exception):
    """Base class for all errors raised while building or checking models."""


class ValidationError(ModelError):
    """A model is not closed, well-typed or guarded.

    ``definition`` names the offending definition when one is known.
    """

    def __init__(self, message, definition=None):
        if definition is not None:
            message = f"{message} (in {definition})"
        super().__init__(message)
        self.definition = definition


class UnknownChannel(ValidationError):
    pass


class UnknownName(ValidationError):
    pass


class UnknownDefinition(ValidationError):
    pass


class ArityMismatch(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class AtomOutOfDomain(DomainError):
    pass


class UnguardedRecursion(ValidationError):
    def __init__(self, cycle):
        super().__init__("unguarded recursion through " + " -> ".join(cycle), cycle[0])
        self.cycle = tuple(cycle)


class EvaluationError(ModelError):
    """A value expression could not be evaluated (e.g. ``head(<>)``)."""


class ShapeMismatch(ModelError):
    pass


class BoundExceeded(ModelError):
    def __init__(self, states, bound):
        super().__init__(f"state bound {bound} exceeded after {states} states")
        self.states = states
        self.bound = bound


class UnboundState(ModelError):
    pass


class CspSyntaxError(ModelError):
    """Parse failure with a 1-based source position."""

    def __init__(self, message, line=0, column=0):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.reason = message


class ArityError(CspSyntaxError):
    pass


class UnknownNameError(CspSyntaxError):
    pass
