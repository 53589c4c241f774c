"""Exception taxonomy shared by all singlab modules."""


class SinglabError(Exception):
    """Base class; carries a machine-readable code for the CLI error envelope."""

    code = "error"


class InvalidInput(SinglabError):
    code = "invalid-input"


class OutsideAttractor(SinglabError):
    code = "outside-attractor"


class NotApplicable(SinglabError):
    code = "not-applicable"


class PreconditionError(SinglabError):
    code = "precondition-failed"


class InconsistentPrecondition(SinglabError):
    """A precondition that theory guarantees was violated numerically."""

    code = "inconsistent-precondition"


class BudgetExceeded(SinglabError):
    """Search ran out of node/sample budget. `partial` holds what was found."""

    code = "budget-exceeded"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
