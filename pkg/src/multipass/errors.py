"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the command line
front end reports in its JSON error payload.
"""


class MultipassError(Exception):
    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidInputError(MultipassError, ValueError):
    code = "invalid-input"


class InvalidRotationError(InvalidInputError):
    code = "invalid-rotation"


class OutOfDomainError(MultipassError, ValueError):
    code = "out-of-domain"


class DomainExitError(OutOfDomainError):
    code = "domain-exit"


class SingularityError(MultipassError, ZeroDivisionError):
    code = "singularity"


class UnsupportedOrderError(MultipassError, ValueError):
    code = "unsupported-order"


class EvaluationError(MultipassError, ArithmeticError):
    code = "evaluation"


class PreconditionError(MultipassError, ValueError):
    code = "precondition"


class ConnectionFailedError(MultipassError, RuntimeError):
    code = "connection-failed"


class SurgeryError(MultipassError, RuntimeError):
    code = "surgery-failed"


class IllPosedResolventError(MultipassError, ValueError):
    code = "ill-posed-resolvent"


class ResolutionExceededError(MultipassError, RuntimeError):
    code = "resolution-exceeded"


class ParseError(InvalidInputError):
    code = "parse"


class UnsupportedCaseError(MultipassError, ValueError):
    code = "unsupported-case"


class UnsupportedDeltaError(MultipassError, ValueError):
    code = "unsupported-delta"
