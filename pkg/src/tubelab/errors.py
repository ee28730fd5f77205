"""Exception types shared across the package."""


class TubelabError(Exception):
    """Base class for all package errors."""


class DomainError(TubelabError, ValueError):
    """An input lies outside the region where an operation is defined."""


class SingularityError(DomainError):
    """A map was evaluated at one of its singular points."""


class PreconditionError(TubelabError, ValueError):
    """A documented precondition of an operation does not hold."""


class ResourceError(TubelabError, MemoryError):
    """A grid, incidence list or catalog would exceed its configured budget."""


class SpecificationError(TubelabError, KeyError):
    """A named check or formula is missing an input symbol."""

    def __init__(self, symbol: str, context: str = ""):
        self.symbol = symbol
        msg = f"missing input symbol {symbol!r}"
        if context:
            msg += f" for {context}"
        super().__init__(msg)

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return self.args[0]


class DichotomyFailure(TubelabError, RuntimeError):
    """Neither branch of the cellular/algebraic dichotomy succeeded."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class AlgebraicSignal(DomainError):
    """A splitter found no direction separating the cubes: they concentrate on a variety."""


class AuditFailure(TubelabError, RuntimeError):
    """A constructed object failed one of its stored invariant audits."""

    def __init__(self, message: str, audits: dict | None = None):
        super().__init__(message)
        self.audits = dict(audits or {})
