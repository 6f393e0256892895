class DivStructError(Exception):
    """Base class for every error raised by this package."""

    step: int | None = None


class InputError(DivStructError, ValueError):
    """Malformed instance, labeling or configuration."""


class InvalidLabeling(InputError):
    pass


class InvalidFactor(InputError):
    pass


class InvalidRegions(InputError):
    pass


class InvalidInstance(InputError):
    def __init__(self, message: str, violations: list | None = None) -> None:
        super().__init__(message)
        self.violations = violations or []


class InvalidConfig(InputError):
    pass


class EmptyList(InputError):
    pass


class TooFew(InputError):
    pass


class SolverError(DivStructError, RuntimeError):
    """A solver precondition did not hold for the given input."""


class TooLarge(SolverError):
    pass


class NotSubmodular(SolverError):
    pass


class WrongArity(SolverError):
    pass


class UnsupportedFactor(SolverError):
    pass


class UnsupportedCombination(SolverError):
    pass


class VerificationError(DivStructError):
    pass


class NotVerifiable(VerificationError):
    pass


class Degenerate(VerificationError):
    pass
