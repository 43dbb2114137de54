"""Exception hierarchy shared by every stage of the pipeline."""


class RegimeShiftError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class SpecificationError(RegimeShiftError, ValueError):
    """Dimension or shape mismatch between a system and its inputs."""

    exit_code = 2


class ConfigError(RegimeShiftError, ValueError):
    exit_code = 2


class DomainError(RegimeShiftError, ValueError):
    """An argument lies outside the region where the operation is defined."""

    exit_code = 2


class IntegrationError(RegimeShiftError, ArithmeticError):
    exit_code = 3


class ParseError(RegimeShiftError, ValueError):
    exit_code = 2


class WindowError(RegimeShiftError, ValueError):
    exit_code = 3


class CandidateError(RegimeShiftError, ValueError):
    exit_code = 3


class TrainingError(RegimeShiftError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class IdentifiabilityError(RegimeShiftError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class NoCandidateError(CandidateError):
    """Stage I flagged no window (screen-only mode reports this as exit 4)."""

    exit_code = 4
