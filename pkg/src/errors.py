"""Exception hierarchy and exit-code classes."""

from typing import Optional, Sequence

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICS = 4


class DyadflowError(Exception):
    """Base class for every error raised by this package."""

    exit_code = EXIT_UNEXPECTED


class InvalidInputError(DyadflowError, ValueError):
    exit_code = EXIT_CONFIG


class ConfigError(DyadflowError):
    exit_code = EXIT_CONFIG


class NotPositiveDefiniteError(DyadflowError):
    """Raised when every level of the jitter ladder fails to factorize."""

    exit_code = EXIT_NUMERICS

    def __init__(self, min_pivot: float, jitters: Sequence[float]):
        self.min_pivot = float(min_pivot)
        self.jitters = list(jitters)
        super().__init__(
            f"matrix not positive definite after jitter up to {self.jitters[-1]:.3g} "
            f"(min diagonal pivot {self.min_pivot:.3g})"
        )


class InvalidStateError(DyadflowError):
    exit_code = EXIT_NUMERICS


class DegenerateCentersError(DyadflowError):
    exit_code = EXIT_NUMERICS


class SizeLimitError(DyadflowError):
    exit_code = EXIT_NUMERICS

    def __init__(self, size: int, cap: int, what: str = "grid dyads"):
        self.size = size
        self.cap = cap
        super().__init__(f"{what}: {size} exceeds configured cap {cap}")


class SamplerError(DyadflowError):
    """A block update failed; carries where it happened."""

    exit_code = EXIT_NUMERICS

    def __init__(self, iteration: int, block: str, cause: Exception):
        self.iteration = iteration
        self.block = block
        super().__init__(f"iteration {iteration}, block '{block}': {cause}")


class ParseError(DyadflowError):
    exit_code = EXIT_IO

    def __init__(self, path: str, message: str, row: Optional[int] = None):
        self.path = str(path)
        self.row = row
        where = f"{self.path}, row {row}" if row is not None else self.path
        super().__init__(f"{where}: {message}")


class SchemaVersionError(DyadflowError):
    exit_code = EXIT_IO

    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(
            f"chain schema version {found} cannot be migrated to version {expected}"
        )


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code of its failure class."""
    if isinstance(exc, DyadflowError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, PermissionError)):
        return EXIT_IO
    return EXIT_UNEXPECTED
