"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError -> 4. Programmer-level misuse raises the
usual builtins (ValueError, IndexError) and is not caught.
"""


class HcgnnError(Exception):
    """Base class for package errors."""


class ConfigError(HcgnnError):
    """Invalid experiment configuration."""


class DataError(HcgnnError):
    """Dataset content problem: bad shapes, out-of-range ids, missing labels."""


class ParseError(DataError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class SamplingError(DataError):
    """A sampler could not produce the requested output (e.g. no negative pairs)."""


class NumericError(HcgnnError):
    """Non-finite values where finite ones are required."""


class ShapeError(HcgnnError, ValueError):
    """Tensor operand shapes incompatible with the requested operation."""
