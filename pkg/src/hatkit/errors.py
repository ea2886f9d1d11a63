"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes, so raising the right type
matters more than the message text.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ToolkitError):
    """Array or lattice dimensions do not match the declared contract."""


class VocabularyError(ToolkitError):
    """A label identifier falls outside the alphabet."""


class EnumerationCapError(ToolkitError):
    """A brute-force enumeration would exceed its hard cap."""


class InfeasibleError(ToolkitError):
    """The requested alignment is impossible (e.g. CTC with too few frames)."""


class NumericError(ToolkitError):
    """A NaN or infinity appeared where a finite value is required."""


class ParseError(ToolkitError):
    """A text artifact (ARPA file, config, manifest, checkpoint) is malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ToolkitError):
    """Unknown key, bad value or inconsistent configuration."""


class DecodeFailure(ToolkitError):
    """Beam search ended with no viable hypothesis."""
