"""Error taxonomy shared across the package.

The CLI maps ValidationError to exit code 2 and DivergenceError to exit
code 3; everything else is a plain crash.
"""


class SpikelabError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SpikelabError, ValueError):
    """Bad shapes, bad configs, violated preconditions."""


class FormatError(ValidationError):
    """Malformed or truncated file payloads (FT32 / EVT1 / MDL1 / IDX)."""


class DivergenceError(SpikelabError, ArithmeticError):
    """Training or evaluation produced non-finite numbers."""
