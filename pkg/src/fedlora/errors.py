"""Exception taxonomy shared across the package.

Exit-code mapping (see cli.py): ConfigError/SchemaError -> 2, everything
else -> 1.
"""


class FedLoraError(Exception):
    pass


class ShapeError(FedLoraError):
    """Tensor dimension mismatch."""


class ConfigError(FedLoraError):
    """Invalid configuration value."""


class DataError(FedLoraError):
    """Bad input data (labels, rows, sizes)."""


class SchemaError(DataError):
    """Input file does not match the expected schema."""


class ProtocolError(FedLoraError):
    """Client/server payload mismatch (vector lengths, empty lists)."""


class StateError(FedLoraError):
    """Operation called in the wrong lifecycle state."""


class ClientError(FedLoraError):
    """A single client failed during a round; the round may continue."""


class RoundError(FedLoraError):
    """An entire round failed (e.g. every client errored)."""
