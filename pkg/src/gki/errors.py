"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: usage errors exit 2 (argparse),
DataError exits 3, NumericError exits 4.
"""


class GkiError(Exception):
    """Base class for all package errors."""


class DataError(GkiError):
    """Malformed or inconsistent input data (records, graphs, files)."""


class NumericError(GkiError):
    """Numeric contract violation (shapes, non-finite values, divergence)."""


class ShapeError(NumericError):
    """Operand shapes are incompatible; message names both shapes."""


class CheckpointError(DataError):
    """Checkpoint file is unreadable or inconsistent with the request."""
