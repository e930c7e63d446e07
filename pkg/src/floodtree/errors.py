"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data/format problems exit 2,
numeric failures exit 3 (usage errors exit 1 before any of these
can be raised).
"""


class FloodTreeError(Exception):
    """Base class for all errors raised by this package."""


class GridFormatError(FloodTreeError):
    """An ASCII grid file violates the expected format."""


class DimensionError(FloodTreeError):
    """Shapes disagree: header vs. data rows, or layer vs. layer."""


class LabelBoundsError(FloodTreeError):
    """A label record references a cell outside the grid."""


class EmptyInputError(FloodTreeError):
    """An operation received zero valid cells."""


class InitializationError(FloodTreeError):
    """Training data is insufficient to initialize model parameters."""


class NumericError(FloodTreeError):
    """A probabilistic computation left the representable range.

    Carries the offending node id when one is known.
    """

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class OracleSizeError(FloodTreeError):
    """Exhaustive enumeration was requested on too large an instance."""
