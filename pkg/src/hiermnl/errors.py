"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: schema/data problems exit 2,
sampler initialization failures exit 3, usage errors exit 64.
"""


class Error(Exception):
    """Base class for all package-specific errors."""


class SchemaError(Error):
    """A declaration problem: missing column, unknown factor, bad spec file."""


class DataError(Error):
    """A value-level problem in the data itself (bad count, unknown label)."""


class ConsistencyError(DataError):
    """Rows contradict each other, e.g. a subject changing factor levels."""


class DegenerateTableError(DataError):
    """A contingency table with an all-zero row or column margin."""


class ContractError(Error):
    """An internal API precondition was violated by the caller."""


class SamplerInitError(Error):
    """The sampler could not produce a finite starting log-posterior."""


class GridBoundaryError(Error):
    """Grid integration left too much probability mass at the boundary."""
