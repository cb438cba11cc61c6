"""
Exception hierarchy for crpa-rope.

The CLI maps these onto process exit codes: DomainError -> 1, IngestionError -> 2.
Both subclass ValueError so library callers can keep catching ValueError.
"""


class CrpaError(Exception):
    """Base class for all crpa-rope errors"""


class DomainError(CrpaError, ValueError):
    """Numeric or domain precondition violated (bad dimension, discontinuous map, ...)"""

    exit_code = 1


class IngestionError(CrpaError, ValueError):
    """Input file or format could not be ingested (sidecar, byte count, layout JSON)"""

    exit_code = 2
