"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: usage errors exit 1, data contract
violations exit 2, numerical failures exit 3.
"""

from __future__ import annotations


class PowerdyadError(Exception):
    """Base class for all toolkit errors."""


class UsageError(PowerdyadError):
    """Bad command-line invocation or malformed request."""


class DataContractError(PowerdyadError):
    """Input data violates a documented contract (schema, invariant, shape)."""


class ConfigurationError(DataContractError):
    """A configuration file or parameter combination is invalid."""


class NumericalError(PowerdyadError):
    """An internal numerical computation failed."""


class NonFiniteLossError(NumericalError):
    """Training produced a non-finite loss; carries the offending batch ids."""

    def __init__(self, epoch: int, batch_ids: list[str]):
        self.epoch = epoch
        self.batch_ids = list(batch_ids)
        super().__init__(
            f"non-finite loss at epoch {epoch}; offending batch instance ids: {self.batch_ids}"
        )
