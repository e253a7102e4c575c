"""Exception hierarchy for the toolkit.

Every error carries a ``details`` dict so the CLI can emit machine-readable
error JSON. Exit-code mapping lives in :mod:`ceqln.cli`.
"""

from __future__ import annotations


class CeqlnError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class ConfigurationError(CeqlnError):
    """Malformed model/layer/problem structure (shape mismatches, bad dims)."""


class InfeasibleConstraintsError(CeqlnError):
    """No point satisfies the constraint system.

    ``details`` may carry ``constraint_set`` (the owning set index r) and
    ``kind`` ("inconsistent_rows" for contradictory equalities, "no_point"
    for an empty feasible region detected by the phase-one check).
    """


class RedundantConstraintsError(CeqlnError):
    """Equality rows are consistent but linearly dependent after duplicate
    elimination; the caller must thin them out."""


class IllConditionedError(CeqlnError):
    """The KKT system is singular or numerically rank deficient.

    ``details["condition"]`` holds the condition estimate when available.
    """


class NonconvergenceError(CeqlnError):
    """Active-set iteration cap exceeded on a problem the phase-one check
    believes is feasible."""


class InitializationError(CeqlnError):
    """Every restart draw failed to produce a feasible evaluation."""


class TrainingAbortedError(CeqlnError):
    """Loss became non-finite during training; ``details["epoch"]`` names
    the offending epoch."""


class DegenerateGradientError(CeqlnError):
    """The transposed KKT solve for the solution pullback is singular."""


class DegeneracyWarning(UserWarning):
    """An active inequality carries a near-zero multiplier; the pullback
    treats it as active, which is only one-sided correct at the kink."""
