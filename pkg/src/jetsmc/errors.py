"""Exception hierarchy shared by the jetsmc modules."""


class JetSMCError(Exception):
    """Base class for all library errors."""


class DomainError(JetSMCError, ValueError):
    """An argument lies outside the domain of a density or kinematic map."""


class StructureError(JetSMCError, ValueError):
    """A topology / parent table is malformed."""


class SizeGuardError(JetSMCError, ValueError):
    """An exact method was asked to run above its size limit."""


class DeadEndError(JetSMCError, RuntimeError):
    """No valid merge is available from the current forest."""


class TotalDeathError(DeadEndError):
    """Every particle has zero weight at the same rank."""


class FitAborted(JetSMCError, RuntimeError):
    """The optimizer produced a non-finite objective."""
