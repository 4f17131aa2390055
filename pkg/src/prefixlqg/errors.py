"""Exception types raised by the library."""


class PrefixLQGError(Exception):
    """Base class for all library errors."""


class NonStabilizable(PrefixLQGError):
    """The pair (A, B) cannot be stabilized, or the Riccati iteration failed."""


class InfeasibleBudget(PrefixLQGError):
    """The LQG budget does not exceed the minimum achievable cost Tr(SW)."""


class NumericalFailure(PrefixLQGError):
    """The barrier solver could not make progress."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class DegenerateChannel(PrefixLQGError):
    """The optimal test channel carries no information (zero rate)."""


class MalformedStream(PrefixLQGError):
    """A bitstream does not parse under the given codebook."""


class SyncLoss(PrefixLQGError):
    """Encoder and decoder filter states diverged."""


class UnstableChain(PrefixLQGError):
    """The error recursion has |R| >= 1, so no invariant law exists."""
