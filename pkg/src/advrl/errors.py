"""Exception types shared across the package.

Two families matter to callers: :class:`ModelError` (bad input, CLI exit 1)
and :class:`ScopeRefusal` (a well-formed request we deliberately do not
solve, CLI exit 2).
"""


class AdvRLError(Exception):
    """Base class for every error raised by advrl."""


class ModelError(AdvRLError, ValueError):
    """Invalid model, policy, constraint or file contents."""


class RowNotStochastic(ModelError):
    def __init__(self, location, total):
        self.location = location
        self.total = float(total)
        super().__init__(f"row {location} sums to {self.total!r}, expected 1")


class NegativeProbability(ModelError):
    def __init__(self, location, value=None):
        self.location = location
        self.value = value
        super().__init__(f"negative probability at {location}: {value!r}")


class ModeAmbiguous(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NotFullyObservable(ModelError):
    pass


class NotFiniteHorizon(ModelError):
    pass


class InfiniteRewardSupport(ModelError):
    pass


class PreconditionViolated(ModelError):
    pass


class InvalidLayout(ModelError):
    pass


class OutOfBounds(ModelError):
    pass


class MismatchedInstances(ModelError):
    pass


class InfeasibleAttack(ModelError):
    pass


class NotZeroSum(ModelError):
    pass


class TooLarge(AdvRLError):
    def __init__(self, count, limit):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} candidate policies exceeds the limit {limit}")


class EmptySample(AdvRLError, ValueError):
    pass


class ScopeRefusal(AdvRLError):
    """Request is well formed but outside what we solve (NP-hard regime)."""


class PartiallyObservable(ScopeRefusal):
    pass


class ObservationSurfaceEnabled(ScopeRefusal):
    pass


class EmptyFeasibleSet(UserWarning):
    """A constraint rule produced an empty set; the identity was added."""
