"""Exception types shared across the package."""


class HcsspError(Exception):
    """Base class for all solver errors."""


class DimensionMismatch(HcsspError):
    """A vector argument does not match the model's secondary-cost count."""


class UnassignedState(HcsspError):
    """A reachable non-goal state has no action assigned by the policy."""


class ImproperPolicy(HcsspError):
    """The policy does not reach a goal state with probability one."""


class NoProperPolicy(HcsspError):
    """No policy reaches the goal with probability one from the initial support."""


class InfeasibleRelaxation(HcsspError):
    """Even the unconstrained relaxation admits no proper policy."""


class Infeasible(HcsspError):
    """Exhaustive search certified that no feasible policy exists.

    Carries the final ``AnytimeResult`` (bounds and trace) as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class UnassignedChoice(HcsspError):
    """A reachable event's choice variable is not assigned by the procedural policy."""


class NeverActivated(HcsspError):
    """No procedural policy activates the activity (modeling error)."""


class CyclicGraph(HcsspError):
    """The event graph contains a cycle and admits no topological order."""


class MissingPolicy(HcsspError):
    """An activated activity has no policy in the hierarchical solution."""


class EmptySupport(HcsspError):
    """A chained initial distribution has no mass inside the activity's states."""


class MissingEstimate(HcsspError):
    """A cost estimate required by the procedural reduction is missing."""


class SupportOutsideActivity(HcsspError):
    """An initial distribution puts mass outside the activity's state set."""


class DegeneratePartition(HcsspError):
    """Every interval of the partition has zero length; nothing to split."""


class NoFeasibleSolution(HcsspError):
    """The search budget was exhausted without finding a feasible solution.

    Carries the final ``BnbState`` as ``state``.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConvergedInfeasible(HcsspError):
    """The whole budget-allocation space was certified infeasible.

    Carries the final ``BnbState`` as ``state``.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class TooLarge(HcsspError):
    """The instance exceeds the brute-force oracle's enumeration cap."""


class InvalidSpec(HcsspError):
    """A benchmark scenario description is malformed."""
