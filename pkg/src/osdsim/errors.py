"""Exception hierarchy shared by every osdsim module."""


class OsdError(Exception):
    """Base class for all osdsim errors."""


# metric / HST
class NonTree(OsdError):
    pass


class RatioViolation(OsdError):
    pass


class EmptyMetric(OsdError):
    pass


class UnknownNode(OsdError):
    pass


class UnknownEdge(OsdError):
    pass


# instances
class NegativeDelay(OsdError):
    pass


class InstanceSyntaxError(OsdError):
    pass


class SchemaError(OsdError):
    pass


class InvariantViolation(OsdError):
    pass


class ClairvoyanceViolation(OsdError):
    pass


# engine / algorithms
class AlgorithmContractViolation(OsdError):
    pass


class PastTime(OsdError):
    pass


class PathFullySaturated(OsdError):
    pass


class NotSaturated(OsdError):
    pass


class PlanStateMismatch(OsdError):
    pass


class InsufficientSum(OsdError):
    pass


class NonPowerOfTwo(OsdError):
    pass


class InternalConsistencyError(OsdError):
    """A proven property of the algorithm failed at runtime."""


class UnknownServer(OsdError):
    pass


class NoServers(OsdError):
    pass


# paging / oracle / adversaries
class CapacityZero(OsdError):
    pass


class NonUniformMetric(OsdError):
    pass


class ZeroWeight(OsdError):
    pass


class TooLarge(OsdError):
    pass


class BadParams(OsdError):
    pass


class ClairvoyantAlgorithm(OsdError):
    pass
