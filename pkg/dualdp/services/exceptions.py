
class DualDPError(Exception):
    pass

class ParseError(DualDPError):
    pass

class DimensionError(DualDPError):
    pass

class InfeasibleRoot(DualDPError):
    pass

class NumericalFailure(DualDPError):
    pass

class StatusError(DualDPError):
    pass

class LengthMismatch(DualDPError):
    pass

class OutOfDomain(DualDPError):
    pass

class EmptyCandidates(DualDPError):
    pass

class ScheduleError(DualDPError):
    pass

class SubproblemInfeasible(DualDPError):
    pass

class IterationOverflow(DualDPError):
    pass

class OracleError(DualDPError):
    pass

class TreeTooLarge(DualDPError):
    pass

class ConfigError(DualDPError):
    pass


class MaxIters(DualDPError):
    """Iteration budget exhausted before the termination test passed.

    `result` holds the partial run so callers can still write its trace.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
