"""Exception hierarchy shared by all shiftsim modules."""


class ShiftSimError(Exception):
    """Base class for every error raised by shiftsim."""


class ValidationError(ShiftSimError, ValueError):
    """A scenario, topology or service description is malformed."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DuplicateId(ValidationError):
    pass


class DanglingEndpoint(ValidationError):
    pass


class NonPositiveCapacity(ValidationError):
    pass


class CyclicGraph(ValidationError):
    pass


class UnknownVnf(ValidationError):
    pass


class NonMonotoneUtility(ValidationError):
    pass


class MissingPrimary(ValidationError):
    pass


class ParseError(ValidationError):
    """Scenario document error; ``location`` is a dotted key path or line."""

    def __init__(self, message, location=None):
        super().__init__(f"{location}: {message}" if location else message, element=location)
        self.location = location


class UnknownElement(ShiftSimError, KeyError):
    def __init__(self, element_id):
        super().__init__(element_id)
        self.element_id = element_id

    def __str__(self):
        return f"unknown element {self.element_id!r}"


class InconsistentPlacement(ShiftSimError):
    pass


class InvalidPlacement(ShiftSimError):
    pass


class Infeasible(ShiftSimError):
    """Placement or routing failed; ``item`` is ("vnf", id) or ("vlink", (src, dst))."""

    def __init__(self, item, message=""):
        super().__init__(message or f"cannot place {item[0]} {item[1]!r}")
        self.item = item


class OracleTooLarge(ShiftSimError):
    pass


class OverlappingInterval(ShiftSimError, ValueError):
    pass


class NegativeInterval(ShiftSimError, ValueError):
    pass


class UnknownPeer(ShiftSimError, KeyError):
    pass


class OutOfOrderSample(ShiftSimError, ValueError):
    pass


class NoCandidate(ShiftSimError):
    """No SLA-permitted service can be shifted down."""

    def __init__(self, denied=()):
        super().__init__("no shift-down candidate")
        self.denied = tuple(denied)


class PlanFailed(ShiftSimError):
    def __init__(self, reason, context=None):
        super().__init__(reason)
        self.reason = reason
        self.context = context


class RippleExhausted(ShiftSimError):
    pass


class NoServices(ShiftSimError, ValueError):
    pass


class EmptyQueue(ShiftSimError):
    pass


class ScenarioInfeasibleAtStart(ShiftSimError):
    def __init__(self, service_id):
        super().__init__(f"primary graph of {service_id!r} cannot be placed on the pristine infrastructure")
        self.service_id = service_id
