"""Exception hierarchy shared by all platoonstab modules."""


class PlatoonStabError(Exception):
    """Base class for every error raised by this package."""


# rational calculus

class PoleProximity(PlatoonStabError, ValueError):
    """Evaluation point lies on (or too close to) a pole."""


class DivisionByZeroFunction(PlatoonStabError, ZeroDivisionError):
    """Division by the identically-zero rational function."""


class NonConvergence(PlatoonStabError, ArithmeticError):
    """Root iteration did not reach its tolerance within the iteration cap."""


class ZeroFunction(PlatoonStabError, ValueError):
    """Operation undefined for the identically-zero function."""


class AdvanceTermRejected(PlatoonStabError, ValueError):
    """A positive shift (time advance) cannot be inverted causally."""


class ImpulsivePart(PlatoonStabError, ValueError):
    """Improper rational term would invert to impulses."""


# platoon model

class DegenerateLoop(PlatoonStabError, ValueError):
    """A closed-loop denominator cancels to zero."""


class ValidationError(PlatoonStabError, ValueError):
    """A scenario field violates its declared range."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(PlatoonStabError, ValueError):
    """Scenario document is malformed or incomplete."""


# time-domain simulation

class ImproperTransferFunction(PlatoonStabError, ValueError):
    """Numerator degree exceeds denominator degree."""


class AlgebraicLoopError(PlatoonStabError, ValueError):
    """Feedthrough terms make the interconnection ill-posed."""


class NonCausalMode(PlatoonStabError, ValueError):
    """Simulation requested with the time-advance shift convention."""


class NumericalBlowup(PlatoonStabError, ArithmeticError):
    """A state magnitude exceeded the blowup threshold.

    The partial trace (samples up to the offending step) is kept on
    ``trace`` and the offending step index on ``step``.
    """

    def __init__(self, step, trace=None, table=None):
        self.step = step
        self.trace = trace
        self.table = table
        super().__init__(f"state magnitude exceeded threshold at step {step}")


class WindowTooLong(PlatoonStabError, ValueError):
    """Tail window is not shorter than the trace duration."""


# stability analysis

class PoleOnAxis(PlatoonStabError, ValueError):
    """Propagation ratio has a pole on the imaginary axis inside the band."""


class InsufficientSizes(PlatoonStabError, ValueError):
    """Growth measurement needs at least two platoon sizes."""


class RatioOutOfRange(PlatoonStabError, ValueError):
    """Geometric ratio P >= 1; the error sum is unbounded."""

    def __init__(self, ratio, diagnosis, partial_sums=()):
        self.ratio = ratio
        self.diagnosis = diagnosis
        self.partial_sums = tuple(partial_sums)
        super().__init__(diagnosis)
