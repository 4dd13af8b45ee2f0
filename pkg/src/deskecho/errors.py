"""Exception types shared across the simulator."""


class DeskEchoError(Exception):
    """Base class for all simulator errors."""


class DegenerateScene(DeskEchoError):
    """Scene bounds enclose zero area."""


class OutOfBounds(DeskEchoError):
    """A position lies outside the scene bounds."""


class RateMismatch(DeskEchoError):
    """Sample rates of two audio buffers differ."""


class SilentRIR(DeskEchoError):
    """Impulse response carries no energy."""


class TooShort(DeskEchoError):
    """Waveform shorter than one analysis frame."""


class Unfitted(DeskEchoError):
    """Model used before fit()."""


class GenerationExhausted(DeskEchoError):
    """Episode generation hit the retry limit without a valid draw."""


class UnknownCategory(DeskEchoError):
    """Sound category outside the five-category set."""


class InvalidChain(DeskEchoError):
    """Skill chain contains out-of-vocabulary entries."""


class PlanInvalid(DeskEchoError):
    """Planner output violates the chain vocabulary or structure."""


class PlanParse(DeskEchoError):
    """Planner response is not parseable JSON after retries."""


class Transport(DeskEchoError):
    """Network or HTTP failure talking to a remote planner."""


class NonFiniteLoss(DeskEchoError):
    """Optimization produced a NaN or infinite loss."""


class EmptyRun(DeskEchoError):
    """Aggregation requested over zero non-skipped records."""


class IoFailure(DeskEchoError):
    """Report or artifact could not be written."""
