"""Exception hierarchy shared by every stage of the pipeline."""


class SolitonLabError(Exception):
    """Base class for all errors raised by this package."""


class NonBracketedShoot(SolitonLabError):
    pass


class BlowUp(SolitonLabError):
    pass


class QuadratureNonConverged(SolitonLabError):
    pass


class TooClose(SolitonLabError):
    pass


class StepFailure(SolitonLabError):
    pass


class DegenerateFrame(SolitonLabError):
    pass


class InequalityViolated(SolitonLabError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class HypothesisUnmet(SolitonLabError):
    pass


class Collision(SolitonLabError):
    pass


class InsufficientSpan(SolitonLabError):
    pass


class HierarchyViolated(SolitonLabError):
    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class NotApplicable(SolitonLabError):
    pass


class ConfigError(SolitonLabError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
