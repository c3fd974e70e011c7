"""Exception hierarchy shared by every module."""


class QSwitchError(Exception):
    """Base class for all library errors."""


class InvalidInput(QSwitchError, ValueError):
    """An argument or file violates a documented invariant."""


class NotErgodic(QSwitchError):
    pass


class ZeroMass(InvalidInput):
    pass


class NotHurwitz(QSwitchError):
    pass


class IllConditioned(QSwitchError):
    pass


class NotPositiveDefinite(QSwitchError):
    pass


class StepTooLarge(QSwitchError):
    pass


class DegenerateSpectrum(QSwitchError):
    pass


class BoundViolated(QSwitchError):
    pass


class SandwichViolated(QSwitchError):
    pass


class SlemDegenerate(QSwitchError):
    pass


class HorizonTooShort(QSwitchError):
    pass


class DomainError(QSwitchError, ValueError):
    """An envelope was evaluated outside the range where it is valid."""
