"""Exception types raised across the simulator."""


class StowSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(StowSimError, ValueError):
    pass


class OverfullBin(StowSimError):
    """Placement would exceed the bin's compression allowance."""


class InvalidAffordance(StowSimError):
    pass


class DegenerateClock(StowSimError, ZeroDivisionError):
    pass


class InsufficientData(StowSimError):
    pass


class ModelUnavailable(StowSimError):
    pass


class InsufficientPods(StowSimError):
    pass
