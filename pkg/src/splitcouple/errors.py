"""Exception types shared across the package."""


class CertificationError(RuntimeError):
    """A minorization or monotonicity certificate failed numerically."""


class ScheduleError(RuntimeError):
    """A block schedule could not be constructed from the given tail/alpha."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    The message always starts with the dotted path of the offending field.
    """


class RunError(RuntimeError):
    """An experiment could not be executed (I/O failure, resource cap, ...)."""
