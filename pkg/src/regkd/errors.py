"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class StateError(RuntimeError):
    """An operation was called in a state that does not support it."""


class DegenerateScaleError(ValueError):
    """A robust scale estimate collapsed to zero."""


class DomainError(ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    ``problems`` holds every violation found, not just the first.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class TabularParseError(ValueError):
    """A row of a tabular dataset could not be parsed."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)
