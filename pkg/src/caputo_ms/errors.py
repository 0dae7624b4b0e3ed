"""Exception taxonomy shared by all modules."""


class CaputoMsError(Exception):
    """Base class for all package errors."""


class ParameterError(CaputoMsError, ValueError):
    """Model parameter outside its admissible range."""


class DomainError(CaputoMsError, ValueError):
    """Function argument outside the mathematical domain (e.g. zero lag)."""


class GridError(CaputoMsError, ValueError):
    """Time grid is malformed or incompatible with the request."""


class ConfigError(CaputoMsError, ValueError):
    """Experiment configuration cannot be parsed or validated."""


class NumericsError(CaputoMsError, RuntimeError):
    """A numerical routine failed to reach its accuracy contract."""


class DivergenceError(NumericsError):
    """A solution path left the admissible range (NaN/overflow)."""

    def __init__(self, message, node=None, replicates=None):
        super().__init__(message)
        self.node = node
        self.replicates = replicates
