"""Exception types shared across the package."""


class DimensionError(ValueError):
    """An array's trailing dimension does not match the model."""


class ConfigurationError(ValueError):
    """A sampler, oracle or operator was built with invalid settings."""


class UnsupportedConfigurationError(ConfigurationError):
    """The requested combination of settings is valid but not supported."""


class DegenerateSeriesError(ValueError):
    """A diagnostic was asked about a series with zero variance."""


class EmptyDatasetError(RuntimeError):
    """A minibatch oracle was asked to draw from an empty dataset."""


class ConvergenceError(RuntimeError):
    """An iterative procedure hit its step budget before converging."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(FloatingPointError):
    """A trajectory produced a non-finite coordinate.

    ``step`` is the index of the offending update, ``state`` the last finite
    state, and ``chain`` (when raised from a chain runner) the prefix of the
    chain recorded before the divergence.
    """

    def __init__(self, message, step=None, state=None, chain=None):
        super().__init__(message)
        self.step = step
        self.state = state
        self.chain = chain
