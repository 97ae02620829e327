class AdvaugError(Exception):
    """Base for every error the lab raises on purpose."""


class ShapeError(AdvaugError, ValueError):
    pass


class DomainError(AdvaugError, ValueError):
    pass


class ConfigError(AdvaugError, ValueError):
    pass


class FormatError(AdvaugError, ValueError):
    pass


class StaleTapeError(AdvaugError, RuntimeError):
    pass


class NonFiniteError(AdvaugError, ArithmeticError):
    """
    A NaN or Inf was produced or supplied. Training and attack loops
    re-raise with the batch/iteration where it happened.
    """

    def __init__(self, message, *, iteration=None, batch_index=None):
        super().__init__(message)
        self.iteration = iteration
        self.batch_index = batch_index
