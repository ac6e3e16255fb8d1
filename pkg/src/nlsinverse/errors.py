"""Exception types shared across the package.

Validation problems subclass ``ValueError`` and runtime problems subclass
``RuntimeError`` so that the command line front end can map them to exit codes.
"""


class GridMismatchError(ValueError):
    """A field does not live on the grid it was combined with."""


class ConfigurationError(ValueError):
    """Inconsistent or unsupported parameters."""


class HypothesisViolation(ValueError):
    """Input data break a standing assumption of an experiment.

    ``nodes`` lists the offending interior node indices when relevant.
    """

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = [] if nodes is None else list(nodes)


class UnderResolvedError(ValueError):
    """The grid is too coarse for the requested weights or kernel.

    ``required`` is the suggested resolution (node count) when it can be estimated.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class SingularTimeError(ValueError):
    """A Carleman weight was evaluated at or beyond its singular time."""


class PicardDivergenceError(RuntimeError):
    """Fixed-point iteration failed to converge; carries the partial certificate."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate
