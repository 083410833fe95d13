"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code (see :mod:`pmdrift.cli`).
"""


class PMDriftError(Exception):
    """Base class for all package errors."""


class InputError(PMDriftError, ValueError):
    """Malformed argument: wrong shape, out-of-range value, bad coverage."""


class StructureError(PMDriftError, ValueError):
    """Markov chain is reducible, periodic, or has several closed classes."""


class ConfigurationError(PMDriftError, ValueError):
    """Parameters are individually valid but jointly inadmissible."""


class ModelError(PMDriftError):
    """Compiled model violates a structural condition (singular or non-Hurwitz mean matrix)."""


class NumericalError(PMDriftError, ArithmeticError):
    """A linear-algebra step failed where theory says it cannot."""


class DivergenceError(NumericalError):
    """Iterate norm crossed the divergence guard."""

    def __init__(self, message, step=None, seed=None):
        super().__init__(message)
        self.step = step
        self.seed = seed
