"""Exception types shared across the package.

The split mirrors the CLI exit-code contract: parameter/validation problems
exit with 2, numerical failures (quadrature non-convergence, factorization
breakdown, insufficient Monte Carlo data) with 3.
"""


class ParameterError(ValueError):
    """A model parameter or configuration value violates its admissible range."""


class DomainError(ValueError):
    """A function argument lies outside the mathematical domain of the operation."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to reach its accuracy or stability target."""
