"""Exception hierarchy shared by the analysis modules and the CLI."""


class DecoherenceError(Exception):
    """Base class for all library errors"""


class InvalidArgumentError(DecoherenceError, ValueError):
    """An argument violates an operation precondition"""


class ConfigError(DecoherenceError):
    """Run configuration is unreadable or inconsistent"""


class NumericalDivergenceError(DecoherenceError):
    """Every produced trace hit the tilde-division guard"""
