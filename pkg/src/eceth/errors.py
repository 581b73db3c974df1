"""Exception hierarchy.

Two families: ``InputError`` for bad data or configuration (CLI exit code 2)
and ``EstimationError`` for failures while fitting or estimating (exit code 3).
"""

from __future__ import annotations


class EcethError(Exception):
    """Base class for all package errors."""


class InputError(EcethError, ValueError):
    """Invalid input data, schema, or configuration."""


class SchemaError(InputError):
    pass


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class EmptyInputError(InputError):
    pass


class ConfigError(InputError):
    pass


class ShapeError(InputError):
    pass


class InvalidFoldCountError(InputError):
    pass


class InvalidPropensityError(InputError):
    pass


class TooManyBinsError(InputError):
    pass


class DegeneratePredictionsError(InputError):
    pass


class EstimationError(EcethError, RuntimeError):
    """Failure while fitting nuisance models or computing an estimate."""


class DegenerateTreatmentError(EstimationError):
    pass


class SeparationError(EstimationError):
    pass


class InsufficientDataError(EstimationError):
    pass


class EmptyBinError(EstimationError):
    pass


class SingletonBinError(EstimationError):
    pass


class InfeasibleBootstrapError(EstimationError):
    pass


class DegenerateSEError(EstimationError):
    pass


class SimulationError(EstimationError):
    pass
