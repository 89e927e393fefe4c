"""
Utilities initialization
"""

from .errors import (
    ConfigError, DataError, DomainViolation, FoldDegenerate, GridMismatch, InsufficientData, NotFound,
    NumericalError, SchemaError, SeparationError, SingularDesign, UsageError, WassCauseError
)
from .validators import (
    parse_bounds, parse_list, validate_dataset_columns, validate_estimate_flags, validate_sim_config
)

__all__ = [
    'ConfigError',
    'DataError',
    'DomainViolation',
    'FoldDegenerate',
    'GridMismatch',
    'InsufficientData',
    'NotFound',
    'NumericalError',
    'SchemaError',
    'SeparationError',
    'SingularDesign',
    'UsageError',
    'WassCauseError',
    'parse_bounds',
    'parse_list',
    'validate_dataset_columns',
    'validate_estimate_flags',
    'validate_sim_config',
]
