# Utils package initialization
from .errors import (
    AlphaScalingError,
    ConfigError,
    PositivityError,
    GridResolutionError,
    InfeasibleTargetError,
    NonConvergenceError
)
from .parallel import parallel_map
from .io import write_json, read_json, write_frame, read_frame, versions

__all__ = [
    'AlphaScalingError',
    'ConfigError',
    'PositivityError',
    'GridResolutionError',
    'InfeasibleTargetError',
    'NonConvergenceError',
    'parallel_map',
    'write_json',
    'read_json',
    'write_frame',
    'read_frame',
    'versions'
]
