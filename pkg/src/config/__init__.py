# Config package initialization
from .settings import (
    DEFAULT_THREADS,
    LOG_LEVEL,
    PRESET_DEFAULTS,
    SIMULATION_CONFIG,
    MARKOV_CONFIG,
    NUISANCE_CONFIG,
    TMLE_CONFIG,
    CALIBRATION_CONFIG,
    TRUTH_CONFIG,
    EXIT_CODES
)

__all__ = [
    'DEFAULT_THREADS',
    'LOG_LEVEL',
    'PRESET_DEFAULTS',
    'SIMULATION_CONFIG',
    'MARKOV_CONFIG',
    'NUISANCE_CONFIG',
    'TMLE_CONFIG',
    'CALIBRATION_CONFIG',
    'TRUTH_CONFIG',
    'EXIT_CODES'
]
