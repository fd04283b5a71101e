# Simulation package initialization
from .simulator import (
    Cohort,
    subject_rng,
    law_models,
    sample_path,
    sample_cohort
)
from .cohort_io import (
    COLUMNS,
    cohort_frame,
    cohort_manifest,
    export_cohort,
    import_cohort
)
from .truth import (
    CONTRAST_KINDS,
    MonteCarloValue,
    simulate_counts,
    mc_psi,
    mc_curve,
    mc_contrasts,
    forward_psi
)

__all__ = [
    'Cohort',
    'subject_rng',
    'law_models',
    'sample_path',
    'sample_cohort',
    'COLUMNS',
    'cohort_frame',
    'cohort_manifest',
    'export_cohort',
    'import_cohort',
    'CONTRAST_KINDS',
    'MonteCarloValue',
    'simulate_counts',
    'mc_psi',
    'mc_curve',
    'mc_contrasts',
    'forward_psi'
]
