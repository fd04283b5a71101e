import os
from typing import Dict, Any
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Runtime settings - overridable through the environment or a .env file
DEFAULT_THREADS = int(os.getenv("ALPHA_SCALING_THREADS", "1"))
LOG_LEVEL = os.getenv("ALPHA_SCALING_LOG_LEVEL", "INFO")

# Baseline parameters shared by the example presets
PRESET_DEFAULTS: Dict[str, float] = {
    "eta": 0.1,          # Weibull scale-rate for every event mark
    "nu": 1.0,           # Weibull shape for every mark
    "tau": 3.0,          # Horizon
    "censor_eta": 0.05,  # Censoring scale-rate
    "propensity": 0.5    # P(A0=1) in the randomized presets
}

# Path sampling
SIMULATION_CONFIG: Dict[str, Any] = {
    "root_xtol": 1e-14,       # brentq tolerance on the event time
    "residual_tol": 1e-10,    # |sum cumhaz - E| accepted after inversion
    "max_jumps": 64           # guard; admissible paths have at most 3 jumps
}

# Backward recursion
MARKOV_CONFIG: Dict[str, Any] = {
    "grid_size": 2000,         # M steps over [0, tau]
    "grid_tolerance": 0.05,    # max second difference of per-step total cumhaz
    "batch_matrices": 200_000  # matrices per expm call
}

# Weibull-Cox maximum likelihood
NUISANCE_CONFIG: Dict[str, Any] = {
    "max_iter": 200,
    "grad_tol": 1e-6,        # max-norm of the score at the optimum
    "max_halvings": 40,
    "tie_jitter": 1e-9
}

# Targeting loop
TMLE_CONFIG: Dict[str, Any] = {
    "max_iter": 50,          # sweeps
    "grid_size": 400,        # ValueTable steps used while targeting
    "quad_tol": 1e-8,        # absolute tolerance of the compensator quadrature
    "quad_limit": 2000,      # max subintervals for quad_vec
    "eps_bound": 2.0,        # bounded fallback for the fluctuation parameter
    "min_threshold": 1e-12   # floor on s_n
}

# Alpha search and derivative
CALIBRATION_CONFIG: Dict[str, Any] = {
    "alpha_start": 1.0,
    "expand": 1.25,
    "contract": 0.8,
    "max_steps": 80,
    "alpha_min": 1e-6,
    "alpha_max": 50.0,
    "large_alpha": 50.0,     # proxy for the maximal susceptible fraction
    "feasibility_grid": [0.0, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0],
    "exact_tol": 1e-6        # c_n used when the evaluator reports se = 0
}

# Monte Carlo oracle
TRUTH_CONFIG: Dict[str, Any] = {
    "reps": 100_000,
    "quadrature_nodes": 24,  # Gauss-Legendre nodes over uniform L0
    "ode_rtol": 1e-10,
    "ode_atol": 1e-12
}

# CLI exit codes
EXIT_CODES: Dict[str, int] = {
    "ok": 0,
    "internal": 1,
    "config": 2,
    "infeasible": 3,
    "nonconvergence": 4
}
