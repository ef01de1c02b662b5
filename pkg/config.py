import os
from dotenv import load_dotenv

load_dotenv()

# Logging (never affects results)
LOG_LEVEL = os.getenv("EBZIP_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("EBZIP_LOG_FILE")

# EM settings shared by the baseline fit and the per-window relative risk estimate
EM_TOL = 1e-6
EM_MAX_ITER = 1000
# Newton steps on q after the per-window EM stops
EM_NEWTON_STEPS = 3

# ZIP parameter domain
P_UPPER = 1 - 1e-12
MU_LOWER = 1e-12

# Gumbel tail probabilities never reach exact zero
GUMBEL_P_FLOOR = 1e-300

DEFAULT_TOP_K = 10
DEFAULT_ALPHA = 0.05

# Simulation study layout
DEFAULT_SCENARIO = {
    "n_locations": 100,
    "pre_weeks": 9,
    "outbreak_weeks": 11,
    "max_duration": 10,
    "k_max": 24,
}

SCENARIO_LEVELS = {
    "mu": [1.0, 5.0, 10.0],
    "p": [0.01, 0.05, 0.15, 0.25, 0.5],
    "q": [1.0, 1.1, 1.25, 1.5, 2.0],
    "outbreak_size": [5, 20],
}

DESK_DEFAULTS = {
    "outbreaks_per_scenario": 200,
    "replicates": 199,
}

FULL_DEFAULTS = {
    "outbreaks_per_scenario": 1000,
    "replicates": 999,
}

DEFAULT_ALPHAS = [0.001, 0.005, 0.01, 0.05, 0.1]
