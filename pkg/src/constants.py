"""Preemptive robustification constants and defaults.

This module contains all the constant values used throughout the package:
- Numerical guards and tolerances
- Attack and robustification hyperparameters
- Training and smoothing defaults
- File names and CSV schemas
"""

import math

# ====== Numerics ======
ZERO_GRAD_EPS = 1e-12  # Below this an l2 gradient direction is meaningless
LEMMA2_GRAD_EPS = 1e-10  # Closed-form step Jacobian is singular below this gradient norm
EXACT_MAX_DIM = 16  # Exact second-order update gradient only at toy sizes
JACOBIAN_MAX_DIM = 8
HESSIAN_FD_SCALE = 1e-4  # h = scale * (1 + ||x||)
JACOBIAN_FD_STEP = 1e-5

# ====== Norms ======
NORM_INF = math.inf
NORM_L2 = 2.0
SUPPORTED_NORMS = (NORM_L2, NORM_INF)

# ====== Attack ======
PGD_STEPS = 20
PGD_STEP_FRACTION = 0.25  # alpha = eps / 4
PGD_RESTARTS = 1
EVAL_RESTARTS = 10

# ====== Robustification ======
MAX_ITER = 100
N_SAMPLES = 1
BETA_LINF = 0.1
BETA_L2 = 0.001
RMSPROP_DECAY = 0.99
RMSPROP_DAMPING = 1e-8
TANH_INIT_LIMIT = 1.0 - 1e-6  # keeps arctanh finite for random init
GRAD_SPIKE_RATIO = 10.0  # Exact-mode growth over the first norm that gets a warning

# Certificate threshold: -log(0.5)
LEMMA1_THRESHOLD = -math.log(0.5)
LEMMA1_RESTARTS = 10

# ====== White-box ======
EPS_PRIME_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
NEAR_BOUNDARY_LOW = 0.9
NEAR_BOUNDARY_HIGH = 1.1
HISTOGRAM_BUCKETS_PER_EPS = 20

# ====== Training ======
EPOCHS = 20
INNER_MIN_STEPS = 1  # L
INNER_MAX_STEPS = 10  # K
LEARNING_RATE = 0.1
MOMENTUM = 0.9
WEIGHT_DECAY = 5e-4
BATCH_SIZE = 64
LR_DECAY_FACTOR = 0.1

# ====== Smoothing ======
SMOOTH_SIGMA = 0.25
SMOOTH_N_PRED = 50
SMOOTH_N_CERT = 10_000
SMOOTH_M = 5
SMOOTH_CONF_ALPHA = 0.001
SOUNDNESS_ATTACKS = 50
SOUNDNESS_RADIUS_FRACTION = 0.95
ABSTAIN = -1

# ====== Selftest ======
GRAD_CHECK_MODELS = 100
GRAD_CHECK_RTOL = 1e-4
GRAD_FD_STEP = 1e-6
LEMMA2_CHECK_MODELS = 20
LEMMA2_CHECK_ATOL = 1e-3
PROP1_CHECK_DRAWS = 200
LEMMA1_TARGET_FRACTION = 0.95
LINEAR_ORACLE_ATOL = 1e-3
EXPLODING_RUNS = 5
EXPLODING_RATIO = 10.0
CP_CHECK_CONFIGS = 50
CP_CHECK_ATOL = 1e-10
SOUNDNESS_MIN_POINTS = 200
ROBUSTIFY_GAIN_TARGET = 0.20
RECON_FAR_FRACTION = 0.75  # Of eps, l2
RECON_FAR_TARGET = 0.5

# ====== Datasets ======
GAUSS2_LOW_MEAN = 0.35
GAUSS2_HIGH_MEAN = 0.65
GAUSS2_STD = 0.08
BARS_SIDE = 4
BARS_NOISE = 0.1
RINGS_INNER = (0.10, 0.20)
RINGS_OUTER = (0.30, 0.45)
TEST_FRACTION = 0.25

# ====== Model persistence ======
MODEL_MAGIC = "PRDF"
MODEL_VERSION = "v1"
ACTIVATIONS = ("relu", "tanh", "identity")

# ====== Seeds ======
DEFAULT_SEED = 0
SEED_ENV_VAR = "PREEMPT_SEED"

# ====== Exit codes ======
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4

# ====== File paths ======
OUTPUT_DIR = "results"
LOG_DIR = "logs"
REPORT_CSV = "report.csv"
DISTANCES_CSV = "distances.csv"
DISTANCES_HIST_CSV = "distances_hist.csv"
LEMMA1_CSV = "lemma1.csv"
GRADNORM_CSV = "gradnorm.csv"
HISTORY_CSV = "history.csv"
CERTIFY_CSV = "certify.csv"
SMOOTH_EMPIRICAL_CSV = "smooth_empirical.csv"
SELFTEST_CSV = "selftest.csv"
SNAPSHOT_INI = "run_config.ini"
DATASET_NPZ = "dataset.npz"
MODEL_FILE = "model_{mode}_{norm}.prdf"

# ====== CSV schemas ======
REPORT_HEADER = (
    "norm",
    "eps",
    "model",
    "preemption",
    "clean",
    "grey_pgd",
    "grey_pgd_restarts",
    "white_pgd",
    "n",
)
DISTANCES_HEADER = (
    "example_id",
    "recon_dist",
    "eps_prime",
    "attack_dist",
    "misclassified",
    "valid",
)
DISTANCES_HIST_HEADER = ("kind", "bucket_low", "bucket_high", "count")
LEMMA1_HEADER = ("example_id", "h_tilde", "satisfied", "implied_bound", "preserved")
GRADNORM_HEADER = ("run", "grad_mode", "iteration", "grad_norm")
HISTORY_HEADER = ("epoch", "split", "loss", "acc")
CERTIFY_HEADER = (
    "example_id",
    "robustified",
    "predicted",
    "correct",
    "pA_lower",
    "radius",
    "abstain",
)
SMOOTH_EMPIRICAL_HEADER = ("preemption", "clean", "grey_rpgd", "grey_rpgd_restarts", "n")
SELFTEST_HEADER = ("check", "passed", "value", "threshold")
