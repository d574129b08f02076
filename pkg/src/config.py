"""Configuration settings for the dyadic flow model toolkit."""

VERSION = "0.1.0"

# Chain file layout version; bump when CSV/meta columns change
SCHEMA_VERSION = 1

# Prior defaults
VAR_ALPHA = 1e6
VAR_BETA = 1e6
IG_SHAPE_SIGMA2 = 0.01
IG_RATE_SIGMA2 = 0.01
IG_SHAPE_ETA = 0.01
IG_RATE_ETA = 0.01
VAR_LOGPHI = 2.25

# Slice sampler and random-walk tuning
SLICE_W0 = 0.5
SLICE_MAX_STEPOUT = 50
SLICE_BURNIN_STEPOUT = 10
SLICE_FULL_BUDGET_AFTER = 100
RW_FRAC = 0.15

# Number of latent dyadic factors
DEFAULT_Q = 6

# Thresholds for attempting the whitened joint factor move
JOINT_MIN_LOADING_NORM = 1e-6
JOINT_MIN_SIGNAL_VAR = 1e-10

# Column sd window outside which W columns are rescaled
RESCALE_SD_WINDOW = (0.1, 10.0)

# Floors and clamps
SIGMA2_FLOOR = 1e-8
SCALE_FLOOR = 1e-12
SD_FLOOR = 1e-12
LOG_GRAD_FLOOR = 1e-300

# Ridge penalty used for the starting value of beta
RIDGE_PENALTY = 1e-3

# Cholesky jitter ladder: 0, then JITTER_START * mean(diag) * 10**k, k = 0..JITTER_STEPS
JITTER_START = 1e-8
JITTER_STEPS = 6

# Kernel families
KERNELS = ("matern32", "exponential")
ETA_KERNEL = "exponential"
FACTOR_KERNEL = "matern32"

# Model variants: (include connectivity columns, include factors)
MODEL_VARIANTS = {
    "standard": (False, False),
    "conn_only": (True, False),
    "dsvc_only": (False, True),
    "full": (True, True),
}

# Schedule defaults
DEFAULT_ITERATIONS = 25000
DEFAULT_BURNIN_FRACTION = 0.20
DEFAULT_THIN = 5
DEFAULT_CHAINS = 1

# Design defaults
DEFAULT_TAU = 0.07
DEFAULT_RBF_CENTERS = 0  # 0 disables the RBF transform
DEFAULT_COMPARABLE_LOCI = 1200
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6

# Scoring defaults
NEAR_CLONAL_THRESHOLD = 50
CREDIBLE_LEVEL = 0.95

# Ingestion defaults
LOCI_PER_CHROMOSOME = 300

# Mapping defaults
MAP_MAX_DRAWS = 50
MAP_MAX_GRID_DYADS = 20000
MAP_CHOL_CACHE = 8            # observed-dyad Cholesky factors kept per map run

# Maximum number of parallel workers for concurrent chains
MAX_WORKERS = 4

# Output file names
NODES_FILE = "nodes.csv"
GDM_FILE = "gdm.csv"
COMPARABLE_FILE = "comparable.csv"
PATHWAYS_FILE = "pathways.json"
RESPONSES_FILE = "responses.csv"
TRUTH_FILE = "truth.json"
META_FILE = "meta.json"
MANIFEST_FILE = "manifest.json"
SCORE_FILE = "score.json"
COVERAGE_FILE = "coverage.csv"
DIAGNOSTICS_FILE = "diagnostics.csv"
RESIDUALS_FILE = "residual_tiles.csv"
COMPARISON_FILE = "comparison.csv"
VECTORS_FILE = "vectors.csv"
ZBAR_FILE = "zbar.csv"

# Text precision that round-trips float64 exactly
FLOAT_FORMAT = "%.17g"

# Results browser
RUNS_DIR = "runs"
REFRESH_INTERVAL = 60  # seconds
