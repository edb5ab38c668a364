import math

BYTES_PER_KIBIBYTE = 1024
BYTES_PER_MEBIBYTE = 1048576
BYTES_PER_GIBIBYTE = 1073741824
BYTES_PER_TEBIBYTE = 1099511627776

BYTE_SIZE_CONVERSIONS = {
    "K": BYTES_PER_KIBIBYTE,
    "M": BYTES_PER_MEBIBYTE,
    "G": BYTES_PER_GIBIBYTE,
    "T": BYTES_PER_TEBIBYTE,
}

# Step policy
DEFAULT_DT_MAX = 1e-3
DEFAULT_C_STEP = 0.01
DEFAULT_HIT_FRACTION = 1e-6
DEFAULT_REFLECT_FLOOR = 1e-3
MAX_STEP_HALVINGS = 30
SAFE_STOP_FACTOR = 10.0

# Crossing detection
DEFAULT_C_BALL = 4.0
KOEBE_UPPER = 8.0
KOEBE_LOWER = 0.25
HORIZON_FACTOR = 50.0
STRIP_CUTOFF_FACTOR = 10.0
STRIP_HEIGHT = math.pi
DEFAULT_LINE_HEIGHT_FRACTION = 0.05
DEFAULT_SEMICIRCLE_POINTS = 256

# Newton inversion of the half-strip map
NEWTON_TOLERANCE = 1e-12
NEWTON_MAX_ITERATIONS = 100
NEWTON_MAX_DAMPING = 3
HOMOTOPY_STEPS = 16
HALFSTRIP_F3 = 2.0 * math.sqrt(2.0) + math.log(3.0 + 2.0 * math.sqrt(2.0))

# Cache
DEFAULT_CACHE_ITEMS = 65536
DEFAULT_CACHE_BYTES = "64M"

# Estimation
DEFAULT_BLOCK_SIZE = 2048
MIN_FIT_POINTS = 3
STATISTICAL_FAIL_Z = 5.0

THREADS_ENV_VAR = "SLE_ARMLAB_THREADS"
OUTPUT_ROOT_ENV_VAR = "SLE_ARMLAB_OUTPUT_ROOT"

CSV_HEADER = ("grid_value", "trials", "hits", "p_hat", "stderr", "horizon_failures")
RESULTS_CSV = "results.csv"
SUMMARY_JSON = "summary.json"
PLOT_SVG = "plot.svg"
MANIFEST_JSON = "manifest.json"
LOCK_TIMEOUT_SECONDS = 60.0
