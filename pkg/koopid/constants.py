# Physical constants, numeric defaults, method tags and file-format versions
import math

# Duffing oscillator (m x'' + c x' + k1 x + k2 x^3 = f)
DUFFING_MASS = 0.1  # kg
DUFFING_DAMPING = 0.01  # N s / m
DUFFING_K1 = 0.1  # N / m
DUFFING_K2 = 0.001  # N / m^3
DUFFING_DT = 0.01  # s
DUFFING_STEPS = 1000
DUFFING_X0_BOX = (-1.0, 1.0)

# Default excitation: band-limited noise around the 0.16 Hz linear resonance
FORCING_AMPLITUDE = 0.1  # N
FORCING_CUTOFF = 0.3  # Hz
FORCING_FREQUENCY = 0.2  # Hz

# Measurement noise v_k ~ N(0, (sqrt(2)/10)^2 1)
NOISE_STD = math.sqrt(2.0) / 10.0

# Lifting
RBF_ALPHA = 0.1
RBF_ALPHA_SOFT_ROBOT = 0.5
RBF_DELTA = 0.001
RBF_COUNT = 10
MONOMIAL_DEGREE = 2
FEATURE_ORDERING = "grlex-raw-first-v1"

# Episode counts
TRAIN_EPISODES = 20
TEST_EPISODES = 2

# Numeric defaults
PINV_REL_TOL = 1e-12
SQRTM_IMAG_TOL = 1e-8
COND_CAP = 1e12
RHO_BAR = 0.999
MARGIN_SCALE = 1e-7
FEAS_TOL = 1e-8
GAP_TOL = 1e-8
MAX_ITERS = 500
DEFAULT_SOLVER = "CLARABEL"

# Identification methods
METHOD_EDMD = "edmd"
METHOD_EDMD_AS = "edmd-as"
METHOD_FBEDMD = "fbedmd"
METHOD_FBEDMD_AS = "fbedmd-as"
METHODS = (METHOD_EDMD, METHOD_EDMD_AS, METHOD_FBEDMD, METHOD_FBEDMD_AS)

FORWARD = "forward"
BACKWARD = "backward"
DIRECTIONS = (FORWARD, BACKWARD)

# SNR sweep grid (dB)
SNR_GRID = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0)

# Files
MODEL_FORMAT_VERSION = 1
EPISODE_META_FILE = "meta.json"
EPISODE_FILE_TEMPLATE = "episode_{id}.csv"
THREADS_ENV_VAR = "KOOPID_THREADS"

# CLI exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
