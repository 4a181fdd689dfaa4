"""
Runtime configuration and numerical defaults for XFT Lab.
Environment values come from a .env file (see .env.example).
"""
import os

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Where run/sweep outputs go when --out is not given
DEFAULT_OUTPUT_DIR = os.getenv("XFT_OUTPUT_DIR", "./xft_output")

LOG_LEVEL = os.getenv("XFT_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Construction tolerances for operators
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIGEN_CLIP = 1e-12
RECONSTRUCTION_TOL = 1e-10
UNITARY_TOL = 1e-10
MARGINAL_TOL = 1e-10

# Gibbs weights overflow beyond this value of beta * spread(E)
EXPONENT_CAP = 700.0

# Grouping of total energies into shells, and of (q, delta_eps) into classes
SHELL_TOL = 1e-9
BIN_TOL = 1e-9

# Probabilities at or below this are treated as vanishing
PROB_FLOOR = 1e-14

# Correlation index numerator/denominator floor
LOG_FLOOR = 1e-300

# mean_conserving generation
RETRY_CAP = 1000
MEAN_TOL_FACTOR = 1e-6

# Full enumeration keeps (d_A d_B)^2 rows in memory
MAX_JOINT_DIM = 4096

# Default tolerance per theorem check
CHECK_TOLERANCES = {
    "per_history_ratio": 1e-9,
    "class_bounds": 1e-9,
    "integral_equality": 1e-9,
    "averaged_inequality": 1e-10,
    "baseline_xft": 1e-9,
    "clausius_comparison": 1e-10,
    "mutual_information_identities": 1e-9,
    "quantum_mutual_information_comparison": 0.0,
    "povm_pairing": 1e-10,
}
