"""
Configuration and constants for orbitavg
"""
import os
from typing import Any, Dict, Optional

# Load environment variables (optional - works without .env file)
try:
    from dotenv import load_dotenv, dotenv_values
    load_dotenv()
except ImportError:
    # dotenv not available, will use system environment variables
    dotenv_values = None


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        return default


# Runtime Configuration
MAX_THREADS = max(1, _env_int("ORBITAVG_THREADS", os.cpu_count() or 1))
LOG_LEVEL_NAME = os.getenv("ORBITAVG_LOG_LEVEL", "INFO").upper()
MAX_EIGEN_DIM = _env_int("ORBITAVG_MAX_DIM", 4096)

# Exact / floating coefficient handling
COEFF_TOL = 1e-12          # coefficient comparison for float symbols
SHELL_TOL = 1e-12          # |x|^2 = 1, x.xi = 0 on sphere points

# Trajectory averaging quadrature
NUMERIC_AVERAGE_TOL = 1e-11
MIN_PANELS = 8
MAX_PANELS = 2 ** 16

# Second-flow integration (double averages, secular equation)
ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
INFINITE_AVERAGE_TOL = 1e-8
SECULAR_RESIDUAL_TOL = 1e-6
SECULAR_FD_STEP = 1e-3
DEFAULT_T0 = 10.0
DEFAULT_TMAX = 160.0
SAMPLES_PER_UNIT_TIME = 32     # uniform trajectory sampling for Simpson time averages
SECULAR_SAMPLES_PER_UNIT_TIME = 64
FLOW_BATCH_SIZE = 64           # grid points integrated together in one ODE system

# Critical point search
CRITICAL_SAMPLES = 12000
CRITICAL_NEIGHBORS = 12
CRITICAL_GRAD_TOL = 1e-10
CRITICAL_CLUSTER_TOL = 1e-8

# Action coordinates (contour tracing)
ACTION_RTOL = 1e-12
ACTION_ATOL = 1e-13

# Spectral verification operating point
DEFAULT_L0 = 40
DEFAULT_LMIN = 30
DEFAULT_LMAX = 50
DEFAULT_PAD = 6
EPSILON_EXPONENT = 0.7
RECTANGLE_RE_MULTIPLIER = 1.0
RECTANGLE_IM_MULTIPLIER = 1.0
SLACK_CONSTANT = 5.0
LEAKAGE_TOL = 1e-8

# Application Configuration
MAX_HISTORY_SIZE = 20

# Keys accepted in a key = value config file (mirror CLI long options)
CONFIG_KEYS = {
    "flow", "poly", "panels", "q", "r", "w", "bundle", "a", "b", "tmax", "t0",
    "h", "eps", "l0", "lmin", "lmax", "pad", "out", "regime", "profile", "s_avg",
    "S", "alpha", "window", "band", "k1", "k2", "t_inf", "im_q1_inf", "xi_radius",
    "t0_period", "E0", "eta", "p3", "p4", "frame", "spectrum", "rectangles",
    "rectangles_out", "history_out", "lattice", "a_symbol", "format", "samples",
}


def default_operating_point(l0: int = DEFAULT_L0) -> Dict[str, float]:
    """h with h^2 l0 (l0 + 1) = 1 and eps = h^0.7"""
    h = (l0 * (l0 + 1)) ** -0.5
    return {"h": h, "eps": h ** EPSILON_EXPONENT}


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """
    Read a plain-text key = value file

    Args:
        path: Config file path, or None

    Returns:
        Dictionary of recognised keys (unknown keys dropped with a warning)
    """
    if not path:
        return {}
    if dotenv_values is None:
        raise RuntimeError("python-dotenv is required to read config files")
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")

    # Imported lazily: colored_logger imports this module
    from colored_logger import log_warning

    raw = dotenv_values(path)
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        norm = key.strip().replace("-", "_")
        if norm not in CONFIG_KEYS:
            log_warning(f"Ignoring unknown config key '{key}' in {path}")
            continue
        values[norm] = value
    return values
