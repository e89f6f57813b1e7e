import os
from dotenv import load_dotenv

load_dotenv()


def _float(name: str, default: str) -> float:
    # Strip any trailing comments the .env may carry
    return float(os.getenv(name, default).split("#")[0].strip())


def _int(name: str, default: str) -> int:
    return int(float(os.getenv(name, default).split("#")[0].strip()))


class Config:
    LOG_DIR = os.getenv("LOG_DIR", "logs")
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    OUTPUT_DIR = os.getenv("OUTPUT_DIR", "reports")

    # Optimizer
    OPT_COARSE_RESOLUTION = _int("OPT_COARSE_RESOLUTION", "16")
    OPT_STARTS = _int("OPT_STARTS", "32")
    OPT_ROUNDS = _int("OPT_ROUNDS", "4")
    OPT_SHRINK = _int("OPT_SHRINK", "4")
    OPT_MAX_MOVES = _int("OPT_MAX_MOVES", "48")
    OPT_MAX_COARSE_POINTS = _int("OPT_MAX_COARSE_POINTS", "20000")
    OPT_CHUNK_POINTS = _int("OPT_CHUNK_POINTS", "200000")
    OPT_MAX_FREE_PARAMS = _int("OPT_MAX_FREE_PARAMS", "24")
    ORACLE_MAX_POINTS = _int("ORACLE_MAX_POINTS", "100000000")
    CONSTRAINT_TOL = _float("CONSTRAINT_TOL", "1e-9")
    MARGINAL_TOL = _float("MARGINAL_TOL", "1e-6")

    # Nested (inner) minimizations run lighter
    OPT_NESTED_STARTS = _int("OPT_NESTED_STARTS", "4")
    OPT_NESTED_MAX_COARSE_POINTS = _int("OPT_NESTED_MAX_COARSE_POINTS", "1500")
    GAMMA_TABLE_RESOLUTION = _int("GAMMA_TABLE_RESOLUTION", "256")

    # Trade-off
    BISECT_TOL = _float("BISECT_TOL", "1e-4")
    BISECT_BRACKET = _float("BISECT_BRACKET", "5.0")
    BISECT_MAX_EXPANSIONS = _int("BISECT_MAX_EXPANSIONS", "8")
    CROSS_CHECK_TOL = _float("CROSS_CHECK_TOL", "5e-3")

    # Simulation
    SIM_MAX_SEQUENCES = _int("SIM_MAX_SEQUENCES", str(2 ** 22))
    SIM_MAX_PAIRS = _int("SIM_MAX_PAIRS", str(2 ** 22))
    SIM_WORKERS = _int("SIM_WORKERS", "4")
    DEFAULT_SEED = _int("DEFAULT_SEED", "0")

    # Plot
    PLOT_Y_CLIP = _float("PLOT_Y_CLIP", "2.0")

    # Alphabets
    MAX_ALPHABET = 16
