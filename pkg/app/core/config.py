import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Output and run registry
OUTPUT_DIR = os.getenv("DGTD_OUTPUT_DIR", "./runs")
DATABASE_URL = os.getenv("DGTD_DATABASE_URL", "sqlite:///./dgtd_runs.db")

LOG_LEVEL = os.getenv("DGTD_LOG_LEVEL", "INFO").upper()

# Process pool size for per-seed runs (1 = run seeds in-process)
MAX_WORKERS = int(os.getenv("DGTD_MAX_WORKERS", "1"))

# Stationary distribution solver
POWER_ITER_CAP = int(os.getenv("DGTD_POWER_ITER_CAP", "1000000"))
POWER_ITER_TOL = float(os.getenv("DGTD_POWER_ITER_TOL", "1e-12"))

# Full per-iteration recording up to this many rows, strided beyond
TRACE_ROW_CAP = int(os.getenv("DGTD_TRACE_ROW_CAP", "100000"))

# Inner box-QP solvers used by saddle_gap
GAP_TOL = float(os.getenv("DGTD_GAP_TOL", "1e-9"))
GAP_MAX_ITER = int(os.getenv("DGTD_GAP_MAX_ITER", "100000"))
