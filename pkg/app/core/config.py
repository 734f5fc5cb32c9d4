import os
from dotenv import load_dotenv

# Loading my environment variables
load_dotenv()

# Discretization defaults
# C_sigma = 10 on every level is the penalty the coercivity study settled on
C_SIGMA = float(os.getenv("DG_C_SIGMA", "10"))
MAX_DEGREE = 8

# Solver defaults
TOL_REL = float(os.getenv("DG_TOL_REL", "1e-8"))
MAX_ITER = int(os.getenv("DG_MAX_ITER", "5000"))
LAMBDA_SAFETY = float(os.getenv("DG_LAMBDA_SAFETY", "1.1"))
POWER_TOL = float(os.getenv("DG_POWER_TOL", "1e-4"))
POWER_MAX_ITER = int(os.getenv("DG_POWER_MAX_ITER", "200"))
DIVERGENCE_FACTOR = float(os.getenv("DG_DIVERGENCE_FACTOR", "1e6"))
AMG_MAX_COARSE = int(os.getenv("DG_AMG_MAX_COARSE", "100"))

# Mesh and hierarchy defaults
RNG_SEED = int(os.getenv("DG_RNG_SEED", "1"))
LLOYD_ITERS = int(os.getenv("DG_LLOYD_ITERS", "20"))
TARGET_FACTOR = float(os.getenv("DG_TARGET_FACTOR", "4"))
GEOM_TOL = float(os.getenv("DG_GEOM_TOL", "1e-12"))

# Runtime
N_JOBS = int(os.getenv("DG_N_JOBS", "1"))
LOG_LEVEL = os.getenv("DG_LOG_LEVEL", "INFO")
