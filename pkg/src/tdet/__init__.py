"""tdet: toy object detection under simulated atmospheric turbulence."""

import os as _os

# The workloads here are many tiny matmuls; BLAS thread pools only add
# contention. Best effort: applies when numpy is first imported through
# this package. TDET_THREADS governs the package's own worker pools.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
