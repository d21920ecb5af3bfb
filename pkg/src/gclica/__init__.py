"""Nonlinear ICA by contrastive learning with auxiliary variables."""
import os as _os

if _os.environ.get("GCL_DETERMINISTIC") == "1":
    # pin BLAS pools to one thread before numpy loads, so reductions run in a fixed order
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ[_var] = "1"

__version__ = "0.1.0"
