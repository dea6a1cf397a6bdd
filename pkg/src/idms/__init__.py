"""AS-level internet delay matrix service: simulator, metrics and baselines."""
from ._accel import USE_NUMBA
from .delayspace import (MISSING, AsnMappingTable, DelayMatrix, MatrixSeries, PeriodIndex,
                         from_bytes, load_matrix, save_matrix, to_bytes)
from .matrix_service import MatrixService, apply_delta, build_pdm, delta, estimate_distance
from .metrics import link_errors, matrix_similarity, summarize, tiv_accuracy, tiv_set

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA", "MISSING", "AsnMappingTable", "DelayMatrix", "MatrixSeries", "PeriodIndex",
    "from_bytes", "load_matrix", "save_matrix", "to_bytes", "MatrixService", "apply_delta",
    "build_pdm", "delta", "estimate_distance", "link_errors", "matrix_similarity", "summarize",
    "tiv_accuracy", "tiv_set",
]
