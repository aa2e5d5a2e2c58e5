"""Helpers shared by the solvers."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RTOL = 1e-9
ATOL = 1e-12


def linsolve(A, b):
    """Solve with a dense or sparse matrix."""
    if sp.issparse(A):
        return spla.spsolve(sp.csc_matrix(A), b)
    return sla.solve(A, b, check_finite=False)


def tolerance(scale: float, rtol: float = RTOL, atol: float = ATOL) -> float:
    """Residual threshold: relative to ``scale`` when it is positive."""
    return rtol * scale if scale > 0 else atol
