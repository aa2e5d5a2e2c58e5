"""Static equilibrium by Newton iterations."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConvergenceError
from ._common import ATOL, linsolve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StaticSolution:
    """Converged displacement with the residual history of the last step."""

    q: np.ndarray
    residuals: tuple
    iterations: int


def newton_static(model, f_ext, q0=None, rtol=1e-10, atol=ATOL, max_iter=30,
                  load_steps: int = 1) -> StaticSolution:
    """Solve ``f(q) = f_ext``.

    Parameters
    ----------
    model
        Object with ``n`` and ``internal(q, tangent)``.
    f_ext : (n,) array
    q0 : (n,) array, optional
        Initial guess (zero by default).
    rtol, atol : float
        Converged when ``|f(q) - f_ext| < rtol |f_ext|``, or ``< atol`` for
        an unloaded system.
    load_steps : int
        Apply the load in equal increments, each solved to convergence.

    Raises
    ------
    ConvergenceError
        With the last residual norm when ``max_iter`` is exhausted.
    """
    f_ext = np.asarray(f_ext, dtype=float)
    q = np.zeros(model.n) if q0 is None else np.array(q0, dtype=float)
    scale = np.linalg.norm(f_ext)
    tol = rtol * scale if scale > 0 else atol
    history = []
    for step in range(1, load_steps + 1):
        target = f_ext * (step / load_steps)
        history = []
        for it in range(max_iter + 1):
            f, K = model.internal(q, True)
            r = f - target
            res = float(np.linalg.norm(r))
            history.append(res)
            if res < tol:
                break
            if it == max_iter:
                raise ConvergenceError(
                    f"static Newton stalled at load step {step}", residual=res)
            q = q - linsolve(K, r)
        log.debug("load step %d converged in %d iterations", step, len(history) - 1)
    return StaticSolution(q, tuple(history), len(history) - 1)
