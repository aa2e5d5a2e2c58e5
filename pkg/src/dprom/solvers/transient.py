"""Implicit Newmark integration of the nonlinear equations of motion."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from ..exceptions import ConfigurationError, ConvergenceError
from ._common import ATOL, RTOL, linsolve

Forcing = Union[None, np.ndarray, Callable[[float], np.ndarray]]


@dataclass
class TimeSeries:
    """Trajectory of a second-order model.

    Attributes
    ----------
    t : (N,) array
        Times in seconds.
    q, v, a : (N, n) arrays
        Displacement, velocity and acceleration.
    probes : (N, k) array
        Physical probe displacements.
    probe_names : tuple of str
    """

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    a: np.ndarray
    probes: np.ndarray
    probe_names: tuple = ()

    def first_harmonic(self, Omega: float, periods: int = 1, signal=None):
        """Cosine and sine coefficients of the last ``periods`` periods.

        Returns ``(a1, b1)`` arrays over the probes (or over ``signal``'s
        columns). The window must hold an integer number of samples.
        """
        x = self.probes if signal is None else np.asarray(signal)
        T = 2 * np.pi / Omega
        dt = self.t[1] - self.t[0]
        n = int(round(periods * T / dt))
        if n < 2 or n >= len(self.t):
            raise ConfigurationError("time series shorter than the analysis window")
        tt = self.t[-n - 1:-1]
        xx = x[-n - 1:-1]
        c = np.cos(Omega * tt)[:, None]
        s = np.sin(Omega * tt)[:, None]
        return 2 * (xx * c).mean(axis=0), 2 * (xx * s).mean(axis=0)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + list(self.probe_names))
            for t, row in zip(self.t, self.probes):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return path


def _forcing(force: Forcing, n: int):
    if force is None:
        return lambda t: np.zeros(n)
    if callable(force):
        return force
    F = np.asarray(force, dtype=float)
    return lambda t: F


def harmonic_forcing(F, Omega: float):
    """``F cos(Omega t)``."""
    F = np.asarray(F, dtype=float)
    return lambda t: F * np.cos(Omega * t)


def newmark_step(model, q, v, a, t_next, dt, F_next, gamma=0.5, beta=0.25,
                 rtol=RTOL, atol=ATOL, max_iter=20):
    """One implicit Newmark step; returns ``(q, v, a, iterations)``."""
    c1 = 1.0 / (beta * dt * dt)
    c2 = gamma / (beta * dt)
    q_pred = q + dt * v + dt * dt * (0.5 - beta) * a
    v_pred = v + dt * (1 - gamma) * a
    qn = q_pred.copy()
    scale = max(np.linalg.norm(F_next), np.linalg.norm(model.M @ a))
    tol = rtol * scale if scale > 0 else atol
    for it in range(max_iter + 1):
        an = c1 * (qn - q_pred)
        vn = v_pred + gamma * dt * an
        f, K = model.internal(qn, True)
        r = model.M @ an + model.C @ vn + f - F_next
        res = float(np.linalg.norm(r))
        # rounding floor of the inertia and stiffness terms (length-n sums)
        aq = np.abs(qn)
        floor = 64 * np.sqrt(qn.size) * np.finfo(float).eps * float(
            np.linalg.norm(c1 * (abs(model.M) @ aq) + abs(K) @ aq))
        if res < max(tol, floor):
            return qn, vn, an, it
        if it == max_iter:
            raise ConvergenceError(f"Newmark step did not converge at t={t_next:.6g}",
                                   residual=res, time=t_next)
        qn = qn - linsolve(c1 * model.M + c2 * model.C + K, r)
    raise AssertionError("unreachable")


def newmark_transient(model, forcing: Forcing, dt: float, t_end: float, q0=None,
                      v0=None, gamma: float = 0.5, beta: float = 0.25,
                      rtol: float = RTOL, max_iter: int = 20,
                      store_every: int = 1) -> TimeSeries:
    """Integrate ``M q'' + C q' + f(q) = F(t)`` from ``t = 0`` to ``t_end``.

    Parameters
    ----------
    forcing : callable, array or None
        ``F(t)`` on the model's coordinates, or a constant vector.
    dt : float
        Fixed step; ``round(t_end / dt)`` steps are taken.
    gamma, beta : float
        Newmark parameters (average acceleration by default).
    store_every : int
        Keep every ``store_every``-th step (the last step is always kept).

    Raises
    ------
    ConvergenceError
        If a step fails; the exception carries the time stamp.
    """
    if dt <= 0 or t_end <= 0:
        raise ConfigurationError("dt and t_end must be positive")
    n = model.n
    F = _forcing(forcing, n)
    q = np.zeros(n) if q0 is None else np.array(q0, dtype=float)
    v = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    f0, _ = model.internal(q, False)
    a = linsolve(model.M, F(0.0) - model.C @ v - f0)
    n_steps = int(round(t_end / dt))
    ts, qs, vs, accs = [0.0], [q], [v], [a]
    for k in range(1, n_steps + 1):
        t = k * dt
        q, v, a, _ = newmark_step(model, q, v, a, t, dt, F(t), gamma, beta, rtol,
                                  max_iter=max_iter)
        if k % store_every == 0 or k == n_steps:
            ts.append(t)
            qs.append(q)
            vs.append(v)
            accs.append(a)
    Q = np.array(qs)
    return TimeSeries(np.array(ts), Q, np.array(vs), np.array(accs),
                      np.asarray(model.probes(Q)), tuple(model.probe_names))
