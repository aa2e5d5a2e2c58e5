"""Shooting method for periodic orbits (validation oracle for HB)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError, ConvergenceError
from ._common import linsolve
from .transient import newmark_step


@dataclass
class PeriodicOrbit:
    """Converged periodic orbit.

    Attributes
    ----------
    Omega : float
        Angular frequency (rad/s).
    q0, v0 : arrays
        State at ``t = 0``.
    t, q : arrays
        One period sampled at the Newmark substeps.
    iterations : int
        Newton updates performed.
    residual : float
        Final periodicity defect ``|z(T) - z(0)|``.
    delta : float
        Artificial damping of the autonomous formulation (zero when forced).
    """

    Omega: float
    q0: np.ndarray
    v0: np.ndarray
    t: np.ndarray
    q: np.ndarray
    iterations: int
    residual: float
    delta: float = 0.0

    def first_harmonic(self, rows=None):
        """Amplitude ``sqrt(a1^2 + b1^2)`` per coordinate (or row)."""
        q = self.q[:-1] if rows is None else self.q[:-1] @ np.asarray(rows).T
        tau = self.Omega * self.t[:-1]
        a = 2 * (q * np.cos(tau)[:, None]).mean(axis=0)
        b = 2 * (q * np.sin(tau)[:, None]).mean(axis=0)
        return np.hypot(a, b)


class _Integrator:
    """Period map of a model under optional forcing and extra mass damping."""

    def __init__(self, model, n_steps, F):
        self.model = model
        self.n_steps = n_steps
        self.F = None if F is None else np.asarray(F, dtype=float)

    def run(self, q0, v0, Omega, delta=0.0, keep=False):
        mdl = self.model
        n = mdl.n
        T = 2 * np.pi / Omega
        dt = T / self.n_steps
        damped = _Damped(mdl, delta) if delta else mdl

        def force(t):
            return np.zeros(n) if self.F is None else self.F * np.cos(Omega * t)

        f0, _ = mdl.internal(q0, False)
        a = linsolve(mdl.M, force(0.0) - damped.C @ v0 - f0)
        q, v = q0.copy(), v0.copy()
        traj = [q] if keep else None
        for k in range(1, self.n_steps + 1):
            t = k * dt
            q, v, a, _ = newmark_step(damped, q, v, a, t, dt, force(t), rtol=1e-12)
            if keep:
                traj.append(q)
        return q, v, (None if not keep else np.array(traj))


class _Damped:
    def __init__(self, model, delta):
        self.model = model
        self.M = model.M
        self.C = model.C + delta * model.M
        self.n = model.n

    def internal(self, q, tangent=True):
        return self.model.internal(q, tangent)


def _fd_jacobian(fun, x, steps):
    g0 = fun(x)
    J = np.empty((len(g0), len(x)))
    for j in range(len(x)):
        xp = x.copy()
        xp[j] += steps[j]
        J[:, j] = (fun(xp) - g0) / steps[j]
    return g0, J


def shooting_oracle(model, Omega: float, q0, v0=None, F=None, amplitude=None,
                    anchor=None, n_steps: int = 200, tol: float = 1e-9,
                    max_iter: int = 25, fd_step: float = 1e-4) -> PeriodicOrbit:
    """Periodic orbit by Newton iterations on the period map.

    Forced mode (``F`` given): ``Omega`` is fixed and the unknown is the
    initial state. Autonomous mode (``amplitude`` given): ``Omega`` and an
    artificial mass damping are unknowns as well, with ``anchor . q(0) =
    amplitude`` and ``anchor . v(0) = 0``. The monodromy is obtained by
    finite differences of the Newmark period map.

    Parameters
    ----------
    q0, v0 : arrays
        Initial guess of the state at ``t = 0``.
    n_steps : int
        Newmark substeps per period.
    tol : float
        Periodicity defect relative to the state norm.
    """
    n = model.n
    q0 = np.asarray(q0, dtype=float)
    v0 = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
    autonomous = amplitude is not None
    if autonomous == (F is not None):
        raise ConfigurationError("give either a forcing F or a backbone amplitude")
    integ = _Integrator(model, n_steps, F)
    if autonomous:
        w = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
        if anchor is None:
            w[int(np.argmax(np.abs(q0)))] = 1.0
        x = np.concatenate([q0, v0, [Omega, 0.0]])
    else:
        x = np.concatenate([q0, v0])

    def residual(x):
        q, v = x[:n], x[n:2 * n]
        Om = x[2 * n] if autonomous else Omega
        delta = x[2 * n + 1] if autonomous else 0.0
        qT, vT, _ = integ.run(q, v, Om, delta)
        g = np.concatenate([qT - q, vT - v])
        if autonomous:
            g = np.concatenate([g, [w @ q - amplitude, w @ v]])
        return g

    def norm_scale(x):
        q, v = x[:n], x[n:2 * n]
        Om = x[2 * n] if autonomous else Omega
        return np.linalg.norm(q) + np.linalg.norm(v) / Om

    qs = max(np.abs(q0).max(), np.abs(v0).max() / Omega)
    if qs == 0 and F is not None:
        qs = np.abs(linsolve(model.M, np.asarray(F, dtype=float))).max() / Omega ** 2
    if qs == 0:
        raise ConfigurationError("cannot scale the shooting unknowns from a zero guess")
    Om0 = Omega
    steps = np.concatenate([np.full(n, fd_step * qs), np.full(n, fd_step * qs * Om0)])
    if autonomous:
        steps = np.concatenate([steps, [fd_step * Om0, fd_step * Om0]])
    g = residual(x)
    for it in range(max_iter + 1):
        res = np.linalg.norm(g[:2 * n] * np.concatenate([np.ones(n), np.full(n, 1 / Om0)]))
        if res < tol * norm_scale(x) and (not autonomous or abs(g[-2]) + abs(g[-1]) < tol * qs):
            break
        if it == max_iter:
            raise ConvergenceError("shooting did not converge", residual=float(res))
        g, J = _fd_jacobian(residual, x, steps)
        x = x - np.linalg.solve(J, g)
        g = residual(x)
    q, v = x[:n], x[n:2 * n]
    Om = x[2 * n] if autonomous else Omega
    delta = x[2 * n + 1] if autonomous else 0.0
    _, _, traj = integ.run(q, v, Om, delta, keep=True)
    t = np.linspace(0, 2 * np.pi / Om, n_steps + 1)
    return PeriodicOrbit(float(Om), q, v, t, traj, it, float(res), float(delta))
