"""Harmonic balance with alternating frequency/time (AFT) force evaluation.

Coefficient vectors are harmonic-major: ``[a0, a1, b1, ..., aH, bH]`` with
one block of ``m`` reduced coordinates each, so that
``q(t) = a0 + sum_k a_k cos(k Omega t) + b_k sin(k Omega t)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..exceptions import ConfigurationError, ConvergenceError
from ._common import ATOL, RTOL, linsolve


class HarmonicBalance:
    """AFT machinery of one model and harmonic truncation.

    Parameters
    ----------
    model
        Reduced model with ``M``, ``C``, ``force_batch`` and ``tangent_batch``
        (``internal`` is used pointwise when batches are unavailable).
    H : int
        Number of harmonics.
    n_samples : int, optional
        Time samples per period; ``3H + 1`` by default.
    """

    def __init__(self, model, H: int, n_samples: Optional[int] = None):
        if H < 1:
            raise ConfigurationError("at least one harmonic is needed")
        Ns = 3 * H + 1 if n_samples is None else int(n_samples)
        if Ns < 2 * H + 1:
            raise ConfigurationError(f"{Ns} samples cannot resolve {H} harmonics")
        self.model = model
        self.H = H
        self.Ns = Ns
        self.m = model.n
        self.M = np.asarray(model.M.toarray() if hasattr(model.M, "toarray") else model.M)
        self.C = np.asarray(model.C.toarray() if hasattr(model.C, "toarray") else model.C)
        tau = 2 * np.pi * np.arange(Ns) / Ns
        k = np.arange(1, H + 1)
        E = np.empty((Ns, 2 * H + 1))
        E[:, 0] = 1.0
        E[:, 1::2] = np.cos(np.outer(tau, k))
        E[:, 2::2] = np.sin(np.outer(tau, k))
        self.E = E
        P = E.T * (2.0 / Ns)
        P[0] = 1.0 / Ns
        self.P = P
        self.tau = tau

    @property
    def n_unknowns(self) -> int:
        return self.m * (2 * self.H + 1)

    def split(self, c):
        """Coefficients as a ``(2H+1, m)`` array."""
        return np.asarray(c).reshape(2 * self.H + 1, self.m)

    def synthesize(self, c, tau=None):
        """``q`` at the AFT samples (or at phases ``tau``), ``(N, m)``."""
        E = self.E if tau is None else self._basis(tau)
        return E @ self.split(c)

    def _basis(self, tau):
        tau = np.atleast_1d(tau)
        k = np.arange(1, self.H + 1)
        E = np.empty((len(tau), 2 * self.H + 1))
        E[:, 0] = 1.0
        E[:, 1::2] = np.cos(np.outer(tau, k))
        E[:, 2::2] = np.sin(np.outer(tau, k))
        return E

    def dynamic_matrix(self, Omega, C=None):
        """Linear inertia and damping part ``D(Omega)`` and ``dD/dOmega``."""
        m, H = self.m, self.H
        C = self.C if C is None else C
        N = self.n_unknowns
        D = np.zeros((N, N))
        dD = np.zeros((N, N))
        for k in range(1, H + 1):
            ic = slice((2 * k - 1) * m, 2 * k * m)
            is_ = slice(2 * k * m, (2 * k + 1) * m)
            D[ic, ic] = D[is_, is_] = -(k * Omega) ** 2 * self.M
            dD[ic, ic] = dD[is_, is_] = -2 * k * k * Omega * self.M
            D[ic, is_] = k * Omega * C
            D[is_, ic] = -k * Omega * C
            dD[ic, is_] = k * C
            dD[is_, ic] = -k * C
        return D, dD

    def nonlinear(self, c, jacobian=True):
        """AFT force coefficients and their Jacobian w.r.t. ``c``."""
        Q = self.synthesize(c)
        mdl = self.model
        if hasattr(mdl, "force_batch"):
            f = mdl.force_batch(Q)
            Kt = mdl.tangent_batch(Q) if jacobian else None
        else:
            out = [mdl.internal(q, jacobian) for q in Q]
            f = np.array([o[0] for o in out])
            Kt = np.array([np.asarray(o[1].toarray() if hasattr(o[1], "toarray") else o[1])
                           for o in out]) if jacobian else None
        Fc = (self.P @ f).reshape(-1)
        if not jacobian:
            return Fc, None
        J = np.einsum("hs,sij,sk->hikj", self.P, Kt, self.E, optimize=True)
        return Fc, J.reshape(self.n_unknowns, self.n_unknowns)

    def forcing(self, F_cos, F_sin=None):
        """Coefficient vector of ``F_cos cos(Omega t) + F_sin sin(Omega t)``."""
        out = np.zeros(self.n_unknowns)
        out[self.m:2 * self.m] = F_cos
        if F_sin is not None:
            out[2 * self.m:3 * self.m] = F_sin
        return out

    def residual(self, c, Omega, f_ext, jacobian=True, C=None):
        """Residual ``D(Omega) c + F_nl(c) - f_ext`` with derivatives.

        Returns
        -------
        R : (N,) array
        J : (N, N) array
            ``dR/dc`` (``None`` when ``jacobian`` is false).
        dR_dOmega : (N,) array
        """
        c = np.asarray(c, dtype=float)
        D, dD = self.dynamic_matrix(Omega, C)
        Fnl, Jnl = self.nonlinear(c, jacobian)
        R = D @ c + Fnl - f_ext
        return R, (None if Jnl is None else D + Jnl), dD @ c

    def first_harmonic_amplitude(self, c, rows=None):
        """``sqrt(a1^2 + b1^2)`` per coordinate (or per row of ``rows``)."""
        X = self.split(c)
        a1, b1 = X[1], X[2]
        if rows is not None:
            a1, b1 = rows @ a1, rows @ b1
        return np.hypot(a1, b1)


def hb_residual(model, coeffs, Omega, H, f_ext, n_samples=None):
    """Residual and Jacobian of the harmonic-balance equations.

    ``f_ext`` is a coefficient vector of the same layout as ``coeffs``.
    Returns ``(R, dR/dc, dR/dOmega)``.
    """
    return HarmonicBalance(model, H, n_samples).residual(coeffs, Omega, f_ext)


def solve_hb(hb: HarmonicBalance, Omega, f_ext, c0=None, rtol=RTOL, atol=ATOL,
             max_iter=30):
    """Newton solve at fixed frequency; returns ``(c, residual, iterations)``."""
    c = np.zeros(hb.n_unknowns) if c0 is None else np.array(c0, dtype=float)
    scale = np.linalg.norm(f_ext)
    tol = rtol * scale if scale > 0 else atol
    for it in range(max_iter + 1):
        R, J, _ = hb.residual(c, Omega, f_ext)
        res = float(np.linalg.norm(R))
        if res < tol:
            return c, res, it
        if it == max_iter:
            break
        c = c - linsolve(J, R)
    raise ConvergenceError(f"HB Newton failed at Omega={Omega:.6g}", residual=res)


def linear_frf(model, Omega, F):
    """Closed-form steady state of the linearized model: ``(a1, b1)``."""
    K = np.asarray(model.K0)
    X = np.linalg.solve(K - Omega ** 2 * model.M + 1j * Omega * model.C, F)
    return X.real, -X.imag


@dataclass
class HBSolution:
    """Branch of harmonic-balance solutions.

    Attributes
    ----------
    Omega : (P,) array
        Angular frequencies in rad/s.
    coeffs : (P, m (2H+1)) array
    H, m : int
    residuals, iterations : (P,) arrays
    probe_matrix : (k, m) array
    probe_names : tuple of str
    kind : str
        ``"frf"`` or ``"backbone"``.
    meta : dict
        Solver settings and diagnostics (truncation reason, timings).
    """

    Omega: np.ndarray
    coeffs: np.ndarray
    H: int
    m: int
    residuals: np.ndarray
    iterations: np.ndarray
    probe_matrix: np.ndarray
    probe_names: tuple = ()
    kind: str = "frf"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.Omega)

    def harmonic(self, k: int):
        """Cosine and sine coefficients of harmonic ``k``, each ``(P, m)``."""
        X = self.coeffs.reshape(len(self), 2 * self.H + 1, self.m)
        if k == 0:
            return X[:, 0], np.zeros_like(X[:, 0])
        return X[:, 2 * k - 1], X[:, 2 * k]

    def probe_amplitude(self, k: int = 1):
        """Harmonic amplitude of every probe, ``(P, n_probes)``."""
        a, b = self.harmonic(k)
        return np.hypot(a @ self.probe_matrix.T, b @ self.probe_matrix.T)

    def coordinate_amplitude(self, k: int = 1):
        a, b = self.harmonic(k)
        return np.hypot(a, b)

    def peak(self, probe: int = 0):
        """``(Omega, amplitude)`` of the largest first-harmonic probe value."""
        amp = self.probe_amplitude(1)[:, probe]
        i = int(np.argmax(amp))
        return float(self.Omega[i]), float(amp[i])

    def to_csv(self, path, normalize: float = 1.0) -> Path:
        """Write ``Omega`` and first-harmonic probe amplitudes."""
        path = Path(path)
        amp = self.probe_amplitude(1) / normalize
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Omega_rad_s", "f_Hz"] + [f"{p}_h1" for p in self.probe_names])
            for om, row in zip(self.Omega, amp):
                w.writerow([repr(float(om)), repr(float(om / (2 * np.pi)))]
                           + [repr(float(x)) for x in row])
        return path

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "H": self.H,
            "m": self.m,
            "points": len(self),
            "max_residual": float(np.max(self.residuals)) if len(self) else None,
            "probes": list(self.probe_names),
            **self.meta,
        }

    def write_manifest(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True, default=float))
        return path
