"""Continuation of harmonic-balance branches.

Frequency responses use a pseudo-arclength predictor-corrector in scaled
``(c, Omega)`` space. Backbones solve the undamped autonomous problem with a
phase anchor and an artificial damping unknown (which converges to zero),
parametrized by the first-harmonic amplitude of an anchor coordinate.
"""
from __future__ import annotations

import logging
import time
import warnings
from typing import Optional

import numpy as np

from ..exceptions import ConfigurationError, ConvergenceError
from ._common import ATOL, RTOL
from .hb import HarmonicBalance, HBSolution, linear_frf, solve_hb

log = logging.getLogger(__name__)

GROW_ITER = 4
MAX_CORRECTOR_ITER = 10


def _adapt(ds, iterations, ds_max):
    return min(2.0 * ds, ds_max) if iterations <= GROW_ITER else ds


def _probe_rows(model):
    P = getattr(model, "probe_matrix", None)
    if P is None or P.shape[0] == 0:
        return np.eye(model.n)[:1], ("q0",)
    return np.asarray(P.toarray() if hasattr(P, "toarray") else P), tuple(model.probe_names)


def continue_frf(model, H: int, F, Omega_range, n_samples: Optional[int] = None,
                 ds: float = 0.01, ds_min: float = 1e-6, ds_max: float = 0.05,
                 max_points: int = 5000, rtol: float = RTOL,
                 c_scale: Optional[float] = None) -> HBSolution:
    """Frequency response under ``F cos(Omega t)`` over ``Omega_range``.

    Parameters
    ----------
    model : ReducedModel
    H : int
        Harmonics retained.
    F : (m,) array
        Reduced force amplitude.
    Omega_range : (float, float)
        Start and end frequency in rad/s; the sweep direction follows their
        order and the branch may pass through turning points.
    ds, ds_min, ds_max : float
        Initial, minimum and maximum arclength in scaled coordinates
        (coefficients over ``c_scale``, frequency over the start value).
    c_scale : float, optional
        Coefficient scale; defaults to the peak linear response.

    Returns
    -------
    HBSolution
        ``meta["truncated"]`` is set when the step collapsed below
        ``ds_min`` before reaching the end of the range.
    """
    t_start = time.perf_counter()
    hb = HarmonicBalance(model, H, n_samples)
    F = np.asarray(F, dtype=float)
    fext = hb.forcing(F)
    lo, hi = map(float, Omega_range)
    if lo <= 0 or hi <= 0 or lo == hi:
        raise ConfigurationError("Omega_range needs two distinct positive values")
    direction = 1.0 if hi > lo else -1.0
    scale_f = np.linalg.norm(fext)
    tol = rtol * scale_f if scale_f > 0 else ATOL

    c0 = np.zeros(hb.n_unknowns)
    if hasattr(model, "K0"):
        a1, b1 = linear_frf(model, lo, F)
        c0[hb.m:2 * hb.m], c0[2 * hb.m:3 * hb.m] = a1, b1
    c0, res0, it0 = solve_hb(hb, lo, fext, c0, rtol)
    if c_scale is None:
        c_scale = np.linalg.norm(c0)
        if hasattr(model, "K0"):
            for om in np.linspace(min(lo, hi), max(lo, hi), 200):
                a1, b1 = linear_frf(model, om, F)
                c_scale = max(c_scale, np.hypot(np.linalg.norm(a1), np.linalg.norm(b1)))
        c_scale = c_scale or 1.0
    w_scale = lo
    S = np.concatenate([np.full(hb.n_unknowns, c_scale), [w_scale]])

    def system(y):
        x = y * S
        R, J, dR = hb.residual(x[:-1], x[-1], fext)
        Jy = np.hstack([J * c_scale, dR[:, None] * w_scale])
        return R, Jy

    y = np.concatenate([c0, [lo]]) / S
    R, Jy = system(y)
    A = np.vstack([Jy, np.eye(len(y))[-1]])
    t = np.linalg.solve(A, np.concatenate([np.zeros(len(R)), [direction]]))
    t /= np.linalg.norm(t)

    Omegas, coeffs, residuals, iters = [lo], [c0], [res0], [it0]
    y_prev = None
    truncated = None
    while len(Omegas) < max_points:
        if y_prev is not None:
            sec = y - y_prev
            t = sec / np.linalg.norm(sec)
        while True:
            y_pred = y + ds * t
            yk = y_pred.copy()
            ok = False
            for it in range(MAX_CORRECTOR_ITER + 1):
                R, Jy = system(yk)
                res = float(np.linalg.norm(R))
                if res < tol and it > 0:
                    ok = True
                    break
                if it == MAX_CORRECTOR_ITER or not np.isfinite(res):
                    break
                A = np.vstack([Jy, t])
                rhs = np.concatenate([R, [t @ (yk - y_pred)]])
                try:
                    yk = yk - np.linalg.solve(A, rhs)
                except np.linalg.LinAlgError:
                    break
            if ok:
                break
            ds *= 0.5
            if ds < ds_min:
                truncated = f"step collapsed below {ds_min:g} at Omega={y[-1] * w_scale:.6g}"
                break
        if truncated:
            warnings.warn(f"frequency response truncated: {truncated}", RuntimeWarning)
            log.warning("frequency response truncated: %s", truncated)
            break
        # fresh residual check of the accepted point
        x = yk * S
        R_check, _, _ = hb.residual(x[:-1], x[-1], fext, jacobian=False)
        if np.linalg.norm(R_check) >= tol:
            raise ConvergenceError("accepted point failed re-verification",
                                   residual=float(np.linalg.norm(R_check)))
        y_prev, y = y, yk
        Omegas.append(x[-1])
        coeffs.append(x[:-1])
        residuals.append(float(np.linalg.norm(R_check)))
        iters.append(it)
        ds = _adapt(ds, it, ds_max)
        if (x[-1] - hi) * direction >= 0 or (x[-1] - lo) * direction < 0:
            break
    rows, names = _probe_rows(model)
    meta = {"n_samples": hb.Ns, "rtol": rtol, "c_scale": float(c_scale),
            "Omega_range": [lo, hi], "truncated": truncated,
            "seconds": time.perf_counter() - t_start,
            "model": getattr(model, "name", "")}
    return HBSolution(np.array(Omegas), np.array(coeffs), H, hb.m, np.array(residuals),
                      np.array(iters), rows, names, "frf", meta)


def _anchor(model, mode: int, anchor):
    om, Phi = model.modes()
    phi = Phi[:, mode]
    if anchor is None:
        w = np.zeros(model.n)
        w[int(np.argmax(np.abs(phi)))] = 1.0
    else:
        w = np.asarray(anchor, dtype=float).reshape(-1)
        if w.shape != (model.n,):
            raise ConfigurationError("anchor must have one entry per coordinate")
    wphi = w @ phi
    if abs(wphi) < 1e-12 * np.abs(phi).max():
        raise ConfigurationError("the anchor does not see the selected mode")
    return w, phi / wphi, float(om[mode])


def backbone(model, H: int, amplitude_range, mode: int = 0, anchor=None,
             n_samples: Optional[int] = None, n_points: int = 40,
             max_points: int = 2000, rtol: float = RTOL,
             min_step_fraction: float = 1e-6) -> HBSolution:
    """Backbone of a nonlinear normal mode.

    The unknowns are the coefficients, ``Omega`` and an artificial mass
    damping ``delta``; the extra equations fix the anchor's first cosine
    coefficient to the amplitude ``A`` and its first sine coefficient to
    zero. ``delta`` vanishes on a conservative branch and is reported in
    ``meta["max_abs_delta"]``.

    Parameters
    ----------
    amplitude_range : (float, float)
        First-harmonic amplitude of the anchor, start and end.
    mode : int
        Linear mode the branch emanates from.
    anchor : (m,) array, optional
        Linear functional defining amplitude and phase; defaults to the
        coordinate with the largest share of the mode.
    n_points : int
        Nominal number of amplitude steps (the step adapts).
    """
    t_start = time.perf_counter()
    hb = HarmonicBalance(model, H, n_samples)
    m, N = hb.m, hb.n_unknowns
    w, phi, omega0 = _anchor(model, mode, anchor)
    A0, A1 = map(float, amplitude_range)
    if A0 == A1:
        raise ConfigurationError("amplitude range is empty")
    zeros_C = np.zeros((m, m))
    Mmat = hb.M

    def solve_point(x0, A):
        x = x0.copy()
        scale = None
        for it in range(MAX_CORRECTOR_ITER + 1):
            c, Om, delta = x[:N], x[N], x[N + 1]
            R, J, dR = hb.residual(c, Om, 0.0, C=delta * Mmat)
            Dm, _ = hb.dynamic_matrix(Om, C=Mmat)
            D0, _ = hb.dynamic_matrix(Om, C=zeros_C)
            dR_ddelta = (Dm - D0) @ c
            X = hb.split(c)
            if scale is None:
                scale = np.linalg.norm(model.K0 @ X[1]) if hasattr(model, "K0") else 0.0
                tol = rtol * scale if scale > 0 else ATOL
            g = np.concatenate([R, [w @ X[1] - A, w @ X[2]]])
            res = float(np.linalg.norm(R))
            cons = abs(g[-2]) + abs(g[-1])
            if it > 0 and res < tol and cons < 1e-12 * max(abs(A), 1e-300):
                return x, res, it
            if it == MAX_CORRECTOR_ITER or not np.isfinite(res):
                return None, res, it
            Jf = np.zeros((N + 2, N + 2))
            Jf[:N, :N] = J
            Jf[:N, N] = dR
            Jf[:N, N + 1] = dR_ddelta
            Jf[N, m:2 * m] = w
            Jf[N + 1, 2 * m:3 * m] = w
            try:
                x = x - np.linalg.solve(Jf, g)
            except np.linalg.LinAlgError:
                return None, res, it
        return None, res, it

    x0 = np.zeros(N + 2)
    x0[m:2 * m] = A0 * phi
    x0[N] = omega0
    x, res, it = solve_point(x0, A0)
    if x is None:
        raise ConvergenceError("backbone start point did not converge", residual=res)
    dA = (A1 - A0) / n_points
    dA_max = 4 * abs(dA)
    dA_min = min_step_fraction * abs(A1 - A0)
    amps, xs, residuals, iters = [A0], [x], [res], [it]
    truncated = None
    A = A0
    while len(xs) < max_points and (A1 - A) * np.sign(dA) > 0:
        step = dA if abs(A1 - A) > abs(dA) else A1 - A
        while True:
            if len(xs) >= 2:
                slope = (xs[-1] - xs[-2]) / (amps[-1] - amps[-2])
                guess = xs[-1] + step * slope
            else:
                guess = xs[-1].copy()
                guess[:N] *= (A + step) / A if A != 0 else 1.0
            xn, res, it = solve_point(guess, A + step)
            if xn is not None:
                break
            step *= 0.5
            dA *= 0.5
            if abs(step) < dA_min:
                truncated = f"step collapsed at amplitude {A:.6g}"
                break
        if truncated:
            warnings.warn(f"backbone truncated: {truncated}", RuntimeWarning)
            log.warning("backbone truncated: %s", truncated)
            break
        A = A + step
        amps.append(A)
        xs.append(xn)
        residuals.append(res)
        iters.append(it)
        if it <= GROW_ITER:
            dA = np.sign(dA) * min(2 * abs(dA), dA_max)
    X = np.array(xs)
    rows, names = _probe_rows(model)
    meta = {"n_samples": hb.Ns, "rtol": rtol, "mode": mode,
            "amplitudes": [float(a) for a in amps],
            "max_abs_delta": float(np.abs(X[:, N + 1]).max()),
            "linear_omega": omega0, "truncated": truncated,
            "seconds": time.perf_counter() - t_start,
            "model": getattr(model, "name", "")}
    return HBSolution(X[:, N], X[:, :N], H, m, np.array(residuals), np.array(iters),
                      rows, names, "backbone", meta)
