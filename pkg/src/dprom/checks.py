"""Quick randomized self-checks behind ``dprom check``.

Each check draws a few random samples and returns a :class:`CheckResult`.
They are smoke tests for an installation; the test suite holds the full
versions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .defects import arch_sine
from .full_model import assemble
from .kinematics import (a3a1_matrix, a_matrices, exact_strain, h_matrix, l_matrices,
                         neumann_bound, reference_entries, theta_to_matrix, to_voigt)
from .mesh import build_rect_beam_mesh
from .models import ReducedModel
from .solvers.hb import HarmonicBalance, linear_frf, solve_hb
from .tensors import assemble_dprom, reduced_force_tangent


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)


def _contractive(rng, d, bound):
    A = rng.standard_normal((d, d))
    return A * (rng.uniform(0, bound) / np.linalg.norm(A, 2))


def check_objectivity(rng, n=200) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        R = Rotation.random(random_state=rng).as_matrix()
        Dd = _contractive(rng, 3, 0.3)
        D = (R - np.eye(3)) @ (np.eye(3) + Dd)
        worst = max(worst, np.abs(exact_strain(D, Dd)).max())
    return CheckResult("objectivity", worst < 1e-12, f"max |E| = {worst:.2e}")


def check_l_tables(rng) -> CheckResult:
    """Operator identities of the L arrays (table deviations are reported)."""
    mismatches = 0
    for dim in (2, 3):
        L = l_matrices(dim)
        for which in (1, 2, 3):
            got = dict(L.nonzeros(which))
            ref = dict(reference_entries(dim, which))
            mismatches += len(set(got.items()) ^ set(ref.items()))
    worst = 0.0
    for dim in (2, 3):
        th, thd = rng.standard_normal((2, dim * dim))
        D, Dd = theta_to_matrix(th), theta_to_matrix(thd)
        A1, A2, A3 = a_matrices(th, thd)
        H = h_matrix(dim)
        worst = max(
            worst,
            np.abs((2 * H + A1) @ th - to_voigt(D + D.T + D.T @ D)).max(),
            np.abs(2 * A2 @ th - to_voigt(-Dd.T @ D.T - D @ Dd)).max(),
            np.abs(A3 @ A1 - a3a1_matrix(th, thd)).max(),
        )
    return CheckResult("L tables", worst < 1e-12,
                       f"identity err {worst:.1e}; {mismatches} entries differ from the tables")


def check_neumann(rng, n=200) -> CheckResult:
    bad = 0
    for _ in range(n):
        Dd = _contractive(rng, 3, 0.95)
        for N in (0, 1, 2):
            b = neumann_bound(Dd, N)
            bad += b.delta_n > b.delta_lim * (1 + 1e-12)
    return CheckResult("Neumann bound", bad == 0, f"{bad} violations")


def check_projection(rng, n=5) -> CheckResult:
    mesh = build_rect_beam_mesh(1.0, 0.05, 6, 1, thickness=0.1)
    U = arch_sine(mesh)
    V = np.linalg.qr(rng.standard_normal((mesh.n_free, 4)))[0]
    worst = 0.0
    for variant in ("N0", "N1", "N1t"):
        T = assemble_dprom(mesh, V, U, variant)
        for _ in range(n):
            eta = 1e-3 * rng.standard_normal(4)
            xi = rng.uniform(-1, 1, 1)
            f_r, _ = reduced_force_tangent(T, xi, eta)
            f = V.T @ assemble(mesh, V @ eta, U, xi, variant, tangent=False).f
            worst = max(worst, np.linalg.norm(f_r - f) / np.linalg.norm(f))
    return CheckResult("projection", worst < 1e-10, f"max rel err {worst:.1e}")


def check_hb_linear(rng) -> CheckResult:
    m = 3
    K = np.diag(rng.uniform(1, 4, m))
    model = ReducedModel.polynomial(np.eye(m), K, C=0.05 * K)
    F = rng.standard_normal(m)
    hb = HarmonicBalance(model, 3)
    c, _, _ = solve_hb(hb, 1.3, hb.forcing(F))
    a1, b1 = linear_frf(model, 1.3, F)
    X = hb.split(c)
    err = max(np.abs(X[1] - a1).max(), np.abs(X[2] - b1).max())
    return CheckResult("HB linear", err < 1e-10, f"max coefficient err {err:.1e}")


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check_objectivity(rng), check_l_tables(rng), check_neumann(rng),
            check_projection(rng), check_hb_linear(rng)]
