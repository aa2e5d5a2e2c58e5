"""Full-order internal forces, tangent stiffness, mass and damping.

Forces are evaluated by Gauss quadrature on the nominal mesh for every
strain variant. With the ``-v`` flag the integrand is weighted by the
volume ratio of the defected configuration: ``det(I + Dd)`` for the exact
strain and its linearization ``1 + sum_i xi_i div f_i`` otherwise.

All global vectors and matrices live on the free (unconstrained) dofs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .defects import DefectBasis
from .exceptions import ConfigurationError
from .kinematics import (
    ModelVariant,
    StrainVariant,
    _f1_inverse,
    h_matrix,
    l_matrices,
    theta_to_matrix,
)
from .mesh import NominalMesh


@dataclass(frozen=True)
class ForceAndTangent:
    """Internal force vector and tangent stiffness (``None`` if skipped)."""

    f: np.ndarray
    K: Optional[object] = None


def gradient_kernel(theta, theta_d, C, strain: StrainVariant, tangent=True):
    """Stress resultant and tangent in gradient space at quadrature points.

    For a strain ``E(theta)`` with ``dE = B dtheta`` this returns
    ``r = B^T C E`` and ``K = dr/dtheta``, both stacked over the leading
    axes of ``theta``.

    Parameters
    ----------
    theta, theta_d : (..., g) arrays
    C : (s, s) array
    strain : StrainVariant
    """
    g = theta.shape[-1]
    dim = 2 if g == 4 else 3
    H = h_matrix(dim)
    L = l_matrices(dim)
    if strain is StrainVariant.EXACT:
        Finv = _f1_inverse(theta_to_matrix(theta_d))
        # theta2 = T theta maps nominal to defected-frame gradients
        T = np.einsum("ab,...lj->...ajbl", np.eye(dim), Finv).reshape(
            theta.shape[:-1] + (g, g)
        )
        th2 = np.einsum("...gh,...h->...g", T, theta)
        A1 = np.einsum("rck,...k->...rc", L.L1, th2)
        B = H + A1
        E = np.einsum("...rc,...c->...r", H + 0.5 * A1, th2)
        S = E @ C.T
        r2 = np.einsum("...rc,...r->...c", B, S)
        r = np.einsum("...gc,...g->...c", T, r2)
        if not tangent:
            return r, None
        K2 = np.einsum("...rc,rs,...sk->...ck", B, C, B, optimize=True)
        K2 += np.einsum("...r,rck->...ck", S, L.L1)
        K = np.einsum("...gc,...gh,...hk->...ck", T, K2, T, optimize=True)
        return r, K

    A1 = np.einsum("rck,...k->...rc", L.L1, theta)
    L2 = L.L1 if strain is StrainVariant.N0 else L.L2s
    A2 = np.einsum("rck,...k->...rc", L2, theta_d)
    opE = H + 0.5 * A1 + A2
    B = H + A1 + A2
    if strain is StrainVariant.N1:
        L3td = np.einsum("rcab,...b->...rca", L.L3s, theta_d)
        A3A1 = np.einsum("...rca,...a->...rc", L3td, theta)
        opE = opE + A3A1
        B = B + 2.0 * A3A1
    E = np.einsum("...rc,...c->...r", opE, theta)
    S = E @ C.T
    r = np.einsum("...rc,...r->...c", B, S)
    if not tangent:
        return r, None
    K = np.einsum("...rc,rs,...sk->...ck", B, C, B, optimize=True)
    K += np.einsum("...r,rck->...ck", S, L.L1)
    if strain is StrainVariant.N1:
        K += 2.0 * np.einsum("...r,...rck->...ck", S, L3td)
    return r, K


def _as_defects(U, mesh: NominalMesh) -> Optional[DefectBasis]:
    if U is None:
        return None
    if isinstance(U, DefectBasis):
        return U
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[0] != mesh.n_dofs:
        raise ConfigurationError("defect fields need one row per mesh dof")
    return DefectBasis(U)


def volume_weight(mesh, defects: DefectBasis, xi, strain, theta_d=None):
    """Volume ratio ``dV_d / dV_o`` per Gauss point, shape ``(E, nq)``."""
    if strain is StrainVariant.EXACT:
        return np.linalg.det(np.eye(mesh.dim) + theta_to_matrix(theta_d))
    div = defects.divergence_at_qps(mesh)
    return 1.0 + np.tensordot(np.asarray(xi, dtype=float), div, axes=1)


def _quadrature_state(mesh: NominalMesh, u, defects, xi):
    quad = mesh.quadrature
    u_full = mesh.expand(np.asarray(u, dtype=float))
    theta = np.einsum("eqgn,en->eqg", quad.G, u_full[mesh.element_dofs])
    if defects is None:
        ud = np.zeros(mesh.n_dofs)
    else:
        ud = defects.field(xi)
    theta_d = np.einsum("eqgn,en->eqg", quad.G, ud[mesh.element_dofs])
    return quad, theta, theta_d


def _dof_map(mesh: NominalMesh) -> np.ndarray:
    m = -np.ones(mesh.n_dofs, dtype=np.int64)
    m[mesh.free_dofs] = np.arange(mesh.n_free)
    return m


def scatter_vector(mesh: NominalMesh, fe: np.ndarray) -> np.ndarray:
    """Sum element vectors ``(E, n_e)`` into a free-dof vector."""
    dmap = _dof_map(mesh)[mesh.element_dofs].ravel()
    keep = dmap >= 0
    return np.bincount(dmap[keep], weights=fe.ravel()[keep], minlength=mesh.n_free)


def scatter_matrix(mesh: NominalMesh, Ke: np.ndarray) -> sp.csr_matrix:
    """Sum element matrices ``(E, n_e, n_e)`` into a sparse free-dof matrix."""
    dmap = _dof_map(mesh)[mesh.element_dofs]
    ne = dmap.shape[1]
    rows = np.repeat(dmap, ne, axis=1).ravel()
    cols = np.tile(dmap, (1, ne)).ravel()
    vals = Ke.ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = mesh.n_free
    K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def assemble(mesh: NominalMesh, u, U=None, xi=None, variant="N1", tangent=True
             ) -> ForceAndTangent:
    """Global internal force and tangent of a strain variant.

    Parameters
    ----------
    mesh : NominalMesh
    u : (n_free,) array
        Displacements on the free dofs.
    U : DefectBasis or (n_dofs, m_d) array, optional
        Defect fields; ``None`` means no defect.
    xi : (m_d,) array, optional
        Defect amplitudes.
    variant : str or ModelVariant
        ``"N1"``, ``"N1t"``, ``"N0"``, ``"Exact"``, optionally with ``-v``.
    tangent : bool
        Skip the tangent when ``False``.

    Returns
    -------
    ForceAndTangent
        ``f`` on the free dofs and ``K`` as a CSR matrix.
    """
    variant = ModelVariant.parse(variant)
    defects = _as_defects(U, mesh)
    if defects is not None:
        xi = np.zeros(defects.m_d) if xi is None else np.atleast_1d(xi)
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_free,):
        raise ConfigurationError(f"u must have {mesh.n_free} entries, got {u.shape}")
    quad, theta, theta_d = _quadrature_state(mesh, u, defects, xi)
    C = mesh.material.elasticity_matrix(mesh.dim)
    r, Kq = gradient_kernel(theta, theta_d, C, variant.strain, tangent)
    w = quad.dV
    if variant.volume_correction and defects is not None:
        w = w * volume_weight(mesh, defects, xi, variant.strain, theta_d)
    fe = np.einsum("eqgn,eqg,eq->en", quad.G, r, w, optimize=True)
    f = scatter_vector(mesh, fe)
    if not tangent:
        return ForceAndTangent(f)
    return ForceAndTangent(f, assemble_gradient_matrix(mesh, Kq, w))


def assemble_gradient_matrix(mesh: NominalMesh, Kq: np.ndarray, w=None) -> sp.csr_matrix:
    """Assemble ``sum_e sum_q w G^T Kq G`` from gradient-space blocks.

    ``Kq`` has shape ``(E, nq, g, g)``; ``w`` defaults to the quadrature
    volume weights.
    """
    quad = mesh.quadrature
    w = quad.dV if w is None else w
    GK = np.einsum("eqgn,eqgh->eqnh", quad.G, Kq * w[..., None, None], optimize=True)
    Ke = np.einsum("eqnh,eqhm->enm", GK, quad.G, optimize=True)
    return scatter_matrix(mesh, Ke)


def element_force_tangent(mesh: NominalMesh, elem: int, u_e, ud_e, variant="N1",
                          div=None) -> ForceAndTangent:
    """Force and tangent of one element (all element dofs, dense).

    ``div`` optionally gives the volume-correction weight offsets
    ``sum_i xi_i div f_i`` at the element's Gauss points; it is used only
    for ``-v`` variants.
    """
    variant = ModelVariant.parse(variant)
    quad = mesh.quadrature
    G = quad.G[elem]
    theta = G @ np.asarray(u_e, dtype=float)
    theta_d = G @ np.asarray(ud_e, dtype=float)
    C = mesh.material.elasticity_matrix(mesh.dim)
    r, Kq = gradient_kernel(theta, theta_d, C, variant.strain)
    w = quad.dV[elem]
    if variant.volume_correction:
        if variant.strain is StrainVariant.EXACT:
            w = w * np.linalg.det(np.eye(mesh.dim) + theta_to_matrix(theta_d))
        elif div is not None:
            w = w * (1.0 + np.asarray(div))
        else:
            d = mesh.dim
            w = w * (1.0 + theta_d[:, [d * i + i for i in range(d)]].sum(axis=1))
    f = np.einsum("qgn,qg,q->n", G, r, w)
    K = np.einsum("qgn,qgh,qhm,q->nm", G, Kq, G, w, optimize=True)
    return ForceAndTangent(f, K)


def fom_d_force_tangent(defected_mesh: NominalMesh, u, tangent=True) -> ForceAndTangent:
    """Standard total-Lagrangian force on a node-shifted (defected) mesh."""
    return assemble(defected_mesh, u, None, None, "Exact", tangent)


def linear_stiffness(mesh: NominalMesh, U=None, xi=None, variant="N1"):
    """Tangent stiffness at ``u = 0`` (CSR, free dofs)."""
    return assemble(mesh, np.zeros(mesh.n_free), U, xi, variant).K


def mass_matrix(mesh: NominalMesh, free=True) -> sp.csr_matrix:
    """Consistent mass matrix integrated with the stiffness quadrature.

    Returned on the free dofs, or on all dofs with ``free=False``.
    """
    quad = mesh.quadrature
    rho = mesh.material.density
    Ms = rho * np.einsum("eq,qa,qb->eab", quad.dV, quad.N, quad.N)
    d = mesh.dim
    Me = np.einsum("eab,ij->eaibj", Ms, np.eye(d)).reshape(
        mesh.n_elements, mesh.dofs_per_element, mesh.dofs_per_element
    )
    if free:
        return scatter_matrix(mesh, Me)
    n = mesh.n_dofs
    dofs = mesh.element_dofs
    ne = dofs.shape[1]
    rows = np.repeat(dofs, ne, axis=1).ravel()
    cols = np.tile(dofs, (1, ne)).ravel()
    return sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def rayleigh(M, K0, alpha: float, beta: float):
    """Damping matrix ``alpha M + beta K0``."""
    if beta == 0:
        return alpha * M
    return alpha * M + beta * K0


def rayleigh_from_Q(M, K0, Q1, Q2, f1=None, f2=None):
    """Rayleigh coefficients giving quality factors ``Q1``, ``Q2``.

    Solves ``1 / (2 Q_i) = alpha / (2 w_i) + beta w_i / 2`` for the two
    frequencies ``f1``, ``f2`` in Hz. When omitted they are the two lowest
    eigenfrequencies of ``(K0, M)``.

    Returns
    -------
    (alpha, beta)
    """
    if Q1 <= 0 or Q2 <= 0:
        raise ConfigurationError("quality factors must be positive")
    if f1 is None or f2 is None:
        from .basis import vibration_modes

        _, om = vibration_modes(K0, M, 2)
        f1, f2 = om / (2 * np.pi)
    if f1 <= 0 or f2 <= 0:
        raise ConfigurationError("frequencies must be positive")
    w1, w2 = 2 * np.pi * f1, 2 * np.pi * f2
    A = np.array([[1 / (2 * w1), w1 / 2], [1 / (2 * w2), w2 / 2]])
    if abs(np.linalg.det(A)) < 1e-12 * np.abs(A).max() ** 2:
        raise ConfigurationError("equal frequencies: Rayleigh fit is singular")
    alpha, beta = np.linalg.solve(A, [1 / (2 * Q1), 1 / (2 * Q2)])
    return float(alpha), float(beta)


@dataclass(frozen=True)
class AssembledSystem:
    """Linear matrices of a (possibly defected) model on its free dofs."""

    mesh: NominalMesh
    M: sp.csr_matrix
    K0: sp.csr_matrix
    Cd: sp.csr_matrix
    alpha: float = 0.0
    beta: float = 0.0

    @property
    def free_dofs(self) -> np.ndarray:
        return self.mesh.free_dofs


def build_system(mesh: NominalMesh, alpha=0.0, beta=0.0, U=None, xi=None,
                 variant="N1") -> AssembledSystem:
    M = mass_matrix(mesh)
    K0 = linear_stiffness(mesh, U, xi, variant)
    return AssembledSystem(mesh, M, K0, rayleigh(M, K0, alpha, beta), alpha, beta)
