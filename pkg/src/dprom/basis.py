"""Reduction basis: vibration modes, modal derivatives and defect sensitivities.

All vectors are computed once on the nominal model at ``u = 0``,
``xi = 0``. Derivatives of the tangent stiffness are assembled in closed
form from the same gradient-space blocks used by the full model, and every
sensitivity reuses a single sparse factorization of ``K0``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .defects import DefectBasis
from .exceptions import ConfigurationError, ConvergenceError
from .full_model import assemble_gradient_matrix, linear_stiffness, mass_matrix
from .kinematics import ModelVariant, StrainVariant, h_matrix, l_matrices
from .mesh import NominalMesh

log = logging.getLogger(__name__)

DEDUP_COSINE = 1e-8
_DENSE_LIMIT = 2000


def _fix_signs(Phi: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    idx = np.argmax(np.abs(Phi), axis=0)
    s = np.sign(Phi[idx, np.arange(Phi.shape[1])])
    s[s == 0] = 1.0
    return Phi * s


def vibration_modes(K0, M, n_modes: int):
    """Lowest mass-normalized eigenpairs of ``(K0, M)``.

    Returns
    -------
    Phi : (n, n_modes) array
        ``Phi.T @ M @ Phi = I``; sign fixed so the largest entry is positive.
    omega : (n_modes,) array
        Angular eigenfrequencies in ascending order.
    """
    n = K0.shape[0]
    if not 1 <= n_modes < n:
        raise ConfigurationError(f"cannot compute {n_modes} modes of a {n}-dof model")
    if n <= _DENSE_LIMIT:
        Kd = K0.toarray() if sp.issparse(K0) else np.asarray(K0)
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        Kd = 0.5 * (Kd + Kd.T)
        Md = 0.5 * (Md + Md.T)
        try:
            lam, Phi = sla.eigh(Kd, Md, subset_by_index=[0, n_modes - 1])
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"eigen-solver failed: {exc}") from exc
    else:
        try:
            lam, Phi = spla.eigsh(sp.csc_matrix(K0), k=n_modes, M=sp.csc_matrix(M),
                                  sigma=0.0, which="LM")
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("eigen-solver did not converge") from exc
    order = np.argsort(lam)
    lam, Phi = lam[order], Phi[:, order]
    if np.any(lam <= 0):
        raise ConfigurationError("stiffness is not positive definite (rigid modes?)")
    Phi = Phi / np.sqrt(np.einsum("ij,ij->j", Phi, M @ Phi))
    return _fix_signs(Phi), np.sqrt(lam)


class TangentDerivatives:
    """Closed-form derivatives of the tangent stiffness at ``u = 0, xi = 0``.

    Parameters
    ----------
    mesh : NominalMesh
    defects : DefectBasis, optional
    variant : str or ModelVariant
        Strain variant whose tangent is differentiated.
    """

    def __init__(self, mesh: NominalMesh, defects: Optional[DefectBasis] = None,
                 variant="N1"):
        self.mesh = mesh
        self.defects = defects
        self.strain = ModelVariant.parse(variant).strain
        if self.strain is StrainVariant.EXACT:
            raise ConfigurationError("derivatives are available for N0/N1/N1t only")
        d = mesh.dim
        self._H = h_matrix(d)
        self._L = l_matrices(d)
        self._C = mesh.material.elasticity_matrix(d)
        self._L2 = self._L.L1 if self.strain is StrainVariant.N0 else self._L.L2s

    def _grad(self, v_free):
        v = self.mesh.expand(np.asarray(v_free, dtype=float))
        return np.einsum("eqgn,en->eqg", self.mesh.quadrature.G,
                         v[self.mesh.element_dofs])

    def _defect_grad(self, j):
        if self.defects is None:
            raise ConfigurationError("no defect fields were given")
        ud = self.defects.U[:, j]
        return np.einsum("eqgn,en->eqg", self.mesh.quadrature.G,
                         ud[self.mesh.element_dofs])

    def _sym(self, X, Y):
        """``X^T C Y + Y^T C X`` stacked over quadrature points."""
        XtCY = np.einsum("...rc,rs,...sk->...ck", X, self._C, Y, optimize=True)
        return XtCY + np.swapaxes(XtCY, -1, -2)

    def _stress_term(self, sigma):
        return np.einsum("...r,rck->...ck", sigma, self._L.L1)

    def dK_deta(self, phi):
        """``dKt/d eta_j`` for the displacement direction ``phi = Phi_j``."""
        th = self._grad(phi)
        A1 = np.einsum("rck,...k->...rc", self._L.L1, th)
        H = np.broadcast_to(self._H, A1.shape)
        sig = np.einsum("rs,sc,...c->...r", self._C, self._H, th)
        return assemble_gradient_matrix(self.mesh, self._sym(H, A1) + self._stress_term(sig))

    def dK_dxi(self, j):
        """``dKt/d xi_j``."""
        A2 = np.einsum("rck,...k->...rc", self._L2, self._defect_grad(j))
        H = np.broadcast_to(self._H, A2.shape)
        return assemble_gradient_matrix(self.mesh, self._sym(H, A2))

    def d2K_deta_dxi(self, phi, k):
        """``d2Kt/(d eta_j d xi_k)`` for ``phi = Phi_j``."""
        th = self._grad(phi)
        psi = self._defect_grad(k)
        A1 = np.einsum("rck,...k->...rc", self._L.L1, th)
        A2 = np.einsum("rck,...k->...rc", self._L2, psi)
        Kq = self._sym(A2, A1)
        sig = np.einsum("rs,...sc,...c->...r", self._C, A2, th)
        Kq += self._stress_term(sig)
        if self.strain is StrainVariant.N1:
            L3p = np.einsum("rcab,...b->...rca", self._L.L3s, psi)
            A3A1 = np.einsum("...rca,...a->...rc", L3p, th)
            H = np.broadcast_to(self._H, A3A1.shape)
            Kq += 2.0 * self._sym(H, A3A1)
            sigH = np.einsum("rs,sc,...c->...r", self._C, self._H, th)
            Kq += 2.0 * np.einsum("...r,...rck->...ck", sigH, L3p)
        return assemble_gradient_matrix(self.mesh, Kq)

    def d2K_dxi2(self, j, k):
        """``d2Kt/(d xi_j d xi_k)``."""
        A2j = np.einsum("rck,...k->...rc", self._L2, self._defect_grad(j))
        A2k = np.einsum("rck,...k->...rc", self._L2, self._defect_grad(k))
        return assemble_gradient_matrix(self.mesh, self._sym(A2j, A2k))


class SensitivityContext:
    """Shared data for modal derivatives and defect sensitivities.

    Holds the vibration modes, one sparse LU factorization of ``K0`` and the
    tangent-derivative evaluator. First-order vectors are memoized so the
    second-order formulas reuse them.
    """

    def __init__(self, mesh: NominalMesh, defects: Optional[DefectBasis] = None,
                 n_modes: int = 5, variant="N1", K0=None, M=None):
        self.mesh = mesh
        self.defects = defects
        self.K0 = linear_stiffness(mesh) if K0 is None else K0
        self.M = mass_matrix(mesh) if M is None else M
        self.Phi, self.omega = vibration_modes(self.K0, self.M, n_modes)
        self.deriv = TangentDerivatives(mesh, defects, variant)
        try:
            self._lu = spla.splu(sp.csc_matrix(self.K0))
        except RuntimeError as exc:
            raise ConfigurationError(f"K0 is singular: {exc}") from exc
        self._cache: dict = {}

    @property
    def n_modes(self) -> int:
        return self.Phi.shape[1]

    @property
    def m_d(self) -> int:
        return 0 if self.defects is None else self.defects.m_d

    def solve(self, rhs):
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def dK_deta(self, j):
        return self._memo(("dKeta", j), lambda: self.deriv.dK_deta(self.Phi[:, j]))

    def dK_dxi(self, j):
        return self._memo(("dKxi", j), lambda: self.deriv.dK_dxi(j))


def modal_derivative(ctx: SensitivityContext, i: int, j: int) -> np.ndarray:
    """Static modal derivative ``theta_ij = -K0^-1 dKt/d eta_j Phi_i``."""
    return ctx._memo(("MD", i, j),
                     lambda: -ctx.solve(ctx.dK_deta(j) @ ctx.Phi[:, i]))


def defect_sensitivity(ctx: SensitivityContext, i: int, j: int) -> np.ndarray:
    """Defect sensitivity ``Xi_ij = -K0^-1 dKt/d xi_j Phi_i``."""
    return ctx._memo(("DS", i, j),
                     lambda: -ctx.solve(ctx.dK_dxi(j) @ ctx.Phi[:, i]))


def mds_and_ds2(ctx: SensitivityContext, i: int, j: int, k: int):
    """Modal-derivative sensitivity and second defect sensitivity.

    Returns ``(theta_ij_k, Xi_i_jk)`` with::

        theta_ij,k = -K0^-1 (dK/dxi_k theta_ij + d2K/deta_j dxi_k Phi_i
                             + dK/deta_j Xi_i,k)
        Xi_i,jk    = -K0^-1 (dK/dxi_k Xi_i,j + d2K/dxi_j dxi_k Phi_i
                             + dK/dxi_j Xi_i,k)
    """
    Phi_i = ctx.Phi[:, i]
    th_ij = modal_derivative(ctx, i, j)
    xi_ik = defect_sensitivity(ctx, i, k)
    mds = -ctx.solve(
        ctx.dK_dxi(k) @ th_ij
        + ctx.deriv.d2K_deta_dxi(ctx.Phi[:, j], k) @ Phi_i
        + ctx.dK_deta(j) @ xi_ik
    )
    ds2 = None
    if j < ctx.m_d:
        xi_ij = defect_sensitivity(ctx, i, j)
        ds2 = -ctx.solve(
            ctx.dK_dxi(k) @ xi_ij
            + ctx.deriv.d2K_dxi2(j, k) @ Phi_i
            + ctx.dK_dxi(j) @ xi_ik
        )
    return mds, ds2


def second_defect_sensitivity(ctx: SensitivityContext, i: int, j: int, k: int):
    """``Xi_i,jk`` alone (defect indices ``j``, ``k``)."""
    Phi_i = ctx.Phi[:, i]
    return -ctx.solve(
        ctx.dK_dxi(k) @ defect_sensitivity(ctx, i, j)
        + ctx.deriv.d2K_dxi2(j, k) @ Phi_i
        + ctx.dK_dxi(j) @ defect_sensitivity(ctx, i, k)
    )


def mds_vector(ctx: SensitivityContext, i: int, j: int, k: int):
    """``theta_ij,k`` alone (mode indices ``i``, ``j``, defect index ``k``)."""
    Phi_i = ctx.Phi[:, i]
    return -ctx.solve(
        ctx.dK_dxi(k) @ modal_derivative(ctx, i, j)
        + ctx.deriv.d2K_deta_dxi(ctx.Phi[:, j], k) @ Phi_i
        + ctx.dK_deta(j) @ defect_sensitivity(ctx, i, k)
    )


@dataclass
class ReductionBasis:
    """Reduction basis ``V`` on the free dofs with per-column provenance.

    Attributes
    ----------
    V : (n_free, m) array
        Columns with unit Euclidean norm.
    labels : list of str
        ``"VM 1"``, ``"MD 1,2"``, ``"DS 1,1"``, ``"MDS 12,1"``, ``"DS2 1,11"``
        (1-based indices).
    norms : (m,) array
        Euclidean norm of each column before normalization.
    dropped : list of str
        Labels removed as near duplicates.
    omega : array
        Eigenfrequencies of the vibration modes used (rad/s).
    """

    V: np.ndarray
    labels: list
    norms: np.ndarray
    dropped: list = field(default_factory=list)
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def m(self) -> int:
        return self.V.shape[1]

    def export(self, path) -> None:
        """Write a CSV with one labelled column per basis vector."""
        header = ",".join(lab.replace(",", ";") for lab in self.labels)
        np.savetxt(path, self.V, delimiter=",", header=header, comments="")


def assemble_basis(columns, labels, threshold: float = DEDUP_COSINE,
                   omega=None) -> ReductionBasis:
    """Normalize columns and drop those nearly inside the span of earlier ones.

    A column is dropped when the cosine of its angle with the span of the
    kept columns exceeds ``1 - threshold`` (for two columns, their cosine);
    a warning names every dropped column.
    """
    cols = [np.asarray(c, dtype=float) for c in columns]
    if not cols:
        raise ConfigurationError("empty reduction basis")
    if len(labels) != len(cols):
        raise ConfigurationError("one label per column is required")
    sin_min = np.sqrt(1.0 - (1.0 - threshold) ** 2)
    kept, kept_labels, norms, dropped = [], [], [], []
    Q = np.zeros((cols[0].size, 0))
    for c, lab in zip(cols, labels):
        nrm = np.linalg.norm(c)
        if nrm == 0 or not np.isfinite(nrm):
            dropped.append(lab)
            continue
        v = c / nrm
        # two passes of Gram-Schmidt for a reliable residual
        r = v - Q @ (Q.T @ v)
        r = r - Q @ (Q.T @ r)
        res = np.linalg.norm(r)
        if res < sin_min:
            dropped.append(lab)
            continue
        Q = np.column_stack([Q, r / res])
        kept.append(v)
        kept_labels.append(lab)
        norms.append(nrm)
    if dropped:
        msg = f"dropped {len(dropped)} near-duplicate basis column(s): {', '.join(dropped)}"
        log.warning(msg)
        warnings.warn(msg, UserWarning, stacklevel=2)
    if not kept:
        raise ConfigurationError("empty reduction basis")
    return ReductionBasis(np.column_stack(kept), kept_labels, np.array(norms), dropped,
                          np.zeros(0) if omega is None else np.asarray(omega))


def md_pairs(n_vm: int):
    """Index pairs ``(i, j)``, ``i <= j``, of the static modal derivatives."""
    return [(i, j) for i in range(n_vm) for j in range(i, n_vm)]


def build_reduction_basis(mesh: NominalMesh, defects: Optional[DefectBasis] = None,
                          n_vm: int = 5, modal_derivatives: bool = True,
                          defect_sensitivities: bool = True, mds: bool = False,
                          ds2: bool = False, variant="N1", ctx=None) -> ReductionBasis:
    """Basis ``[VMs | MDs | DSs | MDSs | DS2s]`` of the nominal model.

    MDs cover the upper triangle ``i <= j`` of the first ``n_vm`` modes; DSs
    pair every mode with every defect. Second-order vectors are off by
    default.
    """
    if ctx is None:
        ctx = SensitivityContext(mesh, defects if defect_sensitivities or mds or ds2
                                 else None, n_vm, variant)
    cols, labels = [], []
    for i in range(n_vm):
        cols.append(ctx.Phi[:, i])
        labels.append(f"VM {i + 1}")
    if modal_derivatives:
        for i, j in md_pairs(n_vm):
            cols.append(modal_derivative(ctx, i, j))
            labels.append(f"MD {i + 1},{j + 1}")
    m_d = 0 if defects is None else defects.m_d
    if defect_sensitivities and m_d:
        for k in range(m_d):
            for i in range(n_vm):
                cols.append(defect_sensitivity(ctx, i, k))
                labels.append(f"DS {i + 1},{k + 1}")
    if mds and m_d:
        for i in range(n_vm):
            for j in range(n_vm):
                for k in range(m_d):
                    cols.append(mds_vector(ctx, i, j, k))
                    labels.append(f"MDS {i + 1}{j + 1},{k + 1}")
    if ds2 and m_d:
        for i in range(n_vm):
            for j in range(m_d):
                for k in range(j, m_d):
                    cols.append(second_defect_sensitivity(ctx, i, j, k))
                    labels.append(f"DS2 {i + 1},{j + 1}{k + 1}")
    return assemble_basis(cols, labels, omega=ctx.omega)
