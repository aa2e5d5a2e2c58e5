"""Second-order systems consumed by the solvers.

Every model exposes ``M``, ``C``, ``n`` and ``internal(q, tangent)``
returning the internal force and (optionally) its tangent. Reduced models
add batched evaluation used by harmonic balance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .basis import build_reduction_basis, vibration_modes
from .defects import DefectBasis
from .exceptions import ConfigurationError
from .full_model import assemble, linear_stiffness, mass_matrix, rayleigh
from .kinematics import ModelVariant
from .mesh import NominalMesh, apply_defect_to_nodes
from .tensors import (DpROMTensors, ParametricTensors, assemble_dprom,
                      evaluate_parametric, reduced_mass_damping)


@dataclass(frozen=True)
class Probe:
    """Named displacement component at a mesh node."""

    name: str
    node: int
    component: int

    def free_row(self, mesh: NominalMesh) -> int:
        return mesh.free_index(mesh.dof(self.node, self.component))


def probe_at(mesh: NominalMesh, name: str, point, component: int) -> Probe:
    """Probe at the node nearest to ``point``."""
    if not 0 <= component < mesh.dim:
        raise ConfigurationError(f"component {component} out of range")
    return Probe(name, int(mesh.nearest_node(point)), int(component))


def _solve(K, r):
    if sp.issparse(K):
        from scipy.sparse.linalg import spsolve

        return spsolve(sp.csc_matrix(K), r)
    return sla.solve(K, r, check_finite=False)


class ReducedModel:
    """Polynomial reduced model ``M q'' + C q' + f(q) = F``.

    Parameters
    ----------
    M, C : (m, m) arrays
    tensors : ParametricTensors
        Evaluated ``Q2, Q3, Q4`` at the realization of interest.
    probe_matrix : (k, m) array, optional
        Rows mapping reduced coordinates to physical probe displacements.
    probe_names : sequence of str, optional
    V : (n_free, m) array, optional
        Basis used to reduce external forces given on the free dofs.
    name : str
    """

    def __init__(self, M, C, tensors: ParametricTensors, probe_matrix=None,
                 probe_names: Sequence[str] = (), V=None, name: str = "rom"):
        self.M = np.asarray(M, dtype=float)
        self.C = np.zeros_like(self.M) if C is None else np.asarray(C, dtype=float)
        self.tensors = tensors
        m = self.M.shape[0]
        if self.M.shape != (m, m) or self.C.shape != (m, m) or tensors.m != m:
            raise ConfigurationError("inconsistent reduced model sizes")
        self.probe_matrix = (np.zeros((0, m)) if probe_matrix is None
                             else np.atleast_2d(np.asarray(probe_matrix, dtype=float)))
        self.probe_names = tuple(probe_names) or tuple(
            f"p{i}" for i in range(self.probe_matrix.shape[0]))
        self.V = V
        self.name = name

    @classmethod
    def polynomial(cls, M, K2, K3=None, K4=None, C=None, **kwargs) -> "ReducedModel":
        """Model from explicit tensors (useful for oscillator surrogates)."""
        K2 = np.atleast_2d(np.asarray(K2, dtype=float))
        m = K2.shape[0]
        Q3 = np.zeros((m,) * 3) if K3 is None else np.asarray(K3, dtype=float).reshape((m,) * 3)
        Q4 = np.zeros((m,) * 4) if K4 is None else np.asarray(K4, dtype=float).reshape((m,) * 4)
        P = ParametricTensors(np.zeros(0), K2, Q3, Q4, Q3 + Q3.transpose(0, 2, 1),
                              Q4 + Q4.transpose(0, 2, 1, 3) + Q4.transpose(0, 3, 1, 2))
        return cls(np.atleast_2d(M), None if C is None else np.atleast_2d(C), P, **kwargs)

    @classmethod
    def from_tensors(cls, T: DpROMTensors, xi, alpha=0.0, beta=0.0,
                     mesh: Optional[NominalMesh] = None, U: Optional[DefectBasis] = None,
                     probes: Sequence[Probe] = (), name: Optional[str] = None
                     ) -> "ReducedModel":
        """Model of a DpROM realization.

        For ``-v`` variants the mass is integrated over the defected mesh
        when ``mesh`` and ``U`` are given.
        """
        P = evaluate_parametric(T, xi)
        if T.variant.volume_correction and mesh is not None and U is not None:
            M_r, C_r = reduced_mass_damping(mesh, T.V, alpha, beta, True, U, P.xi, T.K0_r)
        else:
            M_r, C_r = T.M_r, T.rayleigh(alpha, beta)
        rows = None
        if probes:
            if mesh is None:
                raise ConfigurationError("probes need the mesh")
            rows = T.V[[p.free_row(mesh) for p in probes]]
        return cls(M_r, C_r, P, rows, [p.name for p in probes], T.V,
                   name or f"DpROM-{T.variant.name}")

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def K0(self) -> np.ndarray:
        return self.tensors.Q2

    def internal(self, q, tangent=True):
        f = self.tensors.force(q)
        return (f, self.tensors.tangent(q)) if tangent else (f, None)

    def force_batch(self, Q):
        return self.tensors.force(Q)

    def tangent_batch(self, Q):
        return self.tensors.tangent(Q)

    def reduce(self, F_free):
        """Project a force on the free dofs onto the basis."""
        if self.V is None:
            raise ConfigurationError("model has no basis to project forces")
        return self.V.T @ np.asarray(F_free, dtype=float)

    def probes(self, q):
        return np.asarray(q) @ self.probe_matrix.T

    def eigenfrequencies(self, n: Optional[int] = None):
        """Undamped angular eigenfrequencies of the linearized model."""
        lam = sla.eigh(0.5 * (self.K0 + self.K0.T), self.M, eigvals_only=True)
        om = np.sqrt(np.clip(lam, 0, None))
        return om if n is None else om[:n]

    def modes(self):
        lam, Phi = sla.eigh(0.5 * (self.K0 + self.K0.T), self.M)
        return np.sqrt(np.clip(lam, 0, None)), Phi


class FullModel:
    """Full-order model on the free dofs of a mesh.

    With ``variant="Exact"`` and no defect this is the plain Green-Lagrange
    model of ``mesh``; FOM-d is obtained by passing the defected mesh.
    """

    def __init__(self, mesh: NominalMesh, U=None, xi=None, variant="Exact",
                 alpha=0.0, beta=0.0, probes: Sequence[Probe] = (), name="FOM"):
        self.mesh = mesh
        self.U = U
        self.xi = xi
        self.variant = ModelVariant.parse(variant)
        self.M = mass_matrix(mesh)
        self._K0 = None
        self.C = rayleigh(self.M, self.K0, alpha, beta) if beta else alpha * self.M
        rows = [p.free_row(mesh) for p in probes]
        self.probe_matrix = sp.csr_matrix(
            (np.ones(len(rows)), (np.arange(len(rows)), rows)),
            shape=(len(rows), mesh.n_free))
        self.probe_names = tuple(p.name for p in probes)
        self.name = name

    @property
    def n(self) -> int:
        return self.mesh.n_free

    @property
    def K0(self):
        if self._K0 is None:
            self._K0 = linear_stiffness(self.mesh, self.U, self.xi, self.variant)
        return self._K0

    def internal(self, q, tangent=True):
        out = assemble(self.mesh, q, self.U, self.xi, self.variant, tangent)
        return out.f, out.K

    def probes(self, q):
        return np.asarray(q) @ self.probe_matrix.T.toarray()

    def eigenfrequencies(self, n: int = 5):
        return vibration_modes(self.K0, self.M, n)[1]


def fom_d(mesh: NominalMesh, U, xi, **kwargs) -> FullModel:
    """Full model on the node-shifted (defected) geometry."""
    defected = apply_defect_to_nodes(mesh, U, xi)
    kwargs.setdefault("name", "FOM-d")
    return FullModel(defected, variant="Exact", **kwargs)


@dataclass
class RomD:
    """Non-parametric reduced model rebuilt for one defect realization."""

    model: ReducedModel
    tensors: DpROMTensors
    mesh: NominalMesh
    timings: dict = field(default_factory=dict)


def build_rom_d(mesh: NominalMesh, U, xi, n_vm: int = 5, modal_derivatives=True,
                alpha=0.0, beta=0.0, probes: Sequence[Probe] = ()) -> RomD:
    """ROM-d: VMs and MDs of the defected mesh, tensors with no defect.

    Probes are given on the nominal mesh; node numbering is shared.
    """
    import time

    t0 = time.perf_counter()
    defected = mesh if U is None else apply_defect_to_nodes(mesh, U, xi)
    basis = build_reduction_basis(defected, None, n_vm, modal_derivatives,
                                  defect_sensitivities=False)
    t1 = time.perf_counter()
    T = assemble_dprom(defected, basis, None, "N1")
    t2 = time.perf_counter()
    model = ReducedModel.from_tensors(T, np.zeros(0), alpha, beta, defected, None,
                                      probes, name="ROM-d")
    return RomD(model, T, defected, {"basis": t1 - t0, "tensors": t2 - t1})


def reduced_load(model, mesh: NominalMesh, node: int, component: int, value: float):
    """Point load on a free dof, reduced for reduced models."""
    F = np.zeros(mesh.n_free)
    F[mesh.free_index(mesh.dof(node, component))] = value
    return model.reduce(F) if isinstance(model, ReducedModel) else F
