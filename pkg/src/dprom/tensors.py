"""Reduced stiffness tensors with polynomial dependence on defect amplitudes.

With ``u = V eta`` and ``u_d = U xi`` the internal force of the N0/N1/N1t
strain variants is an exact polynomial in ``(eta, xi)``::

    f_r = Q2(xi) eta + Q3(xi) : (eta eta) + Q4(xi) ... (eta eta eta)
    Q2(xi) = Q2n + Q3d . xi + Q4dd : (xi xi)
    Q3(xi) = Q3n + Q4d . xi + Q5dd : (xi xi)
    Q4(xi) = Q4n + Q5d . xi + Q6dd : (xi xi)

The nine tensors are integrated once over the nominal mesh. Indices of
size ``m`` (reduced coordinates) come first, defect indices last.

Per Gauss point the building blocks are, with ``Gam = G V_e`` and
``Ups = G U_e``::

    HG[r, I]          = H[r, c] Gam[c, I]
    X1[r, I, K]       = Gam[c, I] L1[r, c, a] Gam[a, K]
    X2[r, I, L]       = Gam[c, I] L2[r, c, a] Ups[a, L]
    X3[r, I, K, L]    = Gam[c, I] L3[r, c, a, b] Gam[a, K] Ups[b, L]

so that ``B Gam = HG + X1 eta + X2 xi + 2 X3 eta xi`` and
``E = (HG + X1 eta / 2 + X2 xi + X3 eta xi) eta``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .defects import DefectBasis
from .exceptions import ConfigurationError
from .kinematics import ModelVariant, StrainVariant, h_matrix, l_matrices
from .mesh import NominalMesh, apply_defect_to_nodes

TENSOR_NAMES = ("Q2n", "Q3d", "Q4dd", "Q3n", "Q4d", "Q5dd", "Q4n", "Q5d", "Q6dd")
SNAPSHOT_VERSION = 1

# number of reduced (eta) and defect (xi) indices after the leading one
_ORDERS = {
    "Q2n": (1, 0), "Q3d": (1, 1), "Q4dd": (1, 2),
    "Q3n": (2, 0), "Q4d": (2, 1), "Q5dd": (2, 2),
    "Q4n": (3, 0), "Q5d": (3, 1), "Q6dd": (3, 2),
}


def _pair(A, CB, w):
    """Weighted contraction over Gauss points and strain rows."""
    Aw = A * w.reshape((-1,) + (1,) * (A.ndim - 1))
    return np.tensordot(Aw, CB, axes=([0, 1], [0, 1]))


def _blocks(Gam, Ups, strain: StrainVariant, dim: int):
    """Gauss-point building blocks for flattened points ``(P, g, .)``."""
    H = h_matrix(dim)
    L = l_matrices(dim)
    HG = np.einsum("rc,pcI->prI", H, Gam)
    X1 = np.einsum("pcI,prcK->prIK", Gam, np.einsum("rca,paK->prcK", L.L1, Gam))
    X2 = X3 = None
    if Ups is not None and Ups.shape[-1] > 0:
        L2 = L.L1 if strain is StrainVariant.N0 else L.L2s
        X2 = np.einsum("pcI,prcL->prIL", Gam, np.einsum("rca,paL->prcL", L2, Ups))
        if strain is StrainVariant.N1:
            L3U = np.einsum("rcab,pbL->prcaL", L.L3s, Ups)
            L3UG = np.einsum("prcaL,paK->prcKL", L3U, Gam)
            X3 = np.einsum("pcI,prcKL->prIKL", Gam, L3UG)
    return HG, X1, X2, X3


def _tensor_set(HG, X1, X2, X3, C, w, m_d):
    """The nine tensors for one set of Gauss weights (unprojected indices)."""
    def cmul(X):
        return np.einsum("rs,ps...->pr...", C, X)

    n = HG.shape[-1]
    CHG, CX1 = cmul(HG), cmul(X1)
    Q = {
        "Q2n": _pair(HG, CHG, w),
        "Q3n": 0.5 * _pair(HG, CX1, w) + _pair(X1, CHG, w).transpose(0, 2, 1),
        "Q4n": 0.5 * _pair(X1, CX1, w).transpose(0, 2, 1, 3),
    }
    if X2 is None:
        for name in ("Q3d", "Q4dd", "Q4d", "Q5dd", "Q5d", "Q6dd"):
            k, l = _ORDERS[name]
            Q[name] = np.zeros((n,) * (k + 1) + (m_d,) * l)
        return Q
    CX2 = cmul(X2)
    Q["Q3d"] = _pair(HG, CX2, w) + _pair(X2, CHG, w).transpose(0, 2, 1)
    Q["Q4dd"] = _pair(X2, CX2, w).transpose(0, 2, 1, 3)
    Q["Q4d"] = (0.5 * _pair(X2, CX1, w).transpose(0, 2, 3, 1)
                + _pair(X1, CX2, w).transpose(0, 2, 1, 3))
    if X3 is None:
        Q["Q5dd"] = np.zeros((n,) * 3 + (m_d,) * 2)
        Q["Q5d"] = np.zeros((n,) * 4 + (m_d,))
        Q["Q6dd"] = np.zeros((n,) * 4 + (m_d,) * 2)
        return Q
    CX3 = cmul(X3)
    Q["Q4d"] += (2.0 * _pair(X3, CHG, w).transpose(0, 3, 1, 2)
                 + _pair(HG, CX3, w))
    Q["Q5dd"] = (2.0 * _pair(X3, CX2, w).transpose(0, 3, 1, 2, 4)
                 + _pair(X2, CX3, w).transpose(0, 2, 3, 1, 4))
    Q["Q5d"] = (_pair(X1, CX3, w).transpose(0, 2, 1, 3, 4)
                + _pair(X3, CX1, w).transpose(0, 3, 1, 4, 2))
    Q["Q6dd"] = 2.0 * _pair(X3, CX3, w).transpose(0, 3, 1, 4, 2, 5)
    return Q


def _weights(dV, divs, skip):
    """Gauss weights for the main tensors and each volume companion."""
    ws = [dV]
    for i, div in enumerate(divs):
        ws.append(None if skip[i] else dV * div)
    return ws


def element_reduced_tensors(mesh: NominalMesh, elem: int, V_e, U_e=None,
                            variant="N1", div=None):
    """Nine reduced tensors of a single element.

    Parameters
    ----------
    V_e : (n_e, m) array
        Element rows of the reduction basis.
    U_e : (n_e, m_d) array, optional
        Element rows of the defect basis.
    div : (m_d, nq) array, optional
        Defect divergences at the element's Gauss points; when given the
        volume companions are returned as a second dict with leading
        defect axis.
    """
    strain = ModelVariant.parse(variant).strain
    if strain is StrainVariant.EXACT:
        raise ConfigurationError("the exact strain has no tensor representation")
    quad = mesh.quadrature
    G = quad.G[elem]
    V_e = np.asarray(V_e, dtype=float)
    Gam = G @ V_e
    Ups = None if U_e is None else G @ np.asarray(U_e, dtype=float).reshape(len(V_e), -1)
    m_d = 0 if Ups is None else Ups.shape[-1]
    C = mesh.material.elasticity_matrix(mesh.dim)
    blocks = _blocks(Gam, Ups, strain, mesh.dim)
    Q = _tensor_set(*blocks, C, quad.dV[elem], m_d)
    if div is None:
        return Q
    comp = [_tensor_set(*blocks, C, quad.dV[elem] * d, m_d) for d in np.atleast_2d(div)]
    return Q, {k: np.stack([c[k] for c in comp]) for k in TENSOR_NAMES}


@dataclass
class DpROMTensors:
    """Reduced tensors of one model variant plus reduced linear matrices.

    Attributes
    ----------
    variant : ModelVariant
    Q : dict
        The nine tensors keyed by name.
    Qv : dict or None
        Volume-correction companions, each with a leading defect axis.
    M_r, K0_r : (m, m) arrays
        Reduced nominal mass and linear stiffness.
    V : (n_free, m) array
    labels : list of str
        Provenance of the basis columns.
    defect_names : tuple of str
    mesh_hash : str
    skipped : tuple of bool
        Defects whose volume companions were skipped as isochoric.
    """

    variant: ModelVariant
    Q: dict
    Qv: Optional[dict]
    M_r: np.ndarray
    K0_r: np.ndarray
    V: np.ndarray
    labels: list = field(default_factory=list)
    defect_names: tuple = ()
    mesh_hash: str = ""
    skipped: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return self.Q["Q2n"].shape[0]

    @property
    def m_d(self) -> int:
        return self.Q["Q3d"].shape[-1]

    def invalidate(self):
        self._cache.clear()

    def rayleigh(self, alpha, beta, M_r=None):
        """Reduced Rayleigh damping ``alpha M_r + beta K0_r``."""
        M_r = self.M_r if M_r is None else M_r
        return alpha * M_r + beta * self.K0_r


def _reduce_then_integrate(mesh, Vfull, Ufull, divs, strain, skip, chunk):
    quad = mesh.quadrature
    C = mesh.material.elasticity_matrix(mesh.dim)
    m_d = 0 if Ufull is None else Ufull.shape[1]
    total = None
    totals_v = None
    E = mesh.n_elements
    for start in range(0, E, chunk):
        sl = slice(start, min(E, start + chunk))
        dofs = mesh.element_dofs[sl]
        G = quad.G[sl]
        Gam = np.einsum("eqgn,enm->eqgm", G, Vfull[dofs]).reshape(-1, G.shape[2], Vfull.shape[1])
        Ups = None
        if Ufull is not None:
            Ups = np.einsum("eqgn,enm->eqgm", G, Ufull[dofs]).reshape(-1, G.shape[2], m_d)
        blocks = _blocks(Gam, Ups, strain, mesh.dim)
        dV = quad.dV[sl].ravel()
        Q = _tensor_set(*blocks, C, dV, m_d)
        total = Q if total is None else {k: total[k] + Q[k] for k in TENSOR_NAMES}
        if divs is not None:
            parts = []
            for i in range(m_d):
                if skip[i]:
                    parts.append(None)
                else:
                    parts.append(_tensor_set(*blocks, C, dV * divs[i][sl].ravel(), m_d))
            if totals_v is None:
                totals_v = parts
            else:
                totals_v = [None if a is None else {k: a[k] + b[k] for k in TENSOR_NAMES}
                            for a, b in zip(totals_v, parts)]
    return total, totals_v


def _project(T, V_e, n_eta):
    """Contract the first ``n_eta + 1`` axes of ``T`` with ``V_e``."""
    out = T
    for ax in range(n_eta + 1):
        out = np.moveaxis(np.tensordot(out, V_e, axes=([ax], [0])), -1, ax)
    return out


def _integrate_then_project(mesh, Vfull, Ufull, divs, strain, skip):
    quad = mesh.quadrature
    C = mesh.material.elasticity_matrix(mesh.dim)
    m_d = 0 if Ufull is None else Ufull.shape[1]
    m = Vfull.shape[1]
    total = {k: np.zeros((m,) * (_ORDERS[k][0] + 1) + (m_d,) * _ORDERS[k][1])
             for k in TENSOR_NAMES}
    totals_v = None
    if divs is not None:
        totals_v = [None if skip[i] else {k: np.zeros_like(v) for k, v in total.items()}
                    for i in range(m_d)]
    for e in range(mesh.n_elements):
        dofs = mesh.element_dofs[e]
        G = quad.G[e]
        V_e = Vfull[dofs]
        Ups = None if Ufull is None else G @ Ufull[dofs]
        blocks = _blocks(G, Ups, strain, mesh.dim)
        weights = [quad.dV[e]]
        if divs is not None:
            weights += [None if skip[i] else quad.dV[e] * divs[i][e] for i in range(m_d)]
        for slot, w in enumerate(weights):
            if w is None:
                continue
            Qe = _tensor_set(*blocks, C, w, m_d)
            target = total if slot == 0 else totals_v[slot - 1]
            for k in TENSOR_NAMES:
                target[k] += _project(Qe[k], V_e, _ORDERS[k][0])
    return total, totals_v


def assemble_dprom(mesh: NominalMesh, V, U: Optional[DefectBasis] = None,
                   variant="N1", volume_correction: Optional[bool] = None,
                   path: str = "auto", skip_isochoric: bool = True,
                   labels=None, chunk_elements: int = 64) -> DpROMTensors:
    """Integrate the reduced tensors over the nominal mesh.

    Parameters
    ----------
    V : (n_free, m) array or ReductionBasis
    U : DefectBasis, optional
        ``None`` gives a non-parametric model (only Q2n, Q3n, Q4n non-zero).
    variant : str or ModelVariant
        N0, N1 or N1t; a ``-v`` suffix enables the volume companions.
    volume_correction : bool, optional
        Overrides the ``-v`` suffix when given.
    path : {"auto", "reduced", "element"}
        ``"reduced"`` projects gradients first and integrates reduced
        blocks; ``"element"`` integrates element tensors and projects them.
        ``"auto"`` picks ``"reduced"`` when ``m`` does not exceed the
        element dof count.
    skip_isochoric : bool
        Skip companions of defects flagged isochoric (they vanish).
    """
    variant = ModelVariant.parse(variant)
    if volume_correction is not None:
        variant = ModelVariant(variant.strain, bool(volume_correction))
    if variant.strain is StrainVariant.EXACT:
        raise ConfigurationError("the exact strain has no tensor representation")
    labels = list(getattr(V, "labels", labels or []))
    Vmat = np.asarray(getattr(V, "V", V), dtype=float)
    if Vmat.ndim != 2 or Vmat.shape[0] != mesh.n_free:
        raise ConfigurationError("V must have one row per free dof")
    m = Vmat.shape[1]
    Vfull = mesh.expand(Vmat)
    Ufull = None
    divs = None
    skip = ()
    names = ()
    if U is not None:
        if U.n_dofs != mesh.n_dofs:
            raise ConfigurationError("defect basis does not match the mesh")
        Ufull = U.U
        names = U.names
        skip = tuple(bool(skip_isochoric and iso) for iso in U.isochoric)
        if variant.volume_correction:
            divs = U.divergence_at_qps(mesh)
    elif variant.volume_correction:
        raise ConfigurationError("volume correction needs defect fields")
    if path == "auto":
        path = "reduced" if m <= mesh.dofs_per_element else "element"
    if path == "reduced":
        Q, Qv_list = _reduce_then_integrate(mesh, Vfull, Ufull, divs, variant.strain,
                                            skip, max(1, int(chunk_elements)))
    elif path == "element":
        Q, Qv_list = _integrate_then_project(mesh, Vfull, Ufull, divs, variant.strain, skip)
    else:
        raise ConfigurationError(f"unknown integration path {path!r}")
    Qv = None
    if Qv_list is not None:
        Qv = {}
        for k in TENSOR_NAMES:
            Qv[k] = np.stack([np.zeros_like(Q[k]) if part is None else part[k]
                              for part in Qv_list])
    from .full_model import linear_stiffness, mass_matrix

    M_r = Vmat.T @ (mass_matrix(mesh) @ Vmat)
    K0_r = Vmat.T @ (linear_stiffness(mesh) @ Vmat)
    return DpROMTensors(variant, Q, Qv, M_r, K0_r, Vmat, labels, names,
                        mesh.fingerprint, skip)


# --------------------------------------------------------------------------
# parametric evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricTensors:
    """Tensors ``Q2, Q3, Q4`` at fixed defect amplitudes.

    ``Q3t`` and ``Q4t`` are the index sums needed by the tangent:
    ``Qt = Q2 + Q3t . eta + Q4t : (eta eta)``.
    """

    xi: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    Q4: np.ndarray
    Q3t: np.ndarray
    Q4t: np.ndarray

    @property
    def m(self) -> int:
        return self.Q2.shape[0]

    def force(self, eta):
        """``f_r`` for one ``eta`` (m,) or a stack (N, m)."""
        eta = np.asarray(eta, dtype=float)
        f = eta @ self.Q2.T
        f += np.einsum("ijk,...j,...k->...i", self.Q3, eta, eta, optimize=True)
        f += np.einsum("ijkl,...j,...k,...l->...i", self.Q4, eta, eta, eta,
                       optimize=True)
        return f

    def tangent(self, eta):
        """``Qt`` for one ``eta`` (m,) or a stack (N, m, m)."""
        eta = np.asarray(eta, dtype=float)
        K = np.broadcast_to(self.Q2, eta.shape[:-1] + self.Q2.shape).copy()
        K += np.einsum("ijk,...k->...ij", self.Q3t, eta)
        K += np.einsum("ijkl,...k,...l->...ij", self.Q4t, eta, eta, optimize=True)
        return K


def _poly(T0, T1, T2, xi):
    out = T0.copy()
    if xi.size:
        out += np.tensordot(T1, xi, axes=([-1], [0]))
        out += np.tensordot(np.tensordot(T2, xi, axes=([-1], [0])), xi, axes=([-1], [0]))
    return out


def _evaluate_set(Q, xi):
    return (_poly(Q["Q2n"], Q["Q3d"], Q["Q4dd"], xi),
            _poly(Q["Q3n"], Q["Q4d"], Q["Q5dd"], xi),
            _poly(Q["Q4n"], Q["Q5d"], Q["Q6dd"], xi))


def evaluate_parametric(T: DpROMTensors, xi) -> ParametricTensors:
    """Evaluate ``Q2(xi), Q3(xi), Q4(xi)``; results are cached per ``xi``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float)).reshape(-1)
    if T.m_d == 0 and xi.size == 1 and xi[0] == 0:
        xi = np.zeros(0)
    if xi.shape != (T.m_d,):
        raise ConfigurationError(f"expected {T.m_d} defect amplitudes, got {xi.shape}")
    key = xi.tobytes()
    hit = T._cache.get(key)
    if hit is not None:
        return hit
    Q2, Q3, Q4 = _evaluate_set(T.Q, xi)
    if T.variant.volume_correction and T.Qv is not None:
        for i in range(T.m_d):
            if xi[i] == 0:
                continue
            sub = {k: T.Qv[k][i] for k in TENSOR_NAMES}
            a, b, c = _evaluate_set(sub, xi)
            Q2 += xi[i] * a
            Q3 += xi[i] * b
            Q4 += xi[i] * c
    Q3t = Q3 + Q3.transpose(0, 2, 1)
    Q4t = Q4 + Q4.transpose(0, 2, 1, 3) + Q4.transpose(0, 3, 1, 2)
    out = ParametricTensors(xi.copy(), Q2, Q3, Q4, Q3t, Q4t)
    for arr in (out.xi, Q2, Q3, Q4, Q3t, Q4t):
        arr.flags.writeable = False
    T._cache[key] = out
    return out


def reduced_force_tangent(T: DpROMTensors, xi, eta):
    """Reduced internal force and tangent ``(f_r, Qt)``."""
    P = evaluate_parametric(T, xi)
    return P.force(eta), P.tangent(eta)


def reduced_mass_damping(mesh: NominalMesh, V, alpha=0.0, beta=0.0,
                         volume_correction=False, U: Optional[DefectBasis] = None,
                         xi=None, K0_r=None):
    """Reduced mass and Rayleigh damping ``(M_r, C_r)``.

    With ``volume_correction`` the mass is integrated over the defected
    (node-shifted) mesh at ``xi``. ``C_r = alpha M_r + beta K0_r`` with the
    nominal reduced linear stiffness (assembled when not given).
    """
    from .full_model import linear_stiffness, mass_matrix

    Vmat = np.asarray(getattr(V, "V", V), dtype=float)
    target = mesh
    if volume_correction and U is not None and xi is not None and np.any(np.asarray(xi)):
        target = apply_defect_to_nodes(mesh, U, xi)
    M_r = Vmat.T @ (mass_matrix(target) @ Vmat)
    if beta != 0 and K0_r is None:
        K0_r = Vmat.T @ (linear_stiffness(mesh) @ Vmat)
    C_r = alpha * M_r if beta == 0 else alpha * M_r + beta * K0_r
    return M_r, C_r


# --------------------------------------------------------------------------
# snapshots
# --------------------------------------------------------------------------


def save_snapshot(T: DpROMTensors, directory, extra: Optional[dict] = None) -> Path:
    """Write ``tensors.npz`` and a JSON ``manifest.json`` to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {k: T.Q[k] for k in TENSOR_NAMES}
    if T.Qv is not None:
        arrays.update({f"{k}_v": T.Qv[k] for k in TENSOR_NAMES})
    arrays.update(M_r=T.M_r, K0_r=T.K0_r, V=T.V)
    np.savez(directory / "tensors.npz", **arrays)
    digest = hashlib.sha256((directory / "tensors.npz").read_bytes()).hexdigest()
    manifest = {
        "format": "dprom-tensors",
        "version": SNAPSHOT_VERSION,
        "variant": T.variant.name,
        "m": T.m,
        "m_d": T.m_d,
        "labels": list(T.labels),
        "defects": list(T.defect_names),
        "mesh_hash": T.mesh_hash,
        "skipped_isochoric": list(T.skipped),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "sha256": digest,
    }
    if extra:
        manifest["extra"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_snapshot(directory) -> DpROMTensors:
    """Read a snapshot written by :func:`save_snapshot`."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"no snapshot manifest in {directory}") from None
    if manifest.get("format") != "dprom-tensors":
        raise ConfigurationError("not a tensor snapshot")
    if manifest.get("version") != SNAPSHOT_VERSION:
        raise ConfigurationError(f"unsupported snapshot version {manifest.get('version')}")
    blob = directory / "tensors.npz"
    if hashlib.sha256(blob.read_bytes()).hexdigest() != manifest.get("sha256"):
        raise ConfigurationError("snapshot digest does not match its manifest")
    with np.load(blob) as data:
        arrays = {k: data[k] for k in data.files}
    for k, shape in manifest["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ConfigurationError(f"snapshot array {k} has an unexpected shape")
    Q = {k: arrays[k] for k in TENSOR_NAMES}
    Qv = None
    if f"{TENSOR_NAMES[0]}_v" in arrays:
        Qv = {k: arrays[f"{k}_v"] for k in TENSOR_NAMES}
    return DpROMTensors(ModelVariant.parse(manifest["variant"]), Q, Qv, arrays["M_r"],
                        arrays["K0_r"], arrays["V"], manifest["labels"],
                        tuple(manifest["defects"]), manifest["mesh_hash"],
                        tuple(manifest["skipped_isochoric"]))


def read_manifest(directory) -> Optional[dict]:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        return None
    return json.loads(path.read_text())
