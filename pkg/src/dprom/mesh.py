"""Meshes, serendipity elements and Gauss quadrature.

Two element kinds are supported:

* ``quad8-plane-strain``: 8-node quadratic quadrilateral, plane strain,
  integrated with a 3x3 Gauss rule and scaled by the out-of-plane width.
* ``hex20``: 20-node quadratic hexahedron, 3x3x3 Gauss rule.

Degrees of freedom are numbered node-major, ``dof = node * dim + component``.
Displacement gradients are flattened row-major, ``theta[dim * i + j] =
du_i / dx_j``, i.e. ``u,x u,y (u,z) v,x ...``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .exceptions import ConfigurationError, GeometryError, MeshQualityError

QUAD8 = "quad8-plane-strain"
HEX20 = "hex20"
ELEMENT_KINDS = (QUAD8, HEX20)

_QUAD8_NODES = np.array(
    [[-1, -1], [1, -1], [1, 1], [-1, 1], [0, -1], [1, 0], [0, 1], [-1, 0]],
    dtype=float,
)
_HEX20_NODES = np.array(
    [
        [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
        [0, -1, -1], [1, 0, -1], [0, 1, -1], [-1, 0, -1],
        [0, -1, 1], [1, 0, 1], [0, 1, 1], [-1, 0, 1],
        [-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic linear elastic material."""

    young_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ConfigurationError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ConfigurationError("Poisson ratio must lie in (-1, 0.5)")
        if not self.density > 0:
            raise ConfigurationError("density must be positive")

    def elasticity_matrix(self, dim: int) -> np.ndarray:
        """Voigt constitutive matrix with engineering shear strains.

        Plane strain for ``dim == 2`` (order E11, E22, 2E12), full 3D
        otherwise (order E11, E22, E33, 2E12, 2E13, 2E23).
        """
        E, nu = self.young_modulus, self.poisson_ratio
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        if dim == 2:
            return np.array(
                [[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]]
            )
        if dim == 3:
            C = np.zeros((6, 6))
            C[:3, :3] = lam
            C[np.arange(3), np.arange(3)] += 2 * mu
            C[np.arange(3, 6), np.arange(3, 6)] = mu
            return C
        raise ConfigurationError(f"unsupported dimension {dim}")


ALUMINIUM = MaterialParams(young_modulus=70e9, poisson_ratio=0.33, density=2700.0)
SILICON = MaterialParams(young_modulus=148e9, poisson_ratio=0.23, density=2330.0)


def reference_nodes(kind: str) -> np.ndarray:
    """Natural coordinates of the element nodes."""
    if kind == QUAD8:
        return _QUAD8_NODES
    if kind == HEX20:
        return _HEX20_NODES
    raise ConfigurationError(f"unsupported element kind {kind!r}")


def shape_functions(kind: str, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Serendipity shape functions and their natural derivatives.

    Parameters
    ----------
    kind : str
        Element kind.
    pts : (P, dim) array
        Points in natural coordinates.

    Returns
    -------
    N : (P, nn) array
    dN : (P, nn, dim) array
        ``dN[p, a, j] = dN_a / dxi_j``.
    """
    nodes = reference_nodes(kind)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dim = nodes.shape[1]
    P, nn = pts.shape[0], nodes.shape[0]
    N = np.empty((P, nn))
    dN = np.empty((P, nn, dim))
    for a, na in enumerate(nodes):
        s = pts * na  # xi * xi_a per axis
        corner = np.all(na != 0)
        if corner:
            lin = np.prod(1 + s, axis=1)
            q = s.sum(axis=1) - (dim - 1)
            N[:, a] = lin * q / 2**dim
            for j in range(dim):
                others = np.prod(np.delete(1 + s, j, axis=1), axis=1)
                dN[:, a, j] = (na[j] * others * q + lin * na[j]) / 2**dim
        else:
            zero = int(np.flatnonzero(na == 0)[0])
            bub = 1 - pts[:, zero] ** 2
            rest = np.delete(1 + s, zero, axis=1)
            lin = np.prod(rest, axis=1)
            c = 2 ** (dim - 1)
            N[:, a] = bub * lin / c
            for j in range(dim):
                if j == zero:
                    dN[:, a, j] = -2 * pts[:, zero] * lin / c
                else:
                    k = j if j < zero else j - 1
                    others = np.prod(np.delete(rest, k, axis=1), axis=1)
                    dN[:, a, j] = bub * na[j] * others / c
    return N, dN


@lru_cache(maxsize=None)
def _gauss_rule_cached(kind: str):
    x, w = np.polynomial.legendre.leggauss(3)
    if kind == QUAD8:
        pts = np.array([[a, b] for a in x for b in x])
        wts = np.array([wa * wb for wa in w for wb in w])
    elif kind == HEX20:
        pts = np.array([[a, b, c] for a in x for b in x for c in x])
        wts = np.array([wa * wb * wc for wa in w for wb in w for wc in w])
    else:
        raise ConfigurationError(f"unsupported element kind {kind!r}")
    pts.flags.writeable = False
    wts.flags.writeable = False
    return pts, wts


def gauss_rule(kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product 3-point Gauss-Legendre rule for ``kind``.

    Returns ``(points, weights)``; 9 points for quads, 27 for hexahedra.
    """
    return _gauss_rule_cached(kind)


def gradient_operator(dNdx: np.ndarray) -> np.ndarray:
    """Build ``G`` from physical shape-function derivatives.

    ``dNdx`` has shape ``(..., nn, dim)``; the result has shape
    ``(..., dim*dim, nn*dim)`` so that ``theta = G @ u_e``.
    """
    *lead, nn, dim = dNdx.shape
    G = np.zeros((*lead, dim * dim, nn * dim))
    for i in range(dim):
        for j in range(dim):
            G[..., dim * i + j, i::dim] = dNdx[..., :, j]
    return G


class NominalMesh:
    """Undefected finite-element model.

    Instances are treated as immutable: coordinate and connectivity arrays
    are flagged read-only and geometric quantities are cached on first use.

    Parameters
    ----------
    nodes : (n_nodes, dim) array
    elements : (n_elements, nn) int array
    kind : str
    material : MaterialParams
    dirichlet : iterable of int
        Constrained dof ids (eliminated from the solved system).
    thickness : float
        Out-of-plane width for 2D plane-strain models; ignored in 3D.
    """

    def __init__(self, nodes, elements, kind, material, dirichlet=(), thickness=1.0):
        if kind not in ELEMENT_KINDS:
            raise ConfigurationError(f"unsupported element kind {kind!r}")
        nodes = np.array(nodes, dtype=float)
        elements = np.array(elements, dtype=np.int64)
        dim = reference_nodes(kind).shape[1]
        nn = reference_nodes(kind).shape[0]
        if nodes.ndim != 2 or nodes.shape[1] != dim:
            raise ConfigurationError(f"{kind} nodes need {dim} coordinates")
        if elements.ndim != 2 or elements.shape[1] != nn:
            raise ConfigurationError(f"{kind} elements need {nn} node ids")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise ConfigurationError("connectivity references a missing node")
        for e, conn in enumerate(elements):
            if len(set(conn.tolist())) != nn:
                raise ConfigurationError(f"element {e} repeats a node")
        dirichlet = np.unique(np.asarray(list(dirichlet), dtype=np.int64))
        if dirichlet.size and (dirichlet.min() < 0 or dirichlet.max() >= nodes.size):
            raise ConfigurationError("constrained dof outside the model")
        if thickness <= 0:
            raise ConfigurationError("thickness must be positive")
        for arr in (nodes, elements, dirichlet):
            arr.flags.writeable = False
        self.nodes = nodes
        self.elements = elements
        self.kind = kind
        self.material = material
        self.dirichlet = dirichlet
        self.thickness = float(thickness)

    def __repr__(self):
        return (
            f"NominalMesh(kind={self.kind!r}, n_nodes={self.n_nodes}, "
            f"n_elements={self.n_elements}, n_free={self.n_free})"
        )

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.nodes.size

    @property
    def n_free(self) -> int:
        return self.free_dofs.size

    @property
    def dofs_per_element(self) -> int:
        return self.elements.shape[1] * self.dim

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet] = False
        out = np.flatnonzero(mask)
        out.flags.writeable = False
        return out

    @cached_property
    def element_dofs(self) -> np.ndarray:
        d = self.dim
        out = (self.elements[:, :, None] * d + np.arange(d)).reshape(self.n_elements, -1)
        out.flags.writeable = False
        return out

    @cached_property
    def fingerprint(self) -> str:
        """Content hash used to key tensor snapshots."""
        h = hashlib.sha256()
        for arr in (self.nodes, self.elements, self.dirichlet):
            h.update(np.ascontiguousarray(arr).tobytes())
        m = self.material
        h.update(repr((self.kind, m.young_modulus, m.poisson_ratio, m.density,
                       self.thickness)).encode())
        return h.hexdigest()[:16]

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Scatter free-dof vectors (or column blocks) to all dofs."""
        u_free = np.asarray(u_free)
        out = np.zeros((self.n_dofs,) + u_free.shape[1:], dtype=u_free.dtype)
        out[self.free_dofs] = u_free
        return out

    def dof(self, node: int, component: int) -> int:
        return int(node) * self.dim + int(component)

    def free_index(self, dof: int) -> int:
        """Position of a global dof inside the free-dof vector."""
        idx = np.searchsorted(self.free_dofs, dof)
        if idx >= self.n_free or self.free_dofs[idx] != dof:
            raise ConfigurationError(f"dof {dof} is constrained")
        return int(idx)

    def nearest_node(self, point) -> int:
        return int(np.argmin(np.linalg.norm(self.nodes - np.asarray(point), axis=1)))

    @cached_property
    def quadrature(self) -> "ElementQuadrature":
        return ElementQuadrature.build(self)

    def with_nodes(self, nodes) -> "NominalMesh":
        return NominalMesh(nodes, self.elements, self.kind, self.material,
                           self.dirichlet, self.thickness)


@dataclass(frozen=True)
class ElementQuadrature:
    """Per-element, per-Gauss-point geometric data.

    Attributes
    ----------
    G : (n_el, nq, g, n_e)
        Gradient operators with respect to the mesh coordinates.
    N : (nq, nn)
        Shape function values at the Gauss points.
    dV : (n_el, nq)
        Weight times Jacobian determinant times out-of-plane width.
    x : (n_el, nq, dim)
        Physical coordinates of the Gauss points.
    """

    G: np.ndarray
    N: np.ndarray
    dV: np.ndarray
    x: np.ndarray

    @classmethod
    def build(cls, mesh: NominalMesh) -> "ElementQuadrature":
        pts, wts = gauss_rule(mesh.kind)
        N, dN = shape_functions(mesh.kind, pts)
        X = mesh.nodes[mesh.elements]  # (E, nn, d)
        J = np.einsum("qaj,eai->eqij", dN, X)  # dx_i/dxi_j
        det = np.linalg.det(J)
        bad = np.argwhere(~(det > 0))
        if bad.size:
            e = int(bad[0, 0])
            raise MeshQualityError(
                f"non-positive Jacobian determinant in element {e}"
            )
        Jinv = np.linalg.inv(J)  # dxi_j/dx_i
        dNdx = np.einsum("qaj,eqji->eqai", dN, Jinv)
        G = gradient_operator(dNdx)
        dV = det * wts
        if mesh.dim == 2:
            dV = dV * mesh.thickness
        xq = np.einsum("qa,eai->eqi", N, X)
        for arr in (G, N, dV, xq):
            arr.flags.writeable = False
        return cls(G=G, N=N, dV=dV, x=xq)


def shape_fn_derivatives(mesh: NominalMesh, elem: int, qp) -> np.ndarray:
    """Gradient operator ``G`` of one element at a natural-coordinate point.

    ``theta = G @ u_e`` lists ``u,x u,y (u,z) v,x ...`` with respect to the
    nominal coordinates.
    """
    qp = np.asarray(qp, dtype=float).reshape(1, -1)
    if qp.shape[1] != mesh.dim or np.any(np.abs(qp) > 1 + 1e-12):
        raise ConfigurationError("quadrature point outside the reference element")
    _, dN = shape_functions(mesh.kind, qp)
    X = mesh.nodes[mesh.elements[elem]]
    J = dN[0].T @ X  # J[j, i] = dx_i/dxi_j
    det = np.linalg.det(J)
    if not abs(det) > 1e-14 * max(1.0, np.abs(J).max() ** mesh.dim):
        raise MeshQualityError(f"singular isoparametric map in element {elem}")
    dNdx = np.linalg.solve(J, dN[0].T).T
    return gradient_operator(dNdx)


def check_jacobians(mesh: NominalMesh) -> None:
    """Raise :class:`GeometryError` naming the first inverted element."""
    pts, _ = gauss_rule(mesh.kind)
    _, dN = shape_functions(mesh.kind, pts)
    # also probe the nodes: corner inversion may hide between Gauss points
    _, dNn = shape_functions(mesh.kind, reference_nodes(mesh.kind))
    X = mesh.nodes[mesh.elements]
    for probe in (dN, dNn):
        det = np.linalg.det(np.einsum("qaj,eai->eqij", probe, X))
        bad = np.argwhere(~(det > 0))
        if bad.size:
            e = int(bad[0, 0])
            raise GeometryError(f"element {e} is inverted by the defect", element=e)


def apply_defect_to_nodes(mesh: NominalMesh, U, xi) -> NominalMesh:
    """Shift nodes by ``U @ xi`` (the FOM-d reference geometry).

    Parameters
    ----------
    U : (n_dofs, m_d) array or DefectBasis
        Nodal defect fields over all dofs.
    xi : (m_d,) array
    """
    Umat = getattr(U, "U", U)
    Umat = np.asarray(Umat, dtype=float)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if Umat.ndim != 2 or Umat.shape[0] != mesh.n_dofs:
        raise ConfigurationError("defect basis must have one row per dof")
    if xi.shape != (Umat.shape[1],):
        raise ConfigurationError(
            f"expected {Umat.shape[1]} defect amplitudes, got {xi.shape}"
        )
    shift = (Umat @ xi).reshape(mesh.n_nodes, mesh.dim)
    out = mesh.with_nodes(mesh.nodes + shift)
    check_jacobians(out)
    return out


# --------------------------------------------------------------------------
# structured generators
# --------------------------------------------------------------------------


def build_rect_beam_mesh(lx, ty, nx, ny, material=ALUMINIUM, thickness=1.0,
                         clamp="both") -> NominalMesh:
    """Structured quad8 mesh of the rectangle ``[0, lx] x [0, ty]``.

    Both end edges are fully clamped by default (``clamp="both"``);
    ``clamp="none"`` leaves the model free.
    """
    if not (lx > 0 and ty > 0):
        raise ConfigurationError("beam dimensions must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigurationError("element counts must be positive integers")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, lx, 2 * nx + 1)
    ys = np.linspace(0.0, ty, 2 * ny + 1)
    ids = -np.ones((2 * nx + 1, 2 * ny + 1), dtype=np.int64)
    coords = []
    for j in range(2 * ny + 1):
        for i in range(2 * nx + 1):
            if i % 2 == 1 and j % 2 == 1:
                continue  # no centre node in serendipity elements
            ids[i, j] = len(coords)
            coords.append((xs[i], ys[j]))
    elems = []
    for ey in range(ny):
        for ex in range(nx):
            i, j = 2 * ex, 2 * ey
            elems.append([
                ids[i, j], ids[i + 2, j], ids[i + 2, j + 2], ids[i, j + 2],
                ids[i + 1, j], ids[i + 2, j + 1], ids[i + 1, j + 2], ids[i, j + 1],
            ])
    nodes = np.array(coords)
    dirichlet = []
    if clamp == "both":
        tol = 1e-12 * lx
        ends = np.flatnonzero((nodes[:, 0] < tol) | (nodes[:, 0] > lx - tol))
        dirichlet = (ends[:, None] * 2 + np.arange(2)).ravel()
    elif clamp != "none":
        raise ConfigurationError(f"unknown clamp option {clamp!r}")
    return NominalMesh(nodes, elems, QUAD8, material, dirichlet, thickness)


def build_hex_mesh(xb, yb, zb, active=None, material=ALUMINIUM) -> NominalMesh:
    """hex20 mesh on a tensor grid of cells, optionally masked.

    Parameters
    ----------
    xb, yb, zb : 1D arrays
        Cell boundaries along each axis.
    active : (nx, ny, nz) bool array, optional
        Cells to keep; all cells by default.

    The result has no constraints; use :func:`constrain_nodes`.
    """
    xb, yb, zb = (np.asarray(b, dtype=float) for b in (xb, yb, zb))
    nx, ny, nz = len(xb) - 1, len(yb) - 1, len(zb) - 1
    if min(nx, ny, nz) < 1:
        raise ConfigurationError("each axis needs at least one cell")
    if active is None:
        active = np.ones((nx, ny, nz), dtype=bool)
    active = np.asarray(active, dtype=bool)
    if active.shape != (nx, ny, nz):
        raise ConfigurationError("mask shape does not match the grid")

    def lattice(b):
        out = np.empty(2 * len(b) - 1)
        out[0::2] = b
        out[1::2] = 0.5 * (b[:-1] + b[1:])
        return out

    lx, ly, lz = lattice(xb), lattice(yb), lattice(zb)
    offs = ((_HEX20_NODES + 1)).astype(int)  # lattice offsets 0..2
    ids: dict[tuple[int, int, int], int] = {}
    coords = []
    elems = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                if not active[i, j, k]:
                    continue
                conn = []
                for o in offs:
                    key = (2 * i + o[0], 2 * j + o[1], 2 * k + o[2])
                    if key not in ids:
                        ids[key] = len(coords)
                        coords.append((lx[key[0]], ly[key[1]], lz[key[2]]))
                    conn.append(ids[key])
                elems.append(conn)
    if not elems:
        raise ConfigurationError("mask selects no cells")
    return NominalMesh(np.array(coords), elems, HEX20, material, ())


def constrain_nodes(mesh: NominalMesh, nodes, components=None) -> NominalMesh:
    """Return a copy with the given nodes' dofs (all components) fixed."""
    nodes = np.asarray(nodes, dtype=np.int64)
    comps = np.arange(mesh.dim) if components is None else np.asarray(components)
    extra = (nodes[:, None] * mesh.dim + comps).ravel()
    return NominalMesh(mesh.nodes, mesh.elements, mesh.kind, mesh.material,
                       np.union1d(mesh.dirichlet, extra), mesh.thickness)


# --------------------------------------------------------------------------
# plain-text mesh files
# --------------------------------------------------------------------------

MESH_FORMAT_VERSION = 1


def write_mesh(mesh: NominalMesh, path) -> None:
    m = mesh.material
    with open(path, "w") as fh:
        fh.write(f"# dprom mesh v{MESH_FORMAT_VERSION}\n")
        fh.write(f"*KIND {mesh.kind}\n")
        fh.write(f"*MATERIAL {m.young_modulus!r} {m.poisson_ratio!r} {m.density!r}\n")
        fh.write(f"*THICKNESS {mesh.thickness!r}\n")
        fh.write(f"*NODES {mesh.n_nodes}\n")
        for i, x in enumerate(mesh.nodes):
            fh.write(f"{i} " + " ".join(repr(float(c)) for c in x) + "\n")
        fh.write(f"*ELEMENTS {mesh.n_elements}\n")
        for e, conn in enumerate(mesh.elements):
            fh.write(f"{e} {mesh.kind} " + " ".join(str(int(c)) for c in conn) + "\n")
        fh.write(f"*CONSTRAINED {mesh.dirichlet.size}\n")
        for k in range(0, mesh.dirichlet.size, 16):
            fh.write(" ".join(str(int(d)) for d in mesh.dirichlet[k:k + 16]) + "\n")


def read_mesh(path) -> NominalMesh:
    """Read the plain-text format written by :func:`write_mesh`.

    Node and element ids in the file may be arbitrary integers; they are
    renumbered consecutively in file order. Constrained dofs refer to the
    file's node ids as ``node_id * dim + component``.
    """
    kind = None
    material = None
    thickness = 1.0
    node_ids, coords, elems, constrained = [], [], [], []
    section = None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("*"):
                head, *rest = line.split()
                section = head[1:].upper()
                if section == "KIND":
                    kind = rest[0]
                elif section == "MATERIAL":
                    material = MaterialParams(*map(float, rest[:3]))
                elif section == "THICKNESS":
                    thickness = float(rest[0])
                continue
            tok = line.split()
            if section == "NODES":
                node_ids.append(int(tok[0]))
                coords.append([float(t) for t in tok[1:]])
            elif section == "ELEMENTS":
                if tok[1] != kind:
                    raise ConfigurationError(f"mixed element kinds ({tok[1]})")
                elems.append([int(t) for t in tok[2:]])
            elif section == "CONSTRAINED":
                constrained.extend(int(t) for t in tok)
            else:
                raise ConfigurationError(f"data outside a section: {line!r}")
    if kind is None or material is None:
        raise ConfigurationError("mesh file lacks *KIND or *MATERIAL")
    renum = {nid: i for i, nid in enumerate(node_ids)}
    dim = len(coords[0])
    try:
        conn = [[renum[n] for n in e] for e in elems]
        dofs = [renum[d // dim] * dim + d % dim for d in constrained]
    except KeyError as exc:
        raise ConfigurationError(f"unknown node id {exc.args[0]}") from None
    return NominalMesh(coords, conn, kind, material, dofs, thickness)
