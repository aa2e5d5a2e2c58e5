"""Shape-defect fields and their built-in library.

A defect is a nodal displacement field ``U_i`` over all dofs of the nominal
mesh; a realization is ``u_d = U @ xi``. Each field may carry an analytic
divergence (used by the volume correction); without one the divergence is
interpolated from the nodal field through the element gradient operators.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError
from .mesh import NominalMesh

DivergenceFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DefectBasis:
    """Collection of ``m_d`` defect fields.

    Parameters
    ----------
    U : (n_dofs, m_d) array
        Nodal defect fields over all dofs (constrained ones included).
    names : sequence of str
    divergence : sequence of callables or None
        ``div(x)`` for points ``x`` of shape ``(..., dim)`` in nominal
        coordinates, or ``None`` to interpolate from ``U``.
    isochoric : sequence of bool
        Fields flagged isochoric skip their volume-correction tensors.
    """

    U: np.ndarray
    names: tuple = ()
    divergence: tuple = ()
    isochoric: tuple = ()

    def __post_init__(self):
        U = np.array(self.U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if U.ndim != 2 or U.shape[1] < 1:
            raise ConfigurationError("a defect basis needs at least one field")
        m = U.shape[1]
        if np.any(np.abs(U).max(axis=0) == 0):
            raise ConfigurationError("defect fields must be non-zero")
        names = tuple(self.names) or tuple(f"defect{i + 1}" for i in range(m))
        div = tuple(self.divergence) or (None,) * m
        iso = tuple(bool(b) for b in self.isochoric) or (False,) * m
        if not (len(names) == len(div) == len(iso) == m):
            raise ConfigurationError("defect metadata does not match U")
        U.flags.writeable = False
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "divergence", div)
        object.__setattr__(self, "isochoric", iso)

    @property
    def m_d(self) -> int:
        return self.U.shape[1]

    @property
    def n_dofs(self) -> int:
        return self.U.shape[0]

    def field(self, xi) -> np.ndarray:
        """Combined defect field ``U @ xi`` over all dofs."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.shape != (self.m_d,):
            raise ConfigurationError(
                f"expected {self.m_d} defect amplitudes, got shape {xi.shape}"
            )
        return self.U @ xi

    def divergence_at_qps(self, mesh: NominalMesh) -> np.ndarray:
        """Divergence of every field at every Gauss point, ``(m_d, E, nq)``."""
        if self.n_dofs != mesh.n_dofs:
            raise ConfigurationError("defect basis does not match the mesh")
        quad = mesh.quadrature
        d = mesh.dim
        trace_rows = [d * i + i for i in range(d)]
        out = np.empty((self.m_d,) + quad.dV.shape)
        for i, fn in enumerate(self.divergence):
            if fn is not None:
                out[i] = np.broadcast_to(fn(quad.x), quad.dV.shape)
            else:
                ue = self.U[mesh.element_dofs, i]
                theta = np.einsum("eqgn,en->eqg", quad.G[:, :, trace_rows], ue)
                out[i] = theta.sum(axis=-1)
        return out

    @staticmethod
    def stack(parts: Sequence["DefectBasis"]) -> "DefectBasis":
        if not parts:
            raise ConfigurationError("no defects given")
        return DefectBasis(
            np.hstack([p.U for p in parts]),
            sum((p.names for p in parts), ()),
            sum((p.divergence for p in parts), ()),
            sum((p.isochoric for p in parts), ()),
        )

    def subset(self, idx) -> "DefectBasis":
        idx = list(np.atleast_1d(idx))
        return DefectBasis(
            self.U[:, idx],
            tuple(self.names[i] for i in idx),
            tuple(self.divergence[i] for i in idx),
            tuple(self.isochoric[i] for i in idx),
        )

    def combined(self, xi) -> "DefectBasis":
        """Single field ``U @ xi`` at unit amplitude."""
        fns = [f for f in self.divergence]
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if all(f is not None for f in fns):
            def div(x, _fns=tuple(fns), _xi=xi.copy()):
                return sum(a * f(x) for a, f in zip(_xi, _fns))
        else:
            div = None
        return DefectBasis(self.field(xi)[:, None], ("combined",), (div,),
                           (all(self.isochoric),))


def _nodal_field(mesh: NominalMesh, fn) -> np.ndarray:
    vals = np.asarray(fn(mesh.nodes), dtype=float)
    return vals.reshape(-1)


def arch_sine(mesh: NominalMesh, amplitude=None, length=None, x0=None) -> DefectBasis:
    """Transverse half-sine ``v_d = amplitude * sin(pi (x - x0) / length)``.

    Defaults span the mesh bounding box in x and use its height as amplitude,
    so unit amplitude lifts mid-span by the beam thickness. The field only
    depends on x, hence it is divergence free.
    """
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    amplitude = float(hi[1] - lo[1]) if amplitude is None else float(amplitude)
    x0 = float(lo[0]) if x0 is None else float(x0)
    length = float(hi[0] - x0) if length is None else float(length)
    if length <= 0:
        raise ConfigurationError("arch length must be positive")

    def fn(X):
        out = np.zeros_like(X)
        out[:, 1] = amplitude * np.sin(np.pi * (X[:, 0] - x0) / length)
        return out

    return DefectBasis(_nodal_field(mesh, fn), ("arch_sine",),
                       (lambda x: np.zeros(x.shape[:-1]),), (True,))


def wall_angle(mesh: NominalMesh, angle_deg=1.0, z_ref=0.0) -> DefectBasis:
    """Sidewall tilt ``u_d = tan(angle) (z - z_ref)``, ``v_d = w_d = 0``.

    With the default one-degree angle, the amplitude reads directly as the
    wall angle in degrees (for small angles). Divergence free.
    """
    if mesh.dim != 3:
        raise ConfigurationError("wall_angle needs a 3D mesh")
    t = np.tan(np.deg2rad(float(angle_deg)))

    def fn(X):
        out = np.zeros_like(X)
        out[:, 0] = t * (X[:, 2] - z_ref)
        return out

    return DefectBasis(_nodal_field(mesh, fn), ("wall_angle",),
                       (lambda x: np.zeros(x.shape[:-1]),), (True,))


def beam_taper(mesh: NominalMesh, beams=None, amplitude=None, axis: int = 0
               ) -> DefectBasis:
    """Width change of straight beams.

    For x-aligned beams (``axis=0``) each descriptor is
    ``{x_off, length, y_mid, width}`` and::

        v_d = amplitude * sin(pi (x - x_off) / length) * (y - y_mid) * 2 / width

    inside ``x_off <= x <= x_off + length`` and ``|y - y_mid| <= width / 2``,
    zero elsewhere. For y-aligned beams (``axis=1``) the roles of x and y
    swap: descriptors are ``{y_off, length, x_mid, width}`` and the field is
    an x-displacement. ``amplitude`` defaults to the beam width so that the
    defect amplitude is the edge offset as a fraction of the width. The
    divergence ``2 amplitude / width * sin(...)`` is attached.
    """
    if axis not in (0, 1):
        raise ConfigurationError("taper axis must be 0 (x-aligned) or 1 (y-aligned)")
    a, t = (0, 1) if axis == 0 else (1, 0)
    keys = ("x_off", "length", "y_mid", "width") if axis == 0 else (
        "y_off", "length", "x_mid", "width")
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    if beams is None:
        beams = [dict(zip(keys, (lo[a], hi[a] - lo[a], 0.5 * (lo[t] + hi[t]),
                                 hi[t] - lo[t])))]
    specs = []
    for b in beams:
        try:
            spec = tuple(float(b[k]) for k in keys)
        except KeyError as exc:
            raise ConfigurationError(f"taper beam lacks {exc.args[0]!r}") from None
        if spec[1] <= 0 or spec[3] <= 0:
            raise ConfigurationError("taper beam length and width must be positive")
        amp = spec[3] if amplitude is None else float(amplitude)
        specs.append(spec + (amp,))
    tol = 1e-9 * float(np.max(hi - lo))

    def inside(X, s):
        off, L, mid, W, _ = s
        return ((X[..., a] >= off - tol) & (X[..., a] <= off + L + tol)
                & (np.abs(X[..., t] - mid) <= 0.5 * W + tol))

    def fn(X):
        out = np.zeros_like(X)
        for s in specs:
            off, L, mid, W, amp = s
            m = inside(X, s)
            out[m, t] += (amp * np.sin(np.pi * (X[m, a] - off) / L)
                          * (X[m, t] - mid) * 2.0 / W)
        return out

    def div(x):
        out = np.zeros(x.shape[:-1])
        for s in specs:
            off, L, mid, W, amp = s
            m = inside(x, s)
            out[m] += 2.0 * amp / W * np.sin(np.pi * (x[m][..., a] - off) / L)
        return out

    for s in specs:
        if not np.any(inside(mesh.nodes, s)):
            raise ConfigurationError(f"taper region {s[:4]} contains no nodes")
    return DefectBasis(_nodal_field(mesh, fn), ("beam_taper",), (div,), (False,))


def custom_file(mesh: NominalMesh, path, name=None) -> DefectBasis:
    """Nodal field read from ``.npy`` (``(n_nodes, dim)`` or flat) or text.

    Text files hold one row per node: ``node_id ux uy [uz]``; missing nodes
    are zero. The divergence is interpolated from the field.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"defect file {path} not found")
    if path.suffix == ".npy":
        vals = np.load(path).reshape(-1)
        if vals.size != mesh.n_dofs:
            raise ConfigurationError("defect file does not match the mesh size")
    else:
        rows = np.loadtxt(path, ndmin=2)
        if rows.shape[1] != mesh.dim + 1:
            raise ConfigurationError("defect rows need a node id and one value per axis")
        vals = np.zeros((mesh.n_nodes, mesh.dim))
        ids = rows[:, 0].astype(int)
        if ids.min() < 0 or ids.max() >= mesh.n_nodes:
            raise ConfigurationError("defect file references a missing node")
        vals[ids] = rows[:, 1:]
        vals = vals.reshape(-1)
    return DefectBasis(vals, (name or path.stem,), (None,), (False,))


BUILTIN_DEFECTS = {
    "arch_sine": arch_sine,
    "wall_angle": wall_angle,
    "beam_taper": beam_taper,
    "custom_file": custom_file,
}


def builtin_defect(name: str, params: Optional[dict], mesh: NominalMesh) -> DefectBasis:
    """Instantiate a named defect field on ``mesh``."""
    try:
        factory = BUILTIN_DEFECTS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown defect {name!r}; choose from {sorted(BUILTIN_DEFECTS)}"
        ) from None
    try:
        return factory(mesh, **(params or {}))
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from None
