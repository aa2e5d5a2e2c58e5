"""Desk-scale gyroscope surrogate: a proof-mass plate on four folded springs.

The layout is drawn as a coarse cell mask (rows from top to bottom, columns
from left to right); each coarse cell is subdivided into hex20 elements.
Every spring is an S-shaped chain of three beams joined by short links and
anchored at its outer end. The drawn layout is then rotated by 90 degrees
so that the beams run along y and bend in x: the drive motion is along x
and the sense motion along z. Dimensions are in micrometres and converted
to metres.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .mesh import SILICON, NominalMesh, build_hex_mesh, constrain_nodes

_MASK = (
    "###.###",
    "..#.#..",
    "###.###",
    "#.....#",
    "#######",
    "...#...",
    "#######",
    "#.....#",
    "###.###",
    "..#.#..",
    "###.###",
)
# mask rows holding spring beams (top to bottom, before rotation)
_BEAM_ROWS = (0, 2, 4, 6, 8, 10)


@dataclass(frozen=True)
class GyroLayout:
    """Geometry parameters in micrometres."""

    beam_length: float = 150.0
    beam_width: float = 10.0
    link: float = 10.0
    gap: float = 20.0
    mass_width: float = 300.0
    mass_height: float = 250.0
    thickness: float = 30.0
    n_beam: int = 6
    n_mass_x: int = 4
    n_mass_y: int = 3
    n_z: int = 1

    def column_widths(self):
        return (self.link, self.beam_length, self.link, self.mass_width,
                self.link, self.beam_length, self.link)

    def row_heights(self):
        w, g = self.beam_width, self.gap
        return (w, g, w, g, w, self.mass_height, w, g, w, g, w)

    def column_divisions(self):
        return (1, self.n_beam, 1, self.n_mass_x, 1, self.n_beam, 1)

    def row_divisions(self):
        return (1, 1, 1, 1, 1, self.n_mass_y, 1, 1, 1, 1, 1)


def _edges(sizes, divs, flip=False):
    sizes = list(sizes)[::-1] if flip else list(sizes)
    divs = list(divs)[::-1] if flip else list(divs)
    edges = [0.0]
    owner = []
    for k, (s, n) in enumerate(zip(sizes, divs)):
        for i in range(n):
            edges.append(edges[-1] + s / n)
            owner.append(k)
    return np.array(edges), np.array(owner)


def build_gyro_mesh(layout: GyroLayout = GyroLayout(), material=SILICON) -> NominalMesh:
    """hex20 surrogate mesh with the four anchor faces clamped."""
    if min(layout.beam_length, layout.beam_width, layout.thickness) <= 0:
        raise ConfigurationError("gyroscope dimensions must be positive")
    um = 1e-6
    xb, xo = _edges(layout.column_widths(), layout.column_divisions())
    # rows are listed top to bottom; y grows upwards
    yb, yo_rev = _edges(layout.row_heights(), layout.row_divisions(), flip=True)
    yo = len(_MASK) - 1 - yo_rev
    zb = np.linspace(0.0, layout.thickness, layout.n_z + 1)
    active = np.zeros((len(xb) - 1, len(yb) - 1, layout.n_z), dtype=bool)
    for i, ci in enumerate(xo):
        for j, rj in enumerate(yo):
            active[i, j, :] = _MASK[rj][ci] == "#"
    mesh = build_hex_mesh(xb * um, yb * um, zb * um, active, material)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    tol = 1e-3 * layout.beam_width * um
    top = yb[-1] * um
    w = layout.beam_width * um
    end_x = (x < tol) | (x > xb[-1] * um - tol)
    end_y = (y > top - w - tol) | (y < w + tol)
    anchors = np.flatnonzero(end_x & end_y)
    mesh = constrain_nodes(mesh, anchors)
    return mesh.with_nodes(_rotate(mesh.nodes, layout))


def _rotate(P, layout: GyroLayout):
    """Quarter turn ``(x, y) -> (H - y, x)``; orientation preserving."""
    H = sum(layout.row_heights()) * 1e-6
    out = np.array(P, dtype=float)
    out[..., 0] = H - P[..., 1]
    out[..., 1] = P[..., 0]
    return out


def spring_beams(layout: GyroLayout = GyroLayout()):
    """Descriptors ``{y_off, length, x_mid, width}`` (metres) of all spring beams.

    Use with ``beam_taper(..., axis=1)``.
    """
    um = 1e-6
    heights = layout.row_heights()
    total = sum(heights)
    widths = layout.column_widths()
    x_left = widths[0]
    x_right = sum(widths[:5])
    beams = []
    for r in _BEAM_ROWS:
        y_top = total - sum(heights[:r])
        y_mid = y_top - 0.5 * heights[r]
        for x0 in (x_left, x_right):
            beams.append(dict(y_off=x0 * um, length=layout.beam_length * um,
                              x_mid=(total - y_mid) * um, width=layout.beam_width * um))
    return beams


def mass_centre(layout: GyroLayout = GyroLayout()):
    """Centre of the proof mass (top surface mid-plane point), metres."""
    um = 1e-6
    widths = layout.column_widths()
    x = sum(widths[:3]) + 0.5 * widths[3]
    y = 0.5 * sum(layout.row_heights())
    return _rotate(np.array([x, y, layout.thickness]) * um, layout)
