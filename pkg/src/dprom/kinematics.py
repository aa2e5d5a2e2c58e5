"""Strain measures for a body deformed in two steps.

A nominal body is first shifted by a defect field ``u_d`` (gradient ``Dd``,
``F1 = I + Dd``) and then deformed by ``u`` (gradient ``D``, both taken with
respect to the nominal coordinates). The strain measured from the defected
configuration is exact but rational in ``Dd``; expanding ``F1^-1`` in a
Neumann series gives the polynomial variants used for tensor models.

Voigt vectors use engineering shear strains. In 2D the order is
``(E11, E22, 2E12)``, in 3D ``(E11, E22, E33, 2E12, 2E13, 2E23)``.
Gradient vectors follow ``theta[dim * i + j] = du_i / dx_j``.
"""
from __future__ import annotations

import enum
import re
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError, DefectTooLargeError

_SHEAR_PAIRS = {2: [(0, 1)], 3: [(0, 1), (0, 2), (1, 2)]}


def voigt_size(dim: int) -> int:
    if dim not in (2, 3):
        raise ConfigurationError(f"unsupported dimension {dim}")
    return 3 if dim == 2 else 6


def to_voigt(S: np.ndarray) -> np.ndarray:
    """Voigt form of the symmetric part of ``S`` with engineering shear.

    Off-diagonal entries are summed (``S12 + S21``), so a symmetric strain
    tensor maps to ``(E11, E22, 2 E12)``. Works on stacks ``(..., d, d)``.
    """
    d = S.shape[-1]
    diag = [S[..., i, i] for i in range(d)]
    shear = [S[..., i, j] + S[..., j, i] for i, j in _SHEAR_PAIRS[d]]
    return np.stack(diag + shear, axis=-1)


def from_voigt(v: np.ndarray) -> np.ndarray:
    """Symmetric tensor from a Voigt vector (inverse of :func:`to_voigt`)."""
    s = v.shape[-1]
    d = {3: 2, 6: 3}[s]
    out = np.zeros(v.shape[:-1] + (d, d))
    for i in range(d):
        out[..., i, i] = v[..., i]
    for k, (i, j) in enumerate(_SHEAR_PAIRS[d]):
        out[..., i, j] = out[..., j, i] = 0.5 * v[..., d + k]
    return out


def theta_to_matrix(theta: np.ndarray) -> np.ndarray:
    g = theta.shape[-1]
    d = int(round(np.sqrt(g)))
    return theta.reshape(theta.shape[:-1] + (d, d))


def matrix_to_theta(D: np.ndarray) -> np.ndarray:
    d = D.shape[-1]
    return D.reshape(D.shape[:-2] + (d * d,))


class StrainVariant(enum.Enum):
    """Strain model used inside the element integrals.

    ``EXACT`` keeps ``F1^-1``; ``N1`` truncates its Neumann series after the
    linear term; ``N1T`` additionally drops the ``Dd D^2`` strains; ``N0``
    truncates at order zero (the Budiansky form).
    """

    EXACT = "Exact"
    N1 = "N1"
    N1T = "N1t"
    N0 = "N0"


@dataclass(frozen=True)
class ModelVariant:
    """Strain variant plus the first-order volume correction flag."""

    strain: StrainVariant
    volume_correction: bool = False

    @property
    def name(self) -> str:
        return self.strain.value + ("-v" if self.volume_correction else "")

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, text) -> "ModelVariant":
        """Parse names such as ``"N1"``, ``"n1t-v"`` or ``"Exact"``."""
        if isinstance(text, ModelVariant):
            return text
        if isinstance(text, StrainVariant):
            return cls(text)
        m = re.fullmatch(r"\s*(exact|n1t|n1|n0)\s*(-v)?\s*", str(text), re.I)
        if m is None:
            raise ConfigurationError(f"unknown model variant {text!r}")
        lookup = {v.value.lower(): v for v in StrainVariant}
        return cls(lookup[m.group(1).lower()], m.group(2) is not None)


# --------------------------------------------------------------------------
# operator matrices
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _h_matrix(dim: int) -> np.ndarray:
    g = dim * dim
    H = np.zeros((voigt_size(dim), g))
    for c in range(g):
        H[:, c] = to_voigt(np.eye(g)[c].reshape(dim, dim))
    H.flags.writeable = False
    return H


def h_matrix(dim: int) -> np.ndarray:
    """Constant matrix with ``H theta`` = Voigt form of ``(D + D^T) / 2``."""
    return _h_matrix(dim)


@dataclass(frozen=True)
class LMatrices:
    """Constant extraction arrays for the operator matrices.

    Index order is ``(strain row, column, gradient index[, defect index])``.
    The stored entries are non-negative, as tabulated; the operator matrices
    carry a leading minus sign::

        A1 = L1 . theta
        A2 = -(L2 . theta_d)
        A3 A1 = -(L3 . theta) . theta_d

    Attributes ``L2s`` and ``L3s`` hold the signed versions used in kernels.
    """

    dim: int
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray

    @property
    def L2s(self) -> np.ndarray:
        return -self.L2

    @property
    def L3s(self) -> np.ndarray:
        return -self.L3

    def nonzeros(self, which: int):
        """Yield ``(1-based index tuple, value)`` for the nonzero entries."""
        L = (self.L1, self.L2, self.L3)[which - 1]
        for idx in zip(*np.nonzero(L)):
            yield tuple(int(i) + 1 for i in idx), float(L[idx])


def _a3_from_theta_d(theta_d: np.ndarray, dim: int) -> np.ndarray:
    """``A3(theta_d)`` built column by column from its matrix action."""
    s = voigt_size(dim)
    Dd = theta_d.reshape(dim, dim)
    A3 = np.zeros((s, s))
    for c in range(s):
        X = from_voigt(np.eye(s)[c])
        A3[:, c] = -0.5 * to_voigt(Dd.T @ X + X @ Dd)
    return A3


@lru_cache(maxsize=None)
def _l_matrices(dim: int) -> LMatrices:
    g, s = dim * dim, voigt_size(dim)
    E = np.eye(g)
    L1 = np.zeros((s, g, g))
    L2 = np.zeros((s, g, g))
    L3 = np.zeros((s, g, g, g))
    for k in range(g):
        Dk = E[k].reshape(dim, dim)
        for c in range(g):
            Dc = E[c].reshape(dim, dim)
            L1[:, c, k] = 0.5 * to_voigt(Dk.T @ Dc + Dc.T @ Dk)
            L2[:, c, k] = 0.5 * to_voigt(Dk.T @ Dc.T + Dc @ Dk)
    for b in range(g):
        A3b = _a3_from_theta_d(E[b], dim)
        for a in range(g):
            L3[:, :, a, b] = -A3b @ L1[:, :, a]
    for arr in (L1, L2, L3):
        arr.flags.writeable = False
    return LMatrices(dim, L1, L2, L3)


def l_matrices(dim: int) -> LMatrices:
    """Constant L1/L2/L3 arrays for ``dim`` in {2, 3} (cached)."""
    if dim not in (2, 3):
        raise ConfigurationError(f"unsupported dimension {dim}")
    return _l_matrices(dim)


# Nonzero entries as tabulated in the reference tables, 1-based indices
# ``(row, column, gradient[, defect])``; a trailing ``h`` marks the value 1/2.
_REFERENCE_ENTRIES = {
    (2, 1): "111 321 312 222 123 343 324 244",
    (2, 2): "111 331 312 232 123 343 324 244",
    (2, 3): (
        "1111 3211h 3121h 1331 3431h 3341h 3112 2212h 2122h 3332 2432h 2342h "
        "1213h 1123h 3223 1433h 1343h 3443 3214h 3124h 2224 3434h 3344h 2444"
    ),
    (3, 1): (
        "111 421 531 412 222 632 513 623 333 144 454 564 445 255 665 546 656 "
        "366 177 487 597 478 288 698 579 689 399"
    ),
    (3, 2): (
        "111 441 571 412 242 672 513 643 373 124 454 584 425 255 685 526 656 "
        "386 137 467 597 438 268 698 539 669 399"
    ),
    (3, 3): (
        "1111 4211h 5311h 4121h 5131h 1441 4541h 5641h 4451h 5461h 1771 4871h "
        "5971h 4781h 5791h 4112 2212h 6312h 2122h 6132h 4442 2542h 6642h 2452h "
        "6462h 4772 2872h 6972h 2782h 6792h 5113 6213h 3313h 6123h 3133h 5443 "
        "6543h 3643h 6453h 3463h 5773 6873h 3973h 6783h 3793h 1214h 1124h 4224 "
        "5324h 5234h 1544h 1454h 4554 5654h 5564h 1874h 1784h 4884 5984h 5894h "
        "4215h 4125h 2225 6325h 6235h 4545h 4455h 2555 6655h 6565h 4875h 4785h "
        "2885 6985h 6895h 5216h 5126h 6226 3326h 3236h 5546h 5456h 6556 3656h "
        "3566h 5876h 5786h 6886 3986h 3896h 1317h 4327h 1137h 4237h 5337 1647h "
        "4657h 1467h 4567h 5667 1977h 4987h 1797h 4897h 5997 4318h 2328h 4138h "
        "2238h 6338 4648h 2658h 4468h 2568h 6668 4978h 2988h 4798h 2898h 6998 "
        "5319h 6329h 5139h 6239h 3339 5649h 6659h 5469h 6569h 3669 5979h 6989h "
        "5799h 6899h 3999"
    ),
}


def reference_entries(dim: int, which: int) -> list[tuple[tuple[int, ...], float]]:
    """Tabulated nonzero entries of ``L{which}`` as ``(1-based index, value)``."""
    out = []
    for tok in _REFERENCE_ENTRIES[(dim, which)].split():
        half = tok.endswith("h")
        digits = tok[:-1] if half else tok
        out.append((tuple(int(c) for c in digits), 0.5 if half else 1.0))
    return out


# --------------------------------------------------------------------------
# operator matrices for given gradients
# --------------------------------------------------------------------------


def _check_pair(theta, theta_d):
    theta = np.asarray(theta, dtype=float)
    theta_d = np.asarray(theta_d, dtype=float)
    if theta.shape[-1] not in (4, 9) or theta.shape != theta_d.shape:
        raise ConfigurationError(
            f"gradient vectors must both have length 4 or 9, got "
            f"{theta.shape} and {theta_d.shape}"
        )
    return theta, theta_d, 2 if theta.shape[-1] == 4 else 3


def a1_matrix(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    dim = 2 if theta.shape[-1] == 4 else 3
    return np.einsum("rck,...k->...rc", l_matrices(dim).L1, theta)


def a_matrices(theta, theta_d):
    """Operator matrices ``(A1(theta), A2(theta_d), A3(theta_d))``.

    They satisfy, in Voigt form,
    ``(2H + A1) theta <-> D + D^T + D^T D``,
    ``2 A2 theta <-> -Dd^T D^T - D Dd`` and
    ``2 A3 A1 theta <-> -Dd^T D^T D - D^T D Dd``.
    """
    theta, theta_d, dim = _check_pair(theta, theta_d)
    L = l_matrices(dim)
    A1 = np.einsum("rck,...k->...rc", L.L1, theta)
    A2 = np.einsum("rck,...k->...rc", L.L2s, theta_d)
    A3 = _a3_from_theta_d(theta_d, dim) if theta_d.ndim == 1 else np.stack(
        [_a3_from_theta_d(t, dim) for t in theta_d.reshape(-1, dim * dim)]
    ).reshape(theta_d.shape[:-1] + (voigt_size(dim),) * 2)
    return A1, A2, A3


def a3a1_matrix(theta, theta_d) -> np.ndarray:
    """``A3(theta_d) A1(theta)`` through the L3 contraction."""
    theta, theta_d, dim = _check_pair(theta, theta_d)
    return np.einsum("rcab,...a,...b->...rc", l_matrices(dim).L3s, theta, theta_d)


# --------------------------------------------------------------------------
# strains
# --------------------------------------------------------------------------


def _f1_inverse(Dd: np.ndarray) -> np.ndarray:
    F1 = np.eye(Dd.shape[-1]) + Dd
    det = np.linalg.det(F1)
    if np.any(~(det > 1e-12)):
        raise DefectTooLargeError(
            "defect gradient makes the first deformation singular or inverted"
        )
    return np.linalg.inv(F1)


def exact_strain(D, Dd) -> np.ndarray:
    """Exact Green-Lagrange strain from the defected configuration.

    ``E2 = 1/2 F1^-T (D + D^T + D^T D + Dd^T D + D^T Dd) F1^-1``.

    Parameters
    ----------
    D, Dd : (..., d, d) arrays
        Gradients of the displacement and of the defect with respect to the
        nominal coordinates.

    Returns
    -------
    (..., s) array
        Voigt strain with engineering shear.

    Raises
    ------
    DefectTooLargeError
        If ``I + Dd`` is singular or reverses orientation.
    """
    D = np.asarray(D, dtype=float)
    Dd = np.asarray(Dd, dtype=float)
    if D.shape != Dd.shape or D.shape[-1] != D.shape[-2]:
        raise ConfigurationError("D and Dd must be square and of equal shape")
    Finv = _f1_inverse(Dd)
    Dt = np.swapaxes(D, -1, -2)
    Ddt = np.swapaxes(Dd, -1, -2)
    S = D + Dt + Dt @ D + Ddt @ D + Dt @ Dd
    E = 0.5 * np.swapaxes(Finv, -1, -2) @ S @ Finv
    return to_voigt(E)


def approx_strain(theta, theta_d, variant) -> np.ndarray:
    """Voigt strain of a polynomial (or exact) strain variant.

    N1 gives ``(H + A1/2 + A2 + A3 A1) theta``; N1t drops ``A3``; N0 gives
    the Voigt form of ``(D + D^T + D^T D + Dd^T D + D^T Dd) / 2``. ``Exact``
    dispatches to :func:`exact_strain`.
    """
    theta, theta_d, dim = _check_pair(theta, theta_d)
    strain = ModelVariant.parse(variant).strain
    if strain is StrainVariant.EXACT:
        return exact_strain(theta_to_matrix(theta), theta_to_matrix(theta_d))
    L = l_matrices(dim)
    H = h_matrix(dim)
    A1 = np.einsum("rck,...k->...rc", L.L1, theta)
    if strain is StrainVariant.N0:
        A2 = np.einsum("rck,...k->...rc", L.L1, theta_d)
    else:
        A2 = np.einsum("rck,...k->...rc", L.L2s, theta_d)
    op = H + 0.5 * A1 + A2
    if strain is StrainVariant.N1:
        op = op + a3a1_matrix(theta, theta_d)
    return np.einsum("...rc,...c->...r", op, theta)


@dataclass(frozen=True)
class NeumannBound:
    epsilon: float
    delta_lim: float
    delta_n: float


def neumann_bound(Dd, N: int) -> NeumannBound:
    """Truncation error of the Neumann series of ``(I + Dd)^-1``.

    Returns the spectral norm ``epsilon`` of ``Dd``, the bound
    ``epsilon^(N+1) / (1 - epsilon)`` and the actual spectral-norm error of
    the order-``N`` truncation. For ``epsilon >= 1`` the series may diverge:
    a ``RuntimeWarning`` is issued and the bound is ``nan``.
    """
    Dd = np.asarray(Dd, dtype=float)
    if N < 0 or int(N) != N:
        raise ConfigurationError("expansion order must be a non-negative integer")
    eps = float(np.linalg.svd(Dd, compute_uv=False)[0])
    I = np.eye(Dd.shape[0])
    partial = np.zeros_like(Dd)
    term = I.copy()
    for _ in range(int(N) + 1):
        partial += term
        term = term @ (-Dd)
    try:
        inv = np.linalg.inv(I + Dd)
        delta_n = float(np.linalg.svd(inv - partial, compute_uv=False)[0])
    except np.linalg.LinAlgError:
        delta_n = np.inf
    if eps >= 1.0:
        warnings.warn(
            f"spectral norm {eps:.3g} >= 1: Neumann series may diverge",
            RuntimeWarning,
            stacklevel=2,
        )
        return NeumannBound(eps, float("nan"), delta_n)
    return NeumannBound(eps, eps ** (N + 1) / (1.0 - eps), delta_n)
