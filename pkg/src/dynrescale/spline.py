"""Cubic splines on nonuniform meshes and origin derivatives of even fields.

The spline is parametrized by its nodal slopes.  Even data uses the clamped
closure s'(0) = 0, which is exactly the spline of the reflected data on the
mirrored knots; the outer end (and the origin, for non-even data) uses the
not-a-knot closure.  Because nodal derivatives are linear in the data, the
per-mesh derivative matrices are cached and reused by the time stepper.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, MeshTooCoarseError, SymmetryError
from .mesh import MIN_NODES, Field, Mesh1D

# (polynomial degree, minimum node count, minimum window) of the least-squares
# even fits at the origin; the window keeps roundoff in check on fine meshes
JET_FITS = {"quartic": (4, 6, 0.02), "octic": (8, 8, 0.05)}


def _closure(even) -> str:
    if even is True:
        return "even"
    if even is False or even is None:
        return "free"
    if even not in ("even", "odd", "free"):
        raise ValueError(f"unknown origin closure {even!r}")
    return even


def _slope_system(x: np.ndarray, closure: str):
    """Banded matrix A and dense matrix B with A @ slopes = B @ y."""
    M = x.size
    dx = np.diff(x)
    # secant operator: delta = S @ y
    S = np.zeros((M - 1, M))
    idx = np.arange(M - 1)
    S[idx, idx] = -1.0 / dx
    S[idx, idx + 1] = 1.0 / dx

    ab = np.zeros((3, M))
    B = np.zeros((M, M))
    # interior rows
    ab[1, 1:-1] = 2.0 * (dx[:-1] + dx[1:])
    ab[0, 2:] = dx[:-1]
    ab[2, :-2] = dx[1:]
    B[1:-1] = 3.0 * (dx[1:, None] * S[:-1] + dx[:-1, None] * S[1:])

    if closure == "even":
        ab[1, 0] = 1.0
        ab[0, 1] = 0.0
    elif closure == "odd":
        # odd reflection: s''(0) = 0
        ab[1, 0] = 2.0
        ab[0, 1] = 1.0
        B[0] = 3.0 * S[0]
    else:
        d = x[2] - x[0]
        ab[1, 0] = dx[1]
        ab[0, 1] = d
        B[0] = ((dx[0] + 2.0 * d) * dx[1] * S[0] + dx[0] ** 2 * S[1]) / d

    d = x[-1] - x[-3]
    ab[1, -1] = dx[-2]
    ab[2, -2] = d
    B[-1] = (dx[-1] ** 2 * S[-2] + (2.0 * d + dx[-1]) * dx[-2] * S[-1]) / d
    return ab, B, S


def derivative_matrices(mesh: Mesh1D, even=True):
    """Matrices (D1, D2) mapping nodal values to nodal spline derivatives.

    ``even`` selects the origin closure: True/"even" (s'(0) = 0), "odd"
    (s''(0) = 0) or False/"free" (not-a-knot).
    """
    return _derivative_matrices(mesh, _closure(even))


@lru_cache(maxsize=32)
def _derivative_matrices(mesh: Mesh1D, closure: str):
    if mesh.M < MIN_NODES:
        raise MeshTooCoarseError(f"spline needs at least {MIN_NODES} nodes, got {mesh.M}")
    x = mesh.nodes
    ab, B, S = _slope_system(x, closure)
    D1 = solve_banded((1, 1), ab, B)
    if closure == "even":
        D1[0] = 0.0
    h = np.diff(x)[:, None]
    D2 = np.empty_like(D1)
    D2[:-1] = 2.0 * (3.0 * S - 2.0 * D1[:-1] - D1[1:]) / h
    D2[-1] = (-6.0 * S[-1] + 2.0 * D1[-2] + 4.0 * D1[-1]) / h[-1]
    D1.setflags(write=False)
    D2.setflags(write=False)
    return D1, D2


@dataclass(frozen=True, eq=False)
class SplineCoeffs:
    """Piecewise cubic c0 + c1 t + c2 t^2 + c3 t^3 with t = z - z_j on [z_j, z_{j+1}]."""

    mesh: Mesh1D
    coeffs: np.ndarray  # shape (M - 1, 4)
    closure: str

    def __call__(self, z, order: int = 0):
        return eval_spline(self, z, order)


def build_spline(mesh: Mesh1D, values, even=True) -> SplineCoeffs:
    y = np.asarray(values, dtype=float)
    if mesh.M < MIN_NODES:
        raise MeshTooCoarseError(f"spline needs at least {MIN_NODES} nodes, got {mesh.M}")
    if y.shape != (mesh.M,):
        raise ValueError(f"expected {mesh.M} values, got shape {y.shape}")
    D1, _ = derivative_matrices(mesh, even)
    m = D1 @ y
    h = mesh.h
    delta = np.diff(y) / h
    c = np.empty((mesh.M - 1, 4))
    c[:, 0] = y[:-1]
    c[:, 1] = m[:-1]
    c[:, 2] = (3.0 * delta - 2.0 * m[:-1] - m[1:]) / h
    c[:, 3] = (m[:-1] + m[1:] - 2.0 * delta) / h**2
    c.setflags(write=False)
    return SplineCoeffs(mesh, c, _closure(even))


def eval_spline(spline: SplineCoeffs, z, order: int = 0):
    """Value (order 0) or first/second derivative of the spline at z in [0, L]."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    zz = np.asarray(z, dtype=float)
    nodes = spline.mesh.nodes
    if np.any(~np.isfinite(zz)) or np.any(zz < 0.0) or np.any(zz > nodes[-1]):
        raise DomainError(f"evaluation point outside [0, {nodes[-1]}]")
    j = np.clip(np.searchsorted(nodes, zz, side="right") - 1, 0, nodes.size - 2)
    t = zz - nodes[j]
    c0, c1, c2, c3 = spline.coeffs[j].T
    if order == 0:
        out = c0 + t * (c1 + t * (c2 + t * c3))
    elif order == 1:
        out = c1 + t * (2.0 * c2 + 3.0 * t * c3)
    else:
        out = 2.0 * c2 + 6.0 * t * c3
    return float(out) if np.ndim(out) == 0 else out


def apply_along(D: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    """Apply a nodal operator along one axis of a tensor field."""
    if values.ndim == 1:
        return D @ values
    return np.moveaxis(np.tensordot(D, values, axes=([1], [axis])), 0, axis)


def field_derivative(field: Field, axis: int, order: int) -> np.ndarray:
    """Nodal spline derivative of an even field along one axis."""
    D1, D2 = derivative_matrices(field.mesh.axes[axis], True)
    return apply_along(D1 if order == 1 else D2, field.values, axis)


@dataclass(frozen=True)
class OriginJet:
    d0: float
    d2: np.ndarray  # u_ii(0)
    d4: np.ndarray  # u_iijj(0), symmetric n x n


def fit_node_count(nodes: np.ndarray, k: int, window: float = 0.0) -> int:
    """At least k nodes, extended to every node in [0, window]."""
    return min(nodes.size, max(k, int(np.searchsorted(nodes, window, side="right"))))


def even_poly_fit(nodes: np.ndarray, values: np.ndarray, degree: int = 4, k: int = 6) -> np.ndarray:
    """Least-squares coefficients (c0, c2, c4, ...) of an even polynomial on the first k nodes."""
    z = nodes[:k]
    powers = np.arange(0, degree + 1, 2)
    # scaled monomials keep the fit conditioned when z is tiny
    V = (z[:, None] / z[-1]) ** powers
    coef, *_ = np.linalg.lstsq(V, values[:k], rcond=None)
    return coef / z[-1] ** powers


def _origin_line(values: np.ndarray, axis: int) -> np.ndarray:
    idx = [0] * values.ndim
    idx[axis] = slice(None)
    return values[tuple(idx)]


def _line_second_derivative(axis: Mesh1D, line: np.ndarray, method: str) -> float:
    """Second derivative at 0 of an even line of data (used for mixed derivatives)."""
    if method == "spline":
        return float(derivative_matrices(axis, True)[1][0] @ line)
    if method not in JET_FITS:
        raise ValueError(f"unknown jet method {method!r}")
    degree, k, window = JET_FITS[method]
    nodes = axis.nodes
    # two degrees lower: the line already holds second derivatives
    c = even_poly_fit(nodes, line, degree - 2, fit_node_count(nodes, k, window))
    return float(2.0 * c[1])


def origin_jet(field: Field, method: str = "quartic") -> OriginJet:
    """Value, second and fourth derivatives at the origin of an even field.

    ``method="quartic"`` takes u_iiii(0) from an even quartic fitted to at
    least six nodes, ``"octic"`` from an even octic on at least eight; on fine
    meshes the fit extends over a fixed window of z (see JET_FITS).
    ``"spline"`` applies the spline second derivative twice (inaccurate on
    strongly graded meshes, kept for comparison).  Mixed u_iijj(0) takes the
    axis-j second derivative at 0 of the line of axis-i second derivatives,
    from an even fit two degrees lower (or the spline for ``"spline"``),
    symmetrized over (i, j).
    """
    if not field.symmetric:
        raise SymmetryError("origin jet requires an even field")
    mesh = field.mesh
    n = mesh.n
    for ax in mesh.axes:
        if ax.M < MIN_NODES:
            raise MeshTooCoarseError(f"spline needs at least {MIN_NODES} nodes, got {ax.M}")
    vals = field.values
    d0 = float(vals[(0,) * n])
    d2 = np.empty(n)
    d4 = np.empty((n, n))
    second = [field_derivative(field, i, 2) for i in range(n)]
    for i in range(n):
        d2[i] = second[i][(0,) * n]
        for j in range(n):
            if i == j:
                if method in JET_FITS:
                    degree, k, window = JET_FITS[method]
                    nodes = mesh.axes[i].nodes
                    c = even_poly_fit(nodes, _origin_line(vals, i), degree, fit_node_count(nodes, k, window))
                    d4[i, i] = 24.0 * c[2]
                elif method == "spline":
                    _, D2 = derivative_matrices(mesh.axes[i], True)
                    d4[i, i] = D2[0] @ _origin_line(second[i], i)
                else:
                    raise ValueError(f"unknown jet method {method!r}")
            elif j > i:
                a = _line_second_derivative(mesh.axes[j], _origin_line(second[i], j), method)
                b = _line_second_derivative(mesh.axes[i], _origin_line(second[j], i), method)
                d4[i, j] = d4[j, i] = 0.5 * (a + b)
    return OriginJet(d0, d2, d4)
