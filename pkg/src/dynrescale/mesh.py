"""Nonuniform meshes on [0, L] per axis, fields and weighted quadrature.

Every field lives on the positive orthant; the even extension across each
coordinate plane is implicit, so integrals pick up a factor 2**n.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, TextIO, Union

import numpy as np

from .errors import ConfigError, MeshTooCoarseError, QuadratureDomainError

# splines need at least this many nodes for the origin stencils
MIN_NODES = 8


def fmt(x: float) -> str:
    """Round-trippable text form of a double."""
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise MeshTooCoarseError(f"need at least 2 nodes, got {nodes.size}")
        if nodes[0] != 0.0:
            raise ConfigError("first node must be the origin")
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise ConfigError("nodes must be finite and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def M(self) -> int:
        return self.nodes.size

    @property
    def L(self) -> float:
        return float(self.nodes[-1])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    def trapezoid_weights(self) -> np.ndarray:
        h = self.h
        w = np.zeros(self.M)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w

    def __eq__(self, other):
        return isinstance(other, Mesh1D) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


def build_graded_mesh(M: int, L: float, grading: str = "algebraic", param: float = 2.0) -> Mesh1D:
    """Nodes on [0, L] clustered toward the origin.

    ``grading`` is one of ``uniform``, ``algebraic`` (nodes L*(j/(M-1))**p with
    ``param`` = p >= 1) or ``geometric`` (spacings grow by ``param`` = r > 1).
    """
    M = int(M)
    if M < 2:
        raise MeshTooCoarseError(f"need at least 2 nodes, got {M}")
    if not (L > 0 and np.isfinite(L)):
        raise ConfigError(f"domain half-width must be positive, got {L}")
    s = np.arange(M) / (M - 1)
    if grading == "uniform":
        nodes = L * s
    elif grading == "algebraic":
        if not param >= 1:
            raise ConfigError(f"algebraic grading needs p >= 1, got {param}")
        nodes = L * s**param
    elif grading == "geometric":
        if not param > 1:
            raise ConfigError(f"geometric grading needs r > 1, got {param}")
        r = float(param)
        h0 = L * (r - 1.0) / (r ** (M - 1) - 1.0)
        nodes = h0 * (r ** np.arange(M) - 1.0) / (r - 1.0)
    else:
        raise ConfigError(f"unknown grading {grading!r}")
    nodes[0] = 0.0
    nodes[-1] = L
    return Mesh1D(nodes)


@dataclass(frozen=True, eq=False)
class TensorMesh:
    axes: tuple

    def __post_init__(self):
        axes = tuple(self.axes)
        if len(axes) < 1:
            raise ConfigError("mesh needs at least one axis")
        for ax in axes:
            if not isinstance(ax, Mesh1D):
                raise ConfigError("axes must be Mesh1D instances")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_axis(cls, axis: Mesh1D, n: int = 1) -> "TensorMesh":
        return cls((axis,) * n)

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.M for ax in self.axes)

    def coords(self) -> tuple:
        """Open-grid coordinate arrays, one per axis, broadcastable to ``shape``."""
        return tuple(np.ix_(*[ax.nodes for ax in self.axes])) if self.n > 1 else (self.axes[0].nodes,)

    def radius(self) -> np.ndarray:
        r2 = sum(c**2 for c in self.coords())
        return np.sqrt(np.broadcast_to(r2, self.shape))

    def sample(self, func: Callable) -> np.ndarray:
        """Evaluate ``func(*coords)`` on the full grid."""
        return np.array(np.broadcast_to(func(*self.coords()), self.shape), dtype=float)

    def __eq__(self, other):
        return isinstance(other, TensorMesh) and self.axes == other.axes

    def __hash__(self):
        return hash(self.axes)

    # -- text format -------------------------------------------------------
    def write(self, fh: TextIO) -> None:
        fh.write(" ".join([str(self.n)] + [str(ax.M) for ax in self.axes]) + "\n")
        for ax in self.axes:
            for x in ax.nodes:
                fh.write(fmt(x) + "\n")

    @classmethod
    def read(cls, fh: Union[TextIO, Iterable[str]]) -> "TensorMesh":
        lines = iter(fh)
        header = next(lines).split()
        n = int(header[0])
        sizes = [int(s) for s in header[1 : 1 + n]]
        if len(sizes) != n:
            raise ConfigError("malformed mesh header")
        axes = []
        for M in sizes:
            axes.append(Mesh1D(np.array([float(next(lines)) for _ in range(M)])))
        return cls(tuple(axes))


@dataclass
class Field:
    mesh: TensorMesh
    values: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mesh.shape:
            raise ConfigError(f"field shape {self.values.shape} does not match mesh {self.mesh.shape}")

    @classmethod
    def from_function(cls, mesh: TensorMesh, func: Callable, symmetric: bool = True) -> "Field":
        return cls(mesh, mesh.sample(func), symmetric)

    def copy(self) -> "Field":
        return Field(self.mesh, self.values.copy(), self.symmetric)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def write(self, fh: TextIO) -> None:
        self.mesh.write(fh)
        for v in self.values.ravel():
            fh.write(fmt(v) + "\n")

    @classmethod
    def read(cls, fh) -> "Field":
        lines = iter(fh)
        mesh = TensorMesh.read(lines)
        size = int(np.prod(mesh.shape))
        vals = np.array([float(next(lines)) for _ in range(size)]).reshape(mesh.shape)
        return cls(mesh, vals)


WeightLike = Union[Callable, np.ndarray, float]


def _weight_array(mesh: TensorMesh, w: WeightLike) -> np.ndarray:
    if callable(w):
        with np.errstate(divide="ignore", invalid="ignore"):
            arr = w(*mesh.coords())
    else:
        arr = w
    return np.broadcast_to(np.asarray(arr, dtype=float), mesh.shape)


def quad_weighted(f: Union[Field, np.ndarray], w: WeightLike = 1.0, mesh: TensorMesh = None,
                  square: bool = True, exclude: np.ndarray = None) -> float:
    """Trapezoidal approximation of the full-space integral of f**2 * w.

    ``w`` is an array or a callable of the open-grid coordinates.  Integration
    runs over the positive orthant and is doubled once per axis for the even
    extension.  Pass ``square=False`` to integrate f * w instead.  Nodes
    flagged in the boolean array ``exclude`` contribute nothing and their
    weight values are never inspected.
    """
    if isinstance(f, Field):
        mesh, vals = f.mesh, f.values
    else:
        vals = np.asarray(f, dtype=float)
        if mesh is None:
            raise ValueError("mesh required when integrating a bare array")
    warr = _weight_array(mesh, w)
    used = np.ones(mesh.shape, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    if not np.all(np.isfinite(warr[used])):
        raise QuadratureDomainError("weight is not finite at a quadrature node")
    integrand = np.where(used, (vals**2 if square else vals) * np.where(used, warr, 0.0), 0.0)
    total = integrand
    for axis in reversed(range(mesh.n)):
        total = np.tensordot(total, mesh.axes[axis].trapezoid_weights(), axes=([axis], [0]))
    return float(total) * 2.0**mesh.n


def trapezoid_tensor_weights(mesh: TensorMesh) -> np.ndarray:
    """Product trapezoid weights on the full grid (without the 2**n factor)."""
    w = np.ones(mesh.shape)
    for i, ax in enumerate(mesh.axes):
        shape = [1] * mesh.n
        shape[i] = ax.M
        w = w * ax.trapezoid_weights().reshape(shape)
    return w
