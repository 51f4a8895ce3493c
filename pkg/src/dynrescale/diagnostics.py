"""Weighted norms, law products and bootstrap monitors of a rescaling run.

Norms act on the perturbation u = u_hat - ubar.  The singular weight
rho = |z|^(-5-n) + 1e-3 |z|^(1-n) is integrated with the trapezoid rule away
from the origin; the corner cell [0, z_1]^n uses a local model of the
integrand and tensor Gauss-Legendre points instead of the origin node.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import SingularWeightError, UnsupportedOrderError
from .mesh import Field, TensorMesh, quad_weighted, trapezoid_tensor_weights
from .rescaler import (
    NormalizationConstants,
    RescaleState,
    Stepper,
    blowup_estimate,
    field_jet,
    profile_jet,
    profile_values,
)
from .spline import apply_along, derivative_matrices, origin_jet

logger = logging.getLogger(__name__)

GAUSS_POINTS = 10


@dataclass(frozen=True)
class WeightSpec:
    n: int = 1
    k_diag: int = 4
    mu: float = 1e-2

    def __post_init__(self):
        if self.k_diag < 1:
            raise ValueError(f"k_diag must be at least 1, got {self.k_diag}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def k_theory(self) -> int:
        """Derivative order used in the stability theory, 2n + 10."""
        return 2 * self.n + 10


def _radius(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.abs(z) if z.ndim == 0 else np.sqrt(np.sum(z**2, axis=-1))


def rho_of_radius(r, n: int):
    r = np.asarray(r, dtype=float)
    return r ** (-5.0 - n) + 1e-3 * r ** (1.0 - n)


def weight_rho(z, n: int) -> float:
    """rho(z) = |z|^(-5-n) + 1e-3 |z|^(1-n); ``z`` is a scalar radius or a point."""
    r = _radius(z)
    if np.any(r == 0.0):
        raise SingularWeightError("rho is singular at the origin")
    out = rho_of_radius(r, n)
    return float(out) if np.ndim(out) == 0 else out


def rhok_of_radius(r, k: int, n: int):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return 1.0 + 10.0 ** (-3.0 * k) * r ** (2.0 * k + 1.0 - n)


def weight_rhok(z, k: int, n: int) -> float:
    """rho_k(z) = 1 + 10^(-3k) |z|^(2k+1-n)."""
    out = rhok_of_radius(_radius(z), k, n)
    return float(out) if np.ndim(out) == 0 else out


def japanese_bracket(r):
    return np.sqrt(1.0 + np.asarray(r, dtype=float) ** 2)


# -- derivatives --------------------------------------------------------------

def partial_derivative(values: np.ndarray, mesh: TensorMesh, orders: Sequence[int]) -> np.ndarray:
    """Nodal spline derivative of an even field with the given order per axis.

    Second derivatives are applied first so every pass sees data that is even
    along its own axis; a single first derivative finishes odd orders.
    """
    out = values
    for axis, k in enumerate(orders):
        if k == 0:
            continue
        D1, D2 = derivative_matrices(mesh.axes[axis], True)
        for _ in range(k // 2):
            out = apply_along(D2, out, axis)
        if k % 2:
            out = apply_along(D1, out, axis)
    return out


def _multi_indices(n: int, j: int):
    """Multi-indices of order j with the multiplicity j!/alpha! of the full tensor."""
    for alpha in itertools.product(range(j + 1), repeat=n):
        if sum(alpha) == j:
            mult = math.factorial(j)
            for a in alpha:
                mult //= math.factorial(a)
            yield alpha, mult


def gradient_tensor_sq(values: np.ndarray, mesh: TensorMesh, j: int) -> np.ndarray:
    """|nabla^j u|^2 at every node (Frobenius norm of the derivative tensor)."""
    if j == 0:
        return values**2
    total = np.zeros(mesh.shape)
    for alpha, mult in _multi_indices(mesh.n, j):
        total += mult * partial_derivative(values, mesh, alpha) ** 2
    return total


# -- singular-weight quadrature ----------------------------------------------

def _corner_box_integral(mesh: TensorMesh, integrand: Callable) -> float:
    """Tensor Gauss-Legendre integral over [0, z_1]^n of integrand(*coords)."""
    x, w = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    pts, wts = [], []
    for ax in mesh.axes:
        a = ax.nodes[1]
        pts.append(0.5 * a * (x + 1.0))
        wts.append(0.5 * a * w)
    grids = np.ix_(*pts) if mesh.n > 1 else (pts[0],)
    vals = np.broadcast_to(integrand(*grids), tuple(GAUSS_POINTS for _ in range(mesh.n)))
    out = vals
    for i in reversed(range(mesh.n)):
        out = np.tensordot(out, wts[i], axes=([i], [0]))
    return float(out)


def rho_quadrature(g_nodes: np.ndarray, mesh: TensorMesh, box_integrand: Callable) -> float:
    """Integral over R^n of an even integrand that is singular only at the origin.

    ``g_nodes`` holds the integrand at all nodes (the origin entry is ignored)
    and ``box_integrand`` models it inside the corner cell.
    """
    g = np.array(g_nodes, dtype=float)
    origin = (0,) * mesh.n
    g[origin] = 0.0
    if not np.all(np.isfinite(g)):
        raise SingularWeightError("integrand not finite away from the origin")
    total = float(np.sum(trapezoid_tensor_weights(mesh) * g))
    # trapezoid contribution of the corner cell, replaced by the model integral
    corner = tuple(slice(0, 2) for _ in range(mesh.n))
    vol = float(np.prod([ax.nodes[1] for ax in mesh.axes]))
    total -= vol / 2.0**mesh.n * float(np.sum(g[corner]))
    total += _corner_box_integral(mesh, box_integrand)
    return total * 2.0**mesh.n


def quartic_model(d4: np.ndarray) -> Callable:
    """u ~ sum_i d4_ii z_i^4 / 24 + sum_{i<j} d4_ij z_i^2 z_j^2 / 4 near the origin."""
    d4 = np.asarray(d4, dtype=float)
    n = d4.shape[0]

    def model(*z):
        out = 0.0
        for i in range(n):
            out = out + d4[i, i] * z[i] ** 4 / 24.0
            for j in range(i + 1, n):
                out = out + d4[i, j] * z[i] ** 2 * z[j] ** 2 / 4.0
        return out

    return model


# -- norms ------------------------------------------------------------------

def _values(u) -> tuple:
    if isinstance(u, Field):
        return u.values, u.mesh
    raise TypeError("expected a Field")


def origin_vanishing_ok(u: Field, tol: float = 0.01) -> bool:
    vals = u.values
    sup = float(np.max(np.abs(vals)))
    return sup == 0.0 or abs(float(vals[(0,) * vals.ndim])) <= tol * sup


def norm_E0(u: Field, jet_method: str = "quartic") -> float:
    """Weighted L2 norm ||u||_rho of a perturbation vanishing to fourth order at 0."""
    vals, mesh = _values(u)
    if not np.any(vals):
        return 0.0
    if not origin_vanishing_ok(u):
        logger.warning("perturbation does not vanish at the origin; E0 is unreliable")
    n = mesh.n
    r = mesh.radius()
    with np.errstate(divide="ignore", invalid="ignore"):
        g = vals**2 * rho_of_radius(r, n)
    model = quartic_model(origin_jet(u, jet_method).d4)

    def box(*z):
        rr = np.sqrt(sum(c**2 for c in z))
        return model(*z) ** 2 * rho_of_radius(rr, n)

    return math.sqrt(max(rho_quadrature(g, mesh, box), 0.0))


def norm_Qj(u: Field, j: int, k_diag: Optional[int] = None) -> float:
    """||nabla^j u <z>^(j + (1-n)/2)||_2."""
    if k_diag is not None and j > k_diag:
        raise UnsupportedOrderError(f"order {j} exceeds k_diag={k_diag}")
    if j < 0:
        raise UnsupportedOrderError("negative derivative order")
    vals, mesh = _values(u)
    n = mesh.n
    weight = japanese_bracket(mesh.radius()) ** (2 * j + 1 - n)
    return math.sqrt(quad_weighted(gradient_tensor_sq(vals, mesh, j), weight, mesh, square=False))


def norm_Ek(u: Field, k: int) -> float:
    vals, mesh = _values(u)
    weight = rhok_of_radius(mesh.radius(), k, mesh.n)
    return math.sqrt(quad_weighted(gradient_tensor_sq(vals, mesh, k), weight, mesh, square=False))


def norm_E(u: Field, spec: WeightSpec, jet_method: str = "quartic") -> float:
    """Composite energy sqrt(E0^2 + mu E_k^2) with k = spec.k_diag."""
    e0 = norm_E0(u, jet_method)
    ek = norm_Ek(u, spec.k_diag)
    return math.sqrt(e0**2 + spec.mu * ek**2)


def residual_sup(u_hat: Field) -> float:
    """sup |u_hat - ubar| over the nodes."""
    return float(np.max(np.abs(u_hat.values - profile_values(u_hat.mesh.coords()))))


def perturbation(u_hat: Field) -> Field:
    return Field(u_hat.mesh, u_hat.values - profile_values(u_hat.mesh.coords()), u_hat.symmetric)


def law_products(c: NormalizationConstants, lam, tau: float):
    """((c_u + 1) tau, (1/2 - c_l,i) tau, lambda_i tau)."""
    if not tau > 0:
        raise ValueError("law products need tau > 0")
    lam = np.asarray(lam, dtype=float)
    return (c.c_u_hat + 1.0) * tau, (0.5 - np.asarray(c.c_l_hat)) * tau, lam * tau


def smoothstep_cutoff(r):
    """C^1 cutoff: 1 on [0, 1], 0 on [2, inf), 1 - 3s^2 + 2s^3 with s = r - 1 between."""
    s = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - 3.0 * s**2 + 2.0 * s**3


def error_term(lam, d4, *z):
    """Closed-form sum_i F_i of the perturbation equation at points z."""
    lam = np.asarray(lam, dtype=float)
    d4 = np.asarray(d4, dtype=float)
    n = lam.size
    r2 = sum(c**2 for c in z)
    ub = 1.0 / (1.0 + r2 / 8.0)
    chi = smoothstep_cutoff(np.sqrt(r2))
    out = 0.0
    for i in range(n):
        out = out - lam[i] * z[i] ** 2 * r2 * ub**3 / 64.0
    for j in range(n):
        coef = 0.5 * float(np.dot(lam, d4[:, j]))
        if coef:
            out = out + coef * z[j] ** 2 * (chi - ub**2)
    return out


def error_term_norm(lam, d4, mesh: TensorMesh) -> float:
    """||sum_i F_i||_rho on ``mesh``; ``d4`` holds the perturbation's u_iijj(0)."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    d4 = np.asarray(d4, dtype=float).reshape(lam.size, lam.size)
    n = mesh.n
    if not np.any(lam):
        return 0.0

    def integrand(*z):
        rr = np.sqrt(sum(c**2 for c in z))
        with np.errstate(divide="ignore", invalid="ignore"):
            return error_term(lam, d4, *z) ** 2 * rho_of_radius(rr, n)

    g = np.broadcast_to(integrand(*mesh.coords()), mesh.shape)
    return math.sqrt(max(rho_quadrature(g, mesh, integrand), 0.0))


def bootstrap_monitor(state_or_lam, E: float):
    """(1 / max lambda, E / max lambda, sum_i 1 / lambda_i)."""
    lam = np.asarray(getattr(state_or_lam, "lam", state_or_lam), dtype=float).reshape(-1)
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    gamma_inv = 1.0 / float(np.max(lam))
    return gamma_inv, E * gamma_inv, float(np.sum(1.0 / lam))


def interpolation_scan(fields: Sequence[Field], j: int, k: int, nus=(0.5, 1.0)) -> dict:
    """Empirical check of ||u||_Qj <= nu ||u||_Qk + C(nu) ||u||_Q0.

    C(nu) is fitted on the first half of ``fields`` and the inequality is then
    tested on the second half with that constant doubled.
    """
    q = np.array([[norm_Qj(f, j), norm_Qj(f, k), norm_Qj(f, 0)] for f in fields])
    half = len(fields) // 2
    out = {}
    for nu in nus:
        excess = (q[:, 0] - nu * q[:, 1]) / q[:, 2]
        C = max(float(np.max(excess[:half])), 0.0)
        ok = bool(np.all(q[half:, 0] <= nu * q[half:, 1] + 2.0 * C * q[half:, 2] + 1e-14))
        out[nu] = (C, ok)
    return out


@dataclass
class DiagnosticsRecord:
    step: int
    tau: float
    t_phys: float
    lam: np.ndarray
    c_u_hat: float
    c_l_hat: np.ndarray
    law_cu: float
    law_cl: np.ndarray
    law_lambda: np.ndarray
    residual_sup: float
    residual_times_tau: float
    E0: float
    Q: np.ndarray
    E: float
    G: float
    kappa: float
    origin_drift_d0: float
    origin_drift_d2: float
    T_est: float
    log_correction: float
    gamma_inv: float = math.nan
    origin_warning: bool = False

    def columns(self) -> list:
        n = len(self.lam)
        cols = ["step", "tau", "t_phys"]
        cols += [f"lambda_{i + 1}" for i in range(n)]
        cols += ["c_u_hat"] + [f"c_l_hat_{i + 1}" for i in range(n)]
        cols += ["law_cu"] + [f"law_cl_{i + 1}" for i in range(n)]
        cols += [f"law_lambda_{i + 1}" for i in range(n)]
        cols += ["residual_sup", "residual_times_tau", "E0"]
        cols += [f"Q{j}" for j in range(len(self.Q))]
        cols += ["E", "G", "kappa", "origin_drift_d0", "origin_drift_d2_max", "T_est", "log_correction"]
        return cols

    def row(self) -> list:
        vals = [self.step, self.tau, self.t_phys, *self.lam, self.c_u_hat, *self.c_l_hat, self.law_cu,
                *self.law_cl, *self.law_lambda, self.residual_sup, self.residual_times_tau, self.E0,
                *self.Q, self.E, self.G, self.kappa, self.origin_drift_d0, self.origin_drift_d2,
                self.T_est, self.log_correction]
        return [float(v) if not isinstance(v, (int, np.integer)) else int(v) for v in vals]


def origin_drift(state: RescaleState, jet) -> tuple:
    """Relative drift of u_hat(0) and the largest relative drift of u_hat_ii(0)."""
    if state.ref_d0 is None:
        return 0.0, 0.0
    d0 = abs(jet.d0 - state.ref_d0) / abs(state.ref_d0)
    d2 = float(np.max(np.abs(jet.d2 - state.ref_d2) / np.abs(state.ref_d2)))
    return float(d0), d2


def compute_record(state: RescaleState, stepper: Stepper, spec: WeightSpec) -> DiagnosticsRecord:
    c = stepper.constants(state.u_hat, state.lam)
    tau = state.tau
    if tau > 0:
        law_cu, law_cl, law_lam = law_products(c, state.lam, tau)
    else:
        law_cu, law_cl, law_lam = 0.0, np.zeros(state.n), np.zeros(state.n)
    res = residual_sup(state.u_hat)
    u = perturbation(state.u_hat)
    e0 = norm_E0(u)
    Q = np.array([norm_Qj(u, j) for j in range(spec.k_diag + 1)])
    E = math.sqrt(e0**2 + spec.mu * norm_Ek(u, spec.k_diag) ** 2)
    gamma_inv, G, kappa = bootstrap_monitor(state, E)
    jet = field_jet(state.u_hat, stepper.jet_method, stepper.subtract_profile)
    d0_drift, d2_drift = origin_drift(state, jet)
    T_est, log_corr = blowup_estimate(state)
    return DiagnosticsRecord(
        step=state.step, tau=tau, t_phys=state.t_phys, lam=state.lam.copy(), c_u_hat=c.c_u_hat,
        c_l_hat=np.asarray(c.c_l_hat).copy(), law_cu=float(law_cu), law_cl=np.asarray(law_cl),
        law_lambda=np.asarray(law_lam), residual_sup=res, residual_times_tau=res * tau, E0=e0, Q=Q, E=E,
        G=G, kappa=kappa, origin_drift_d0=d0_drift, origin_drift_d2=d2_drift, T_est=T_est,
        log_correction=log_corr, gamma_inv=gamma_inv, origin_warning=not origin_vanishing_ok(u),
    )
