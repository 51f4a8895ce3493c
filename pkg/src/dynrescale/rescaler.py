"""Dynamic rescaling stepper for u_t = Lap u + u^2.

The renormalized field obeys

    u_tau = c_u u - sum_i c_{l,i} z_i u_i + u^2 + sum_i lambda_i u_ii,

with c_u, c_{l,i} chosen each step so that u(0) and u_ii(0) stay frozen.
Space is discretized with nodal cubic-spline derivatives, time with classical
RK4; log(lambda_i) is advanced alongside the field so lambda stays positive.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalBlowupError, SingularNormalizationError
from .mesh import Field, TensorMesh
from .spline import OriginJet, apply_along, derivative_matrices, origin_jet

logger = logging.getLogger(__name__)

EPS_V = 1e-14
MAX_RETRIES = 5


def profile_values(coords) -> np.ndarray:
    r2 = sum(np.asarray(c) ** 2 for c in coords)
    return 1.0 / (1.0 + r2 / 8.0)


class SpatialOperator:
    """Nodal first/second derivatives of even fields on a tensor mesh.

    With ``subtract_profile`` the splines act on u_hat - ubar only and the
    profile contributes its exact derivatives
    ubar_i = -z_i ubar^2 / 4,  ubar_ii = -ubar^2 / 4 + z_i^2 ubar^3 / 8.
    """

    def __init__(self, mesh: TensorMesh, subtract_profile: bool = True):
        self.mesh = mesh
        self.subtract_profile = subtract_profile
        self.coords = mesh.coords()
        self.mats = [derivative_matrices(ax, True) for ax in mesh.axes]
        ub = np.broadcast_to(profile_values(self.coords), mesh.shape)
        self.ubar = np.array(ub)
        self.ubar_1 = [np.broadcast_to(-c * ub**2 / 4.0, mesh.shape) for c in self.coords]
        self.ubar_2 = [np.broadcast_to(-(ub**2) / 4.0 + c**2 * ub**3 / 8.0, mesh.shape) for c in self.coords]

    def perturbation(self, u: np.ndarray) -> np.ndarray:
        return u - self.ubar if self.subtract_profile else u

    def d1(self, u: np.ndarray, axis: int, pert: np.ndarray = None) -> np.ndarray:
        pert = self.perturbation(u) if pert is None else pert
        out = apply_along(self.mats[axis][0], pert, axis)
        return out + self.ubar_1[axis] if self.subtract_profile else out

    def d2(self, u: np.ndarray, axis: int, pert: np.ndarray = None) -> np.ndarray:
        pert = self.perturbation(u) if pert is None else pert
        out = apply_along(self.mats[axis][1], pert, axis)
        return out + self.ubar_2[axis] if self.subtract_profile else out

    def origin_d2(self, u: np.ndarray, axis: int) -> float:
        """Second derivative at the origin of a field with no profile part."""
        D2 = self.mats[axis][1]
        idx = [0] * u.ndim
        idx[axis] = slice(None)
        return float(D2[0] @ u[tuple(idx)])


@dataclass(frozen=True)
class NormalizationConstants:
    c_u_hat: float
    c_l_hat: np.ndarray

    @property
    def c_u(self) -> float:
        """Deviation from the profile value -1."""
        return self.c_u_hat + 1.0

    @property
    def c_l(self) -> np.ndarray:
        return self.c_l_hat - 0.5


@dataclass
class RescaleState:
    """Full dynamic-rescaling state.

    ``cl_integrals`` start at -log C_l(0) so that C_l = exp(-cl_integrals)
    also covers an initial spatial rescaling; with lambda(0) = C_u(0) it is 0.
    """

    u_hat: Field
    lam: np.ndarray
    tau: float = 0.0
    t_phys: float = 0.0
    cu_integral: float = 0.0
    cl_integrals: np.ndarray = None
    Cu0: float = 1.0
    step: int = 0
    # origin values at tau = 0, kept for the drift monitors
    ref_d0: Optional[float] = None
    ref_d2: Optional[np.ndarray] = None

    def __post_init__(self):
        self.lam = np.array(self.lam, dtype=float).reshape(-1)
        n = self.u_hat.mesh.n
        if self.lam.size == 1 and n > 1:
            self.lam = np.full(n, self.lam[0])
        if self.lam.size != n:
            raise ValueError(f"need {n} lambda values, got {self.lam.size}")
        if self.cl_integrals is None:
            self.cl_integrals = 0.5 * np.log(self.lam / self.Cu0)
        self.cl_integrals = np.array(self.cl_integrals, dtype=float).reshape(n)

    @classmethod
    def initial(cls, u_hat: Field, lam, Cu0: float = 1.0, jet_method: str = "octic") -> "RescaleState":
        state = cls(u_hat=u_hat, lam=lam, Cu0=Cu0)
        jet = field_jet(u_hat, jet_method)
        state.ref_d0 = jet.d0
        state.ref_d2 = jet.d2.copy()
        return state

    @property
    def n(self) -> int:
        return self.u_hat.mesh.n

    @property
    def Cu(self) -> float:
        return self.Cu0 * math.exp(self.cu_integral)

    @property
    def log_Cu(self) -> float:
        return math.log(self.Cu0) + self.cu_integral

    @property
    def Cl(self) -> np.ndarray:
        return np.exp(-self.cl_integrals)

    def lambda_consistency(self) -> float:
        """Max relative mismatch between lambda_i and C_u / C_{l,i}^2 (in log form)."""
        log_ratio = self.log_Cu + 2.0 * self.cl_integrals
        return float(np.max(np.abs(np.expm1(np.log(self.lam) - log_ratio))))

    def copy(self) -> "RescaleState":
        return replace(
            self,
            u_hat=self.u_hat.copy(),
            lam=self.lam.copy(),
            cl_integrals=self.cl_integrals.copy(),
            ref_d2=None if self.ref_d2 is None else self.ref_d2.copy(),
        )


def normalization(state_or_lam, jet: OriginJet) -> NormalizationConstants:
    """Scaling rates that freeze u(0) and u_ii(0) for the current lambda."""
    lam = np.asarray(getattr(state_or_lam, "lam", state_or_lam), dtype=float).reshape(-1)
    d0, d2, d4 = jet.d0, np.asarray(jet.d2), np.asarray(jet.d4)
    if d0 == 0.0 or not np.isfinite(d0):
        raise SingularNormalizationError("u(0) = 0: normalization is singular")
    if np.any(d2 == 0.0) or not np.all(np.isfinite(d2)):
        raise SingularNormalizationError("u_ii(0) = 0: normalization is singular")
    c_u = -d0 - float(np.dot(lam, d2)) / d0
    c_l = c_u / 2.0 + d0 + (d4 @ lam) / (2.0 * d2)
    if not (np.isfinite(c_u) and np.all(np.isfinite(c_l))):
        raise SingularNormalizationError("non-finite normalization constants")
    return NormalizationConstants(float(c_u), np.asarray(c_l, dtype=float))


def profile_jet(n: int) -> OriginJet:
    """Exact origin jet of the radial profile (1 + |z|^2/8)^-1."""
    d4 = np.full((n, n), 1.0 / 8.0)
    np.fill_diagonal(d4, 3.0 / 8.0)
    return OriginJet(1.0, np.full(n, -0.25), d4)


def field_jet(u_hat: Field, method: str = "octic", subtract_profile: bool = True) -> OriginJet:
    """Origin jet of u_hat, optionally as exact profile jet plus the jet of u_hat - ubar."""
    if not subtract_profile:
        return origin_jet(u_hat, method)
    mesh = u_hat.mesh
    pert = Field(mesh, u_hat.values - profile_values(mesh.coords()), u_hat.symmetric)
    pj, base = origin_jet(pert, method), profile_jet(mesh.n)
    return OriginJet(pj.d0 + base.d0, pj.d2 + base.d2, pj.d4 + base.d4)


def discrete_normalization(op: SpatialOperator, u: np.ndarray, lam) -> NormalizationConstants:
    """Rates that make the discrete u(0) and u_ii(0) exactly stationary.

    The right-hand side is affine in (c_u, c_l): rhs = c_u u - sum_i c_i A_i + N.
    Requiring rhs(0) = 0 and (D2_i rhs)(0) = 0 decouples axis by axis because
    A_j vanishes on the line z_j = 0.  In the continuum limit this reduces to
    the closed-form jet formula.
    """
    lam = np.asarray(lam, dtype=float)
    n = op.mesh.n
    origin = (0,) * n
    pert = op.perturbation(u)
    N = u * u
    for i in range(n):
        N = N + lam[i] * op.d2(u, i, pert)
    d0 = float(u[origin])
    if d0 == 0.0 or not np.isfinite(d0):
        raise SingularNormalizationError("u(0) = 0: normalization is singular")
    c_u = -float(N[origin]) / d0
    c_l = np.empty(n)
    for i in range(n):
        A = op.coords[i] * op.d1(u, i, pert)
        denom = op.origin_d2(A, i)
        if denom == 0.0 or not np.isfinite(denom):
            raise SingularNormalizationError("u_ii(0) = 0: normalization is singular")
        c_l[i] = (c_u * op.origin_d2(u, i) + op.origin_d2(N, i)) / denom
    if not (np.isfinite(c_u) and np.all(np.isfinite(c_l))):
        raise SingularNormalizationError("non-finite normalization constants")
    return NormalizationConstants(c_u, c_l)


def _rhs_values(op: SpatialOperator, u: np.ndarray, c: NormalizationConstants, lam) -> np.ndarray:
    # callers check finiteness, so overflow is reported there instead of warned about
    with np.errstate(over="ignore", invalid="ignore"):
        out = c.c_u_hat * u + u * u
        pert = op.perturbation(u)
        for i in range(op.mesh.n):
            if c.c_l_hat[i] != 0.0:
                out -= c.c_l_hat[i] * op.coords[i] * op.d1(u, i, pert)
            if lam[i] != 0.0:
                out += lam[i] * op.d2(u, i, pert)
    return out


_OPERATORS: dict = {}


def spatial_operator(mesh: TensorMesh, subtract_profile: bool = True) -> SpatialOperator:
    key = (mesh, subtract_profile)
    if key not in _OPERATORS:
        if len(_OPERATORS) > 16:
            _OPERATORS.clear()
        _OPERATORS[key] = SpatialOperator(mesh, subtract_profile)
    return _OPERATORS[key]


def _as_lambda(lam, n: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size == 1 and n > 1:
        lam = np.full(n, lam[0])
    return lam


def rhs(u_hat: Field, c: NormalizationConstants, lam: Sequence[float], subtract_profile: bool = True) -> Field:
    """Pointwise right-hand side of the renormalized equation."""
    lam = _as_lambda(lam, u_hat.mesh.n)
    vals = _rhs_values(spatial_operator(u_hat.mesh, subtract_profile), u_hat.values, c, lam)
    if not np.all(np.isfinite(vals)):
        raise NumericalBlowupError("non-finite right-hand side")
    return Field(u_hat.mesh, vals, u_hat.symmetric)


def cfl_timestep(state_or_mesh, c: NormalizationConstants, safety: float = 0.4, lam=None) -> float:
    """Explicit step bound for the advection-diffusion part.

    Advection uses the local transport speed |c_{l,i}| z on each interval
    (for a uniform mesh this equals |c_{l,i}| L on the last interval);
    diffusion uses h^2 / (2 sum_i lambda_i).
    """
    if isinstance(state_or_mesh, RescaleState):
        mesh = state_or_mesh.u_hat.mesh
        lam = state_or_mesh.lam if lam is None else lam
    else:
        mesh = state_or_mesh
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size == 1 and mesh.n > 1:
        lam = np.full(mesh.n, lam[0])
    if not 0.0 < safety <= 1.0:
        raise ValueError(f"safety must lie in (0, 1], got {safety}")
    diff_coef = 2.0 * float(np.sum(lam)) + EPS_V
    bound = math.inf
    for i, ax in enumerate(mesh.axes):
        h = ax.h
        speed = np.maximum(abs(c.c_l_hat[i]) * ax.nodes[1:], EPS_V)
        bound = min(bound, float(np.min(h / speed)), float(np.min(h * h)) / diff_coef)
    return safety * bound


@dataclass
class Stepper:
    """RK4 advance of (u_hat, log lambda_i) with per-step normalization.

    ``normalization`` selects the closed-form jet formula (``"jet"``) or the
    discretely exact freeze of u(0), u_ii(0) (``"discrete"``).
    ``stage_refresh`` (default) recomputes lambda and the constants at every
    RK4 stage; switched off, the constants are frozen at the start of the
    step and the scaling ODEs reduce to forward Euler.  ``freeze_field`` holds u_hat
    fixed and integrates only the scaling ODEs (pure-ODE mode).
    """

    normalization: str = "discrete"
    jet_method: str = "octic"
    subtract_profile: bool = True
    stage_refresh: bool = True
    freeze_field: bool = False
    safety: float = 0.4
    max_retries: int = MAX_RETRIES

    def __post_init__(self):
        if self.normalization not in ("jet", "discrete"):
            raise ValueError(f"unknown normalization mode {self.normalization!r}")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError(f"safety must lie in (0, 1], got {self.safety}")

    def operator(self, mesh: TensorMesh) -> SpatialOperator:
        return spatial_operator(mesh, self.subtract_profile)

    def jet(self, u_hat: Field) -> OriginJet:
        return field_jet(u_hat, self.jet_method, self.subtract_profile)

    def constants(self, u_hat: Field, lam) -> NormalizationConstants:
        lam = _as_lambda(lam, u_hat.mesh.n)
        if self.normalization == "discrete":
            return discrete_normalization(self.operator(u_hat.mesh), u_hat.values, lam)
        return normalization(lam, self.jet(u_hat))

    def timestep(self, state: RescaleState, c: Optional[NormalizationConstants] = None) -> float:
        if c is None:
            c = self.constants(state.u_hat, state.lam)
        return cfl_timestep(state, c, self.safety)

    def rk4_step(self, state: RescaleState, dt: float) -> RescaleState:
        """Classical RK4 on (u_hat, log lambda); the input state is never modified."""
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        mesh = state.u_hat.mesh
        op = self.operator(mesh)
        u0 = state.u_hat.values
        with np.errstate(divide="ignore"):  # lambda = 0 is the inviscid limit
            loglam0 = np.log(state.lam)
        c = self.constants(state.u_hat, state.lam)
        lam = state.lam

        du_sum = np.zeros_like(u0)
        cu_sum = 0.0
        cl_sum = np.zeros(state.n)
        u = u0
        for w, a in ((1.0, 0.5), (2.0, 0.5), (2.0, 1.0), (1.0, None)):
            if self.freeze_field:
                du = None
            else:
                du = _rhs_values(op, u, c, lam)
                if not np.all(np.isfinite(du)):
                    raise NumericalBlowupError("non-finite right-hand side")
                du_sum += w * du
            cu_sum += w * c.c_u_hat
            cl_sum += w * c.c_l_hat
            if a is None:
                break
            if du is not None:
                u = u0 + a * dt * du
            if self.stage_refresh:
                lam = np.exp(loglam0 + a * dt * (2.0 * c.c_l_hat + c.c_u_hat))
                c = self.constants(Field(mesh, u, state.u_hat.symmetric), lam)

        new_u = u0.copy() if self.freeze_field else u0 + dt / 6.0 * du_sum
        if not np.all(np.isfinite(new_u)):
            raise NumericalBlowupError("non-finite field after RK4 step")
        dcu = dt / 6.0 * cu_sum
        dcl = dt / 6.0 * cl_sum
        new = replace(
            state,
            u_hat=Field(mesh, new_u, state.u_hat.symmetric),
            lam=np.exp(loglam0 + dcu + 2.0 * dcl),
            tau=state.tau + dt,
            cu_integral=state.cu_integral + dcu,
            cl_integrals=state.cl_integrals + dcl,
            step=state.step + 1,
        )
        new.t_phys = state.t_phys + 0.5 * dt * (state.Cu + new.Cu)
        return new

    def advance(self, state: RescaleState, max_dt: float = math.inf):
        """One CFL-limited step with halving retries; returns (new_state, dt)."""
        dt = min(self.timestep(state), max_dt)
        last_err = None
        for _ in range(self.max_retries + 1):
            try:
                return self.rk4_step(state, dt), dt
            except NumericalBlowupError as err:
                last_err = err
                logger.debug("step %d rejected at dt=%.3e (%s); halving", state.step, dt, err)
                dt *= 0.5
        raise NumericalBlowupError(f"step {state.step} rejected after {self.max_retries} retries: {last_err}")


def rk4_step(state: RescaleState, dt: float, **kwargs) -> RescaleState:
    return Stepper(**kwargs).rk4_step(state, dt)


def blowup_estimate(state: RescaleState):
    """Blowup time T = t + C_u and the ratio tau / |log(T - t)|."""
    Cu = state.Cu
    T_est = state.t_phys + Cu
    log_gap = abs(state.log_Cu)
    log_correction = state.tau / log_gap if log_gap > 0 else math.inf
    return T_est, log_correction
