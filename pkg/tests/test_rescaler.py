from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynrescale.errors import NumericalBlowupError, SingularNormalizationError
from dynrescale.mesh import Field, TensorMesh, build_graded_mesh
from dynrescale.rescaler import (
    NormalizationConstants,
    RescaleState,
    Stepper,
    blowup_estimate,
    cfl_timestep,
    discrete_normalization,
    normalization,
    profile_jet,
    rhs,
    spatial_operator,
)
from dynrescale.spline import OriginJet, apply_along, derivative_matrices

from conftest import ubar


def test_normalization_profile_1d():
    c = normalization([0.1], profile_jet(1))
    assert c.c_u_hat == pytest.approx(-0.975, abs=1e-15)
    assert c.c_l_hat[0] == pytest.approx(0.4375, abs=1e-15)


@pytest.mark.parametrize("lam", [0.0, 0.01, 0.3])
def test_normalization_profile_2d(lam):
    c = normalization([lam, lam], profile_jet(2))
    assert c.c_u_hat == pytest.approx(-1 + lam / 2, abs=1e-15)
    np.testing.assert_allclose(c.c_l_hat, 0.5 - 0.75 * lam, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(q=st.floats(-5, 5), lam=st.floats(0, 2))
def test_normalization_quartic_perturbation(q, lam):
    jet = OriginJet(1.0, np.array([-0.25]), np.array([[0.375 + q]]))
    c = normalization([lam], jet)
    assert c.c_l_hat[0] - 0.5 == pytest.approx(-(5 / 8 + 2 * q) * lam, abs=1e-12)


def test_normalization_singular():
    with pytest.raises(SingularNormalizationError):
        normalization([0.1], OriginJet(0.0, np.array([-0.25]), np.array([[0.375]])))
    with pytest.raises(SingularNormalizationError):
        normalization([0.1], OriginJet(1.0, np.array([0.0]), np.array([[0.375]])))


def test_rhs_steady_state(mesh_1d):
    f = Field.from_function(mesh_1d, ubar)
    r = rhs(f, NormalizationConstants(-1.0, np.array([0.5])), [0.0])
    assert np.max(np.abs(r.values)) <= 1e-8


def test_rhs_steady_state_plain_spline():
    # without profile subtraction the bound is spline truncation
    m = TensorMesh.from_axis(build_graded_mesh(500, 100.0))
    r = rhs(Field.from_function(m, ubar), NormalizationConstants(-1.0, np.array([0.5])), [0.0], False)
    assert np.max(np.abs(r.values)) <= 1e-5


def test_rhs_zero_field(mesh_1d):
    z = Field(mesh_1d, np.zeros(mesh_1d.shape))
    c = NormalizationConstants(-0.9, np.array([0.4]))
    assert np.all(rhs(z, c, [0.1], subtract_profile=False).values == 0.0)
    # with profile subtraction only spline truncation of ubar remains
    assert np.max(np.abs(rhs(z, c, [0.1]).values)) < 1e-3


def test_rhs_origin_annihilated(mesh_1d):
    f = Field.from_function(mesh_1d, ubar)
    r = rhs(f, NormalizationConstants(-0.975, np.array([0.4375])), [0.1])
    assert abs(r.values[0]) <= 1e-14


def test_rhs_nonfinite():
    m = TensorMesh.from_axis(build_graded_mesh(20, 5.0))
    vals = ubar(m.axes[0].nodes)
    vals[3] = np.inf
    with pytest.raises(NumericalBlowupError):
        rhs(Field(m, vals), NormalizationConstants(-1.0, np.array([0.5])), [0.1])


def test_discrete_normalization_freezes_origin():
    m = TensorMesh.from_axis(build_graded_mesh(300, 1e3))
    f = Field.from_function(m, lambda z: 1 / (1 + z**2 / 8 + z**4 / 10))
    op = spatial_operator(m)
    c = discrete_normalization(op, f.values, [0.7])
    r = rhs(f, c, [0.7])
    _, D2 = derivative_matrices(m.axes[0])
    pert = r.values  # the rhs has no profile part
    assert abs(r.values[0]) <= 1e-13
    assert abs(D2[0] @ pert) <= 1e-10 * np.max(np.abs(D2[0]))


def test_discrete_normalization_2d():
    m = TensorMesh.from_axis(build_graded_mesh(40, 100.0), 2)
    f = Field.from_function(m, lambda x, y: 1 / (1 + (x**2 + y**2) / 8 + x**4 / 100))
    lam = np.array([0.6, 0.8])
    c = discrete_normalization(spatial_operator(m), f.values, lam)
    r = rhs(f, c, lam).values
    assert abs(r[0, 0]) <= 1e-13
    for axis in range(2):
        _, D2 = derivative_matrices(m.axes[axis])
        line = r[:, 0] if axis == 0 else r[0, :]
        assert abs(D2[0] @ line) <= 1e-10 * np.max(np.abs(D2[0]))


def test_cfl_examples():
    m = TensorMesh.from_axis(build_graded_mesh(101, 10.0, "uniform"))
    dt = cfl_timestep(m, NormalizationConstants(-1.0, np.array([0.5])), 1.0, lam=[0.0])
    assert dt == pytest.approx(0.02, rel=1e-12)
    m2 = TensorMesh.from_axis(build_graded_mesh(101, 10.0, "uniform"), 2)
    dt = cfl_timestep(m2, NormalizationConstants(-1.0, np.array([0.0, 0.0])), 1.0, lam=[1.0, 1.0])
    assert dt == pytest.approx(0.0025, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(safety=st.floats(0.01, 1.0), cl=st.floats(-2, 2), lam=st.floats(0, 10))
def test_cfl_positive_and_linear(safety, cl, lam):
    m = TensorMesh.from_axis(build_graded_mesh(30, 50.0))
    c = NormalizationConstants(-1.0, np.array([cl]))
    dt = cfl_timestep(m, c, safety, lam=[lam])
    assert dt > 0
    assert dt == pytest.approx(safety * cfl_timestep(m, c, 1.0, lam=[lam]), rel=1e-12)


def test_cfl_rejects_bad_safety(mesh_small):
    with pytest.raises(ValueError):
        cfl_timestep(mesh_small, NormalizationConstants(-1.0, np.array([0.5])), 1.5, lam=[0.1])


def _pure_ode_error(mesh, dt):
    st_ = Stepper(normalization="jet", freeze_field=True)
    s = RescaleState.initial(Field.from_function(mesh, ubar), [1.0])
    for _ in range(int(round(1 / dt))):
        s = st_.rk4_step(s, dt)
    assert s.tau == pytest.approx(1.0, abs=1e-12)
    return abs(s.lam[0] - 0.5), s


def test_pure_ode_lambda(mesh_small):
    err, s = _pure_ode_error(mesh_small, 1e-2)
    assert err <= 1e-8
    err2, _ = _pure_ode_error(mesh_small, 5e-3)
    assert err / err2 >= 14
    assert np.array_equal(s.u_hat.values, ubar(mesh_small.axes[0].nodes))


def test_steady_state_preserved(mesh_1d):
    f = Field.from_function(mesh_1d, ubar)
    s = RescaleState(f, [0.0], cl_integrals=[0.0])
    st_ = Stepper()
    for _ in range(50):
        c = st_.constants(s.u_hat, s.lam)
        assert abs(c.c_u_hat + 1) + abs(c.c_l_hat[0] - 0.5) <= 1e-6
        s, _ = st_.advance(s)
    assert np.max(np.abs(s.u_hat.values - f.values)) <= 1e-8
    assert s.step == 50 and s.tau > 0


def test_rk4_does_not_mutate(mesh_small):
    f = Field.from_function(mesh_small, lambda z: 1 / (1 + z**2 / 8 + z**4 / 10))
    s = RescaleState.initial(f, [1.0])
    before = s.u_hat.values.copy()
    new = Stepper().rk4_step(s, 1e-4)
    assert np.array_equal(s.u_hat.values, before) and s.tau == 0.0 and s.step == 0
    assert new.step == 1 and new.tau == 1e-4


@pytest.mark.parametrize("refresh", [True, False])
def test_lambda_consistency_and_time(mesh_small, refresh):
    f = Field.from_function(mesh_small, lambda z: 1 / (1 + z**2 / 8 + z**4 / 10))
    s = RescaleState.initial(f, [1.0], Cu0=0.5)
    st_ = Stepper(stage_refresh=refresh)
    t_prev = s.t_phys
    for _ in range(200):
        s, _ = st_.advance(s)
        assert s.lambda_consistency() <= 1e-8
        assert s.t_phys > t_prev
        t_prev = s.t_phys
    assert np.all(s.lam > 0) and s.Cu > 0 and np.all(s.Cl > 0)


def test_initial_lambda_offset():
    m = TensorMesh.from_axis(build_graded_mesh(20, 10.0))
    s = RescaleState(Field.from_function(m, ubar), [0.01], Cu0=1.0)
    assert s.lambda_consistency() <= 1e-14
    assert s.Cl[0] == pytest.approx(10.0)


def test_stage_refresh_origin_drift(mesh_small):
    f = Field.from_function(mesh_small, lambda z: 1 / (1 + z**2 / 8 + z**4 / 10))
    s = RescaleState.initial(f, [1.0])
    st_ = Stepper()
    for _ in range(300):
        s, _ = st_.advance(s)
    jet = st_.jet(s.u_hat)
    assert abs(jet.d0 - s.ref_d0) <= 1e-12
    assert np.max(np.abs(jet.d2 - s.ref_d2)) <= 1e-9


def test_advance_retries(mesh_small, monkeypatch):
    s = RescaleState.initial(Field.from_function(mesh_small, ubar), [0.1])
    st_ = Stepper()
    dt0 = st_.timestep(s)
    calls = []
    real = Stepper.rk4_step

    def flaky(self, state, dt):
        calls.append(dt)
        if len(calls) < 3:
            raise NumericalBlowupError("injected")
        return real(self, state, dt)

    monkeypatch.setattr(Stepper, "rk4_step", flaky)
    new, dt = st_.advance(s)
    assert dt == pytest.approx(dt0 / 4) and new.step == 1
    calls.clear()
    monkeypatch.setattr(Stepper, "rk4_step", lambda self, state, dt: (_ for _ in ()).throw(NumericalBlowupError("x")))
    with pytest.raises(NumericalBlowupError):
        st_.advance(s)


def test_blowup_estimate():
    m = TensorMesh.from_axis(build_graded_mesh(10, 1.0))
    s = RescaleState(Field.from_function(m, ubar), [0.1], t_phys=0.9, cu_integral=-10.0, tau=10.0)
    T, corr = blowup_estimate(s)
    assert T == 0.9 + math.exp(-10.0)
    assert corr == pytest.approx(1.0)


def test_stepper_config_validation():
    with pytest.raises(ValueError):
        Stepper(normalization="implicit")
    with pytest.raises(ValueError):
        Stepper(safety=0.0)


def test_mixed_axis_operator_matches_1d():
    # a field independent of y evolves like the 1D problem along x
    ax = build_graded_mesh(60, 100.0)
    m2 = TensorMesh.from_axis(ax, 2)
    m1 = TensorMesh.from_axis(ax)
    f1 = Field.from_function(m1, lambda x: 1 / (1 + x**2 / 8 + x**4 / 10))
    f2 = Field(m2, np.repeat(f1.values[:, None], 60, axis=1))
    c = NormalizationConstants(-0.9, np.array([0.45, 0.0]))
    r2 = rhs(f2, c, [0.3, 0.2]).values
    # ubar is radial, so the 2D profile part differs; compare with plain splines
    r2p = rhs(f2, c, [0.3, 0.0], subtract_profile=False).values
    r1p = rhs(f1, NormalizationConstants(-0.9, np.array([0.45])), [0.3], subtract_profile=False).values
    np.testing.assert_allclose(r2p[:, 7], r1p, rtol=0, atol=1e-12)
    assert np.all(np.isfinite(r2))
