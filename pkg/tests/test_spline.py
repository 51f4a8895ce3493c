from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import CubicSpline

from dynrescale.errors import DomainError, MeshTooCoarseError, SymmetryError
from dynrescale.mesh import Field, Mesh1D, TensorMesh, build_graded_mesh
from dynrescale.spline import (
    build_spline,
    derivative_matrices,
    eval_spline,
    field_derivative,
    origin_jet,
)

from conftest import ubar


def test_cubic_reproduction():
    ax = build_graded_mesh(20, 3.0, "uniform")
    f = lambda z: z**3 - z
    s = build_spline(ax, f(ax.nodes), even=False)
    z = np.linspace(0, 3, 1001)
    assert np.max(np.abs(s(z) - f(z))) <= 1e-10
    assert np.max(np.abs(s(z, 1) - (3 * z**2 - 1))) <= 1e-9
    assert np.max(np.abs(s(z, 2) - 6 * z)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-10, 10), min_size=4, max_size=4), M=st.integers(8, 40), p=st.floats(1.0, 3.0))
def test_cubic_reproduction_property(c, M, p):
    ax = build_graded_mesh(M, 2.0, "algebraic", p)
    f = lambda z: c[0] + c[1] * z + c[2] * z**2 + c[3] * z**3
    s = build_spline(ax, f(ax.nodes), even=False)
    z = np.linspace(0, 2, 57)
    scale = 1 + sum(abs(v) for v in c) * 8
    assert np.max(np.abs(s(z) - f(z))) <= 1e-10 * scale


def test_even_closure_zero_slope():
    ax = build_graded_mesh(500, 100.0)
    s = build_spline(ax, ubar(ax.nodes), even=True)
    assert abs(s(0.0, 1)) <= 1e-12


def test_matches_scipy_clamped():
    ax = build_graded_mesh(50, 20.0, "algebraic", 1.7)
    y = np.cos(ax.nodes) * np.exp(-ax.nodes / 5)
    ours = build_spline(ax, y, even=True)
    ref = CubicSpline(ax.nodes, y, bc_type=((1, 0.0), "not-a-knot"))
    z = np.linspace(0, 20, 777)
    np.testing.assert_allclose(ours(z), ref(z), rtol=0, atol=1e-12)
    np.testing.assert_allclose(ours(z, 2), ref(z, 2), rtol=0, atol=1e-10)


def test_matches_scipy_not_a_knot():
    ax = build_graded_mesh(30, 5.0, "geometric", 1.1)
    y = np.sin(ax.nodes)
    ours = build_spline(ax, y, even=False)
    ref = CubicSpline(ax.nodes, y, bc_type="not-a-knot")
    z = np.linspace(0, 5, 333)
    np.testing.assert_allclose(ours(z, 1), ref(z, 1), rtol=0, atol=1e-11)


def test_matches_scipy_odd_closure():
    ax = build_graded_mesh(40, 6.0, "algebraic", 1.5)
    y = np.sin(ax.nodes)
    ours = build_spline(ax, y, even="odd")
    ref = CubicSpline(ax.nodes, y, bc_type=((2, 0.0), "not-a-knot"))
    z = np.linspace(0, 6, 313)
    np.testing.assert_allclose(ours(z), ref(z), rtol=0, atol=1e-12)


def test_fourth_order_convergence():
    errs = []
    for M in (40, 80):
        ax = build_graded_mesh(M, np.pi, "uniform")
        s = build_spline(ax, np.sin(ax.nodes), even=False)
        z = 0.5 * (ax.nodes[1:] + ax.nodes[:-1])
        errs.append(np.max(np.abs(s(z) - np.sin(z))))
    assert errs[0] / errs[1] >= 14


def test_c2_continuity():
    ax = build_graded_mesh(60, 30.0, "algebraic", 2.0)
    s = build_spline(ax, np.exp(-ax.nodes**2 / 20), even=True)
    c = s.coeffs
    h = ax.h[:-1]
    left = 2 * c[:-1, 2] + 6 * c[:-1, 3] * h
    right = 2 * c[1:, 2]
    scale = np.max(np.abs(right))
    assert np.max(np.abs(left - right)) <= 1e-9 * scale


def test_eval_examples():
    ax = build_graded_mesh(20, 1.0, "uniform")
    s = build_spline(ax, ax.nodes**2, even=True)
    assert abs(s(0.3, 2) - 2.0) <= 1e-9
    ax = build_graded_mesh(500, 100.0, "algebraic", 2.0)
    s = build_spline(ax, ubar(ax.nodes), even=True)
    assert abs(s(0.0, 2) + 0.25) <= 1e-6
    # sqrt(8) is not a node; interpolation error at this spacing is ~2e-10
    assert abs(s(np.sqrt(8.0)) - 0.5) <= 1e-9
    fine = build_graded_mesh(2000, 100.0, "algebraic", 2.0)
    assert abs(build_spline(fine, ubar(fine.nodes))(np.sqrt(8.0)) - 0.5) <= 1e-10


def test_eval_domain():
    ax = build_graded_mesh(10, 1.0)
    s = build_spline(ax, ax.nodes)
    with pytest.raises(DomainError):
        eval_spline(s, 1.5)
    with pytest.raises(DomainError):
        s(-0.1)
    with pytest.raises(ValueError):
        s(0.5, 3)


def test_too_coarse():
    ax = build_graded_mesh(7, 1.0)
    with pytest.raises(MeshTooCoarseError):
        build_spline(ax, ax.nodes)
    with pytest.raises(MeshTooCoarseError):
        origin_jet(Field.from_function(TensorMesh.from_axis(ax), lambda z: 1 + z))


def test_derivative_matrices_readonly_and_cached():
    ax = build_graded_mesh(30, 3.0)
    D1, D2 = derivative_matrices(ax)
    assert derivative_matrices(Mesh1D(ax.nodes.copy()))[0] is D1
    with pytest.raises(ValueError):
        D1[0, 0] = 1.0


def test_origin_jet_profile_1d():
    m = TensorMesh.from_axis(build_graded_mesh(500, 100.0, "algebraic", 2.0))
    jet = origin_jet(Field.from_function(m, ubar))
    assert abs(jet.d0 - 1) <= 1e-4
    assert abs(jet.d2[0] + 0.25) <= 1e-4
    assert abs(jet.d4[0, 0] - 0.375) <= 1e-4


@pytest.mark.parametrize("method", ["quartic", "octic"])
@pytest.mark.parametrize("M,L", [(500, 100.0), (2000, 100.0), (8000, 100.0), (100, 1.0)])
def test_origin_jet_robust_to_fine_meshes(method, M, L):
    m = TensorMesh.from_axis(build_graded_mesh(M, L, "algebraic", 2.0))
    jet = origin_jet(Field.from_function(m, ubar), method)
    assert abs(jet.d4[0, 0] - 0.375) <= 1e-4


def test_origin_jet_profile_2d():
    m = TensorMesh.from_axis(build_graded_mesh(60, 10.0, "algebraic", 2.0), 2)
    jet = origin_jet(Field.from_function(m, ubar))
    assert abs(jet.d4[0, 1] - 0.125) <= 1e-3
    assert jet.d4[0, 1] == jet.d4[1, 0]
    np.testing.assert_allclose(jet.d2, -0.25, atol=1e-4)


def test_origin_jet_monomial():
    m = TensorMesh.from_axis(build_graded_mesh(500, 100.0, "algebraic", 2.0))
    jet = origin_jet(Field.from_function(m, lambda z: 1 + z**4))
    assert jet.d0 == 1.0
    assert abs(jet.d2[0]) <= 1e-6
    assert abs(jet.d4[0, 0] - 24) <= 1e-6


def test_origin_jet_tensor_product_mixed():
    # u = (1 + x^2)(1 + 2 y^2): u_xxyy(0) = 2 * 4 = 8
    m = TensorMesh((build_graded_mesh(40, 3.0), build_graded_mesh(50, 4.0)))
    jet = origin_jet(Field.from_function(m, lambda x, y: (1 + x**2) * (1 + 2 * y**2)))
    assert abs(jet.d4[0, 1] - 8.0) <= 1e-6
    np.testing.assert_allclose(jet.d2, [2.0, 4.0], atol=1e-9)


def test_origin_jet_ignores_odd_noise():
    m = TensorMesh.from_axis(build_graded_mesh(200, 50.0))
    f = Field.from_function(m, ubar)
    g = Field(m, f.values + 1e-300 * m.axes[0].nodes)
    a, b = origin_jet(f), origin_jet(g)
    assert a.d0 == b.d0 and np.array_equal(a.d2, b.d2) and np.array_equal(a.d4, b.d4)


def test_origin_jet_requires_even():
    m = TensorMesh.from_axis(build_graded_mesh(20, 5.0))
    with pytest.raises(SymmetryError):
        origin_jet(Field.from_function(m, ubar, symmetric=False))


@pytest.mark.parametrize("method", ["quartic", "octic"])
def test_d4_second_order_convergence(method):
    # refinement until the fit window, not the node count, limits accuracy
    f = lambda z: 1.0 / (1.0 + z * z)
    errs = []
    for M in (20, 40, 80):
        m = TensorMesh.from_axis(build_graded_mesh(M, 10.0, "algebraic", 2.0))
        errs.append(abs(origin_jet(Field.from_function(m, f), method).d4[0, 0] - 24.0))
    assert errs[0] / errs[1] >= 4 and errs[1] / errs[2] >= 4


def test_field_derivative_second():
    m = TensorMesh.from_axis(build_graded_mesh(400, 40.0), 2)
    f = Field.from_function(m, lambda x, y: np.exp(-(x**2) / 4) * np.cos(y / 3))
    x, y = m.coords()
    exact = (x**2 / 4 - 0.5) * np.exp(-(x**2) / 4) * np.cos(y / 3)
    assert np.max(np.abs(field_derivative(f, 0, 2) - exact)) < 1e-4
