import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbkinetic.errors import InvariantError
from lbkinetic.grid import (
    PhaseSpaceField,
    TorusGrid,
    VelocityGrid,
    d_dv,
    d_dx,
    fd4_derivative,
    kernel_basis,
    maxwellian,
    moment_table,
    moments,
    spectral_matrix,
)


@pytest.mark.parametrize("kw", [{"d_x": 3}, {"n_x": 12}, {"n_x": 2}])
def test_torus_rejects_bad_shapes(kw):
    with pytest.raises(InvariantError) as exc:
        TorusGrid(**kw)
    assert exc.value.type_name == "TorusGrid"


@pytest.mark.parametrize("kw", [{"v_max": -1.0}, {"n_v": 4}, {"d_v": 1}, {"v_max": float("nan")}])
def test_velocity_grid_rejects_bad_values(kw):
    with pytest.raises(InvariantError) as exc:
        VelocityGrid(**kw)
    assert exc.value.type_name == "VelocityGrid"


def test_homogeneous_torus_is_single_unit_node():
    t = TorusGrid(0, 8)
    assert t.n_nodes == 1
    assert t.cell_weight == 1.0


def test_torus_volume():
    t = TorusGrid(2, 8)
    assert t.n_nodes == 64
    assert t.volume == pytest.approx((2 * np.pi) ** 2)
    assert t.cell_weight * t.n_nodes == pytest.approx(t.volume)


def test_field_rejects_nonfinite_and_wrong_size(vel16):
    t = TorusGrid(1, 4)
    bad = np.zeros((4, vel16.n_nodes))
    bad[0, 0] = np.nan
    with pytest.raises(InvariantError):
        PhaseSpaceField(t, vel16, bad)
    with pytest.raises(InvariantError):
        PhaseSpaceField(t, vel16, np.zeros(7))


@pytest.mark.parametrize("d", [2, 3])
def test_maxwellian_mass_and_energy(d):
    vel = VelocityGrid(d, 48 if d == 2 else 32, 6.0)
    mu = maxwellian(vel)
    assert vel.integrate(mu) == pytest.approx(1.0, abs=1e-12)
    assert vel.integrate(vel.speed2 * mu) == pytest.approx(d / 2, abs=1e-10)


@pytest.mark.parametrize("d, n", [(2, 32), (3, 32)])
def test_kernel_basis_orthonormal(d, n):
    vel = VelocityGrid(d, n, 8.0)
    chi = np.array(kernel_basis(vel))
    gram = (chi * vel.weights) @ chi.T
    np.testing.assert_allclose(gram, np.eye(d + 2), atol=1e-12)


def test_moment_table_golden_values():
    tab = moment_table(VelocityGrid(2, 64, 8.0))
    assert max(e.error for e in tab.values()) < 1e-6
    assert tab["int v1^4 mu"].target == 0.75


def test_fd4_is_fourth_order():
    errs = []
    for n in (41, 81, 161):
        x = np.linspace(-3, 3, n)
        errs.append(np.max(np.abs(fd4_derivative(np.sin(x), x[1] - x[0]) - np.cos(x))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.7)


def test_fd4_exact_on_quartics():
    x = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(fd4_derivative(x**4 - x**2, x[1] - x[0]), 4 * x**3 - 2 * x, atol=1e-12)


def test_spectral_matrix_antisymmetric_and_exact():
    n, L = 32, 2 * np.pi
    D = spectral_matrix(n, L / n)
    np.testing.assert_allclose(D, -D.T, atol=0)
    x = np.arange(n) * L / n
    np.testing.assert_allclose(D @ np.sin(3 * x), 3 * np.cos(3 * x), atol=1e-12)


def test_d_dx_spectral_on_sine(vel16):
    t = TorusGrid(1, 16)
    x = t.nodes[:, 0]
    g = np.exp(-vel16.speed2)
    f = PhaseSpaceField(t, vel16, np.outer(np.sin(2 * x), g))
    np.testing.assert_allclose(d_dx(f, 0).values, np.outer(2 * np.cos(2 * x), g), atol=1e-12)


def test_d_dx_and_d_dv_commute(vel16, rng):
    t = TorusGrid(2, 4)
    f = PhaseSpaceField(t, vel16, rng.standard_normal((t.n_nodes, vel16.n_nodes)))
    a = d_dv(d_dx(f, 1), 0).values
    b = d_dx(d_dv(f, 0), 1).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_axis_out_of_range_raises(vel16):
    f = PhaseSpaceField.zeros(TorusGrid(1, 4), vel16)
    with pytest.raises(ValueError):
        d_dx(f, 1)
    with pytest.raises(ValueError):
        d_dv(f, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_moments_are_linear(seed):
    vel = VelocityGrid(2, 8, 4.0)
    t = TorusGrid(1, 4)
    r = np.random.default_rng(seed)
    f = PhaseSpaceField(t, vel, r.standard_normal((4, vel.n_nodes)))
    g = PhaseSpaceField(t, vel, r.standard_normal((4, vel.n_nodes)))
    s = PhaseSpaceField(t, vel, 2.0 * f.values - g.values)
    mf, mg, ms = moments(f), moments(g), moments(s)
    assert ms[0] == pytest.approx(2 * mf[0] - mg[0], abs=1e-10)
    np.testing.assert_allclose(ms[1], 2 * mf[1] - mg[1], atol=1e-10)
    assert ms[2] == pytest.approx(2 * mf[2] - mg[2], abs=1e-10)
