import mpmath
import numpy as np
import pytest
from scipy.special import dawsn

from lbkinetic.dispersion import (
    build_dispersion_table,
    epsilon,
    field_marginal,
    hilbert_pv,
    line_marginal,
    maxwellian_marginal,
    penrose_scan,
    plemelj_h,
    s_grid,
)
from lbkinetic.errors import OutOfRangeError
from lbkinetic.grid import VelocityGrid, maxwellian
from lbkinetic.potential import vhat


def h_dawson(u):
    """Maxwellian H from the Dawson function."""
    u = np.asarray(u, dtype=float)
    return 2.0 - 4.0 * u * dawsn(u) - 2j * np.sqrt(np.pi) * u * np.exp(-u * u)


def h_mpmath(u):
    """Same quantity through erfi at 30 digits."""
    mpmath.mp.dps = 30
    u = mpmath.mpf(u)
    re = 2 - 2 * mpmath.sqrt(mpmath.pi) * u * mpmath.exp(-u * u) * mpmath.erfi(u)
    im = -2 * mpmath.sqrt(mpmath.pi) * u * mpmath.exp(-u * u)
    return complex(re, im)


@pytest.fixture(scope="module")
def marg():
    vel = VelocityGrid(2, 32, 8.0)
    return maxwellian_marginal([1.0, 0.0], s_grid(vel))


@pytest.mark.parametrize("u", [0.0, 0.3, -0.92, 1.79, 3.5, -5.9])
def test_maxwellian_h_matches_mpmath(marg, u):
    assert abs(plemelj_h(marg, u) - h_mpmath(u)) < 1e-12


def test_hilbert_pv_matches_dawson_on_dense_grid(marg):
    u = np.linspace(-6, 6, 1201)
    np.testing.assert_allclose(hilbert_pv(marg, u), h_dawson(u).real, atol=1e-12)


def test_pv_of_non_gaussian_marginal():
    # phi(s) = s^2 e^{-s^2}/sqrt(pi) * 2: mpmath principal value by symmetric splitting
    s = np.linspace(-12, 12, 4801)
    phi = 2 * s**2 * np.exp(-s * s) / np.sqrt(np.pi)
    from lbkinetic.dispersion import LineMarginal

    m = LineMarginal(np.array([1.0, 0.0]), s, phi, 0.0)
    mpmath.mp.dps = 20

    def dphi(x):
        return 2 * (2 * x - 2 * x**3) * mpmath.exp(-x * x) / mpmath.sqrt(mpmath.pi)

    for u in (0.4, 1.3):
        eps = mpmath.mpf("1e-8")
        f = lambda x: dphi(x) / (u - x)
        ref = mpmath.quad(f, [-12, u - 1, u - eps]) + mpmath.quad(f, [u + eps, u + 1, 12])
        assert hilbert_pv(m, u) == pytest.approx(float(ref), abs=1e-7)


def test_static_limit_and_imaginary_part(debye, marg):
    for k in (0.05, 0.7, 3.0, 9.9):
        e0 = epsilon(debye, [k, 0.0], 0.0, marg)
        assert abs(e0 - (1 + 2 * vhat(debye, k))) <= 1e-12 * abs(e0)
        for u in (-2.0, 0.5, 1.0):
            im = epsilon(debye, [k, 0.0], u, marg).imag
            assert im == pytest.approx(-2 * np.sqrt(np.pi) * vhat(debye, k) * u * np.exp(-u * u), abs=1e-13)


def test_u_outside_marginal_raises(marg):
    with pytest.raises(OutOfRangeError):
        hilbert_pv(marg, 100.0)


def test_zero_perturbation_field_marginal_is_maxwellian(vel24):
    m = field_marginal(np.zeros(vel24.n_nodes), vel24, [0.6, 0.8])
    u = np.array([-1.0, 0.2, 2.5])
    np.testing.assert_allclose(plemelj_h(m, u), h_dawson(u), atol=1e-12)


def test_numeric_marginal_converges_under_refinement():
    errs = []
    for n in (24, 48, 96):
        vel = VelocityGrid(2, n, 8.0)
        m = line_marginal(maxwellian(vel), vel, np.array([0.6, 0.8]))
        errs.append(abs(m.mass() - 1.0) + abs(plemelj_h(m, 0.5) - h_dawson(0.5)))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 2e-2


def test_marginal_is_linear_in_perturbation(vel24, rng):
    f = rng.standard_normal(vel24.n_nodes) * np.exp(-0.25 * vel24.speed2)
    khat = np.array([0.6, 0.8])
    m1 = field_marginal(f, vel24, khat)
    m2 = field_marginal(2 * f, vel24, khat)
    m0 = field_marginal(0 * f, vel24, khat)
    u = np.array([-0.7, 0.1, 1.4])
    np.testing.assert_allclose(plemelj_h(m2, u) - plemelj_h(m0, u), 2 * (plemelj_h(m1, u) - plemelj_h(m0, u)), atol=1e-12)


def test_table_reproduces_nodes_and_interpolates(debye, vel24):
    tab = build_dispersion_table(debye, vel24, "maxwellian")
    un = tab.u_nodes[::997]
    np.testing.assert_allclose(tab.H[0, ::997], h_dawson(un), atol=1e-12)
    u = np.array([0.12345, -1.7777])
    np.testing.assert_allclose(tab.H_at(np.array([[1.0, 0.0]] * 2), u), h_dawson(u), atol=1e-6)


def test_field_table_symmetry(debye, vel16, rng):
    f = 1e-3 * rng.standard_normal(vel16.n_nodes) * np.exp(-0.25 * vel16.speed2)
    tab = build_dispersion_table(debye, vel16, "field", f=f, directions=None)
    n = len(tab.directions)
    # H(-k, u) = conj H(k, -u)
    np.testing.assert_allclose(tab.H[n // 2], np.conj(tab.H[0][::-1]), atol=0)


def test_penrose_minimum_against_dawson_scan(debye, marg):
    k = np.linspace(0.05, debye.k_max, 200)
    u = np.linspace(-6, 6, 1201)
    val, (kk, uu, _) = penrose_scan(debye, marg, k, u)
    ref = np.min(np.abs(1 + vhat(debye, k)[:, None] * h_dawson(u)[None, :]))
    assert val > 0
    assert val == pytest.approx(ref, abs=1e-10)
    assert val == pytest.approx(0.5626, abs=1e-3)
