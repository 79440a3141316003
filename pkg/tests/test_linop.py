import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbkinetic.grid import PhaseSpaceField, TorusGrid, VelocityGrid, fd4_matrix, kernel_basis, maxwellian
from lbkinetic.kernel import KernelQuadrature, build_tables, collision_matrix
from lbkinetic.linop import (
    LinearizedOperator,
    MacroState,
    apply_L,
    apply_P,
    burnett,
    d_norm2,
    dirichlet_form,
    equivalence_ratios,
    fitted_coercivity,
    norms,
    project_P,
    spectral_gap,
)


def smooth_random(vel, rng, m=None):
    shape = (vel.n_nodes,) if m is None else (m, vel.n_nodes)
    return rng.standard_normal(shape) * np.exp(-0.25 * vel.speed2)


def brute_force_L(vel, p, g):
    """Pair-by-pair evaluation with collision_matrix and dense fd4 G."""
    n, d = vel.n_nodes, vel.d_v
    D1 = fd4_matrix(vel.n_v, vel.h)
    I1 = np.eye(vel.n_v)
    Ds = [np.kron(D1, I1), np.kron(I1, D1)]
    sq = np.sqrt(maxwellian(vel))
    V, W = vel.nodes, vel.weights
    Gg = np.stack([Ds[i] @ g + V[:, i] * g for i in range(d)], -1)
    flux = np.zeros((n, d))
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            B = collision_matrix(V[a], V[a] - V[b], "unity", p)
            flux[a] += W[b] * sq[b] * B @ (sq[b] * Gg[a] - sq[a] * Gg[b])
    # -G* in the trapezoid inner product
    out = -np.einsum("pi,pi->p", flux, V)
    for i in range(d):
        out -= (Ds[i].T @ (W * flux[:, i])) / W
    return out


def test_L_matches_pairwise_oracle(debye, rng):
    vel = VelocityGrid(2, 7, 4.0)
    tabs = build_tables(vel, debye, "unity", KernelQuadrature(self_correction=False))
    g = smooth_random(vel, rng)
    ref = brute_force_L(vel, debye, g)
    np.testing.assert_allclose(apply_L(tabs, g, "fd4"), ref, atol=1e-12 * np.abs(ref).max())


def test_projector_is_exact(vel16, rng):
    g = rng.standard_normal((3, vel16.n_nodes))
    Pg = apply_P(vel16, g)
    np.testing.assert_allclose(apply_P(vel16, Pg), Pg, atol=1e-13)
    state, micro = project_P(g, vel16)
    chi = np.array(kernel_basis(vel16))
    assert np.max(np.abs((micro * vel16.weights) @ chi.T)) < 1e-13
    np.testing.assert_allclose(state.reconstruct(vel16) + micro, g, atol=1e-13)


def test_macro_state_roundtrip(vel24):
    st_ = MacroState(np.array(0.3), np.array([-0.1, 0.2]), np.array(0.05))
    g = st_.reconstruct(vel24)
    back, micro = project_P(g, vel24)
    assert back.a == pytest.approx(0.3)
    np.testing.assert_allclose(back.b, [-0.1, 0.2], atol=1e-14)
    assert np.max(np.abs(micro)) < 1e-14


def test_kernel_of_L_refines(debye):
    res = []
    for n in (16, 24):
        vel = VelocityGrid(2, n, 8.0)
        tabs = build_tables(vel, debye, "maxwellian")
        chi = np.array(kernel_basis(vel))
        Lc = apply_L(tabs, chi)
        res.append(np.max(np.sqrt((Lc**2) @ vel.weights / d_norm2(tabs.A, vel, chi))))
    assert res[1] < res[0] / 4


def test_L_symmetric_and_dissipative(tables24, rng):
    vel = tables24.vel
    op = LinearizedOperator(tables24)
    f, g = smooth_random(vel, rng, 2)
    a, b = op.bilinear(f, g), op.bilinear(g, f)
    assert abs(a - b) <= 1e-12 * abs(a)
    assert dirichlet_form(tables24, g) == pytest.approx(-op.bilinear(g, g), rel=1e-12)
    S = op.weighted_form()
    np.testing.assert_array_equal(S, S.T)


@pytest.fixture(scope="module")
def small_tables(debye):
    return build_tables(VelocityGrid(2, 8, 5.0), debye, "maxwellian")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), width=st.floats(0.05, 1.0))
def test_dirichlet_form_nonnegative(small_tables, seed, width):
    vel = small_tables.vel
    g = np.random.default_rng(seed).standard_normal(vel.n_nodes) * np.exp(-width * vel.speed2)
    assert dirichlet_form(small_tables, g) >= -1e-12 * d_norm2(small_tables.A, vel, g)


def test_dense_matrix_agrees_with_matrix_free(tables16, rng):
    g = smooth_random(tables16.vel, rng)
    op = LinearizedOperator(tables16)
    np.testing.assert_allclose(op.matrix() @ g, op.apply(g), atol=1e-12 * np.abs(op.apply(g)).max())


def test_spectral_gap_and_fitted_coercivity(tables16, rng):
    lam = spectral_gap(tables16)
    assert lam > 0
    samples = smooth_random(tables16.vel, rng, 20)
    fit = fitted_coercivity(tables16, samples, "fd4")
    assert fit["lambda"] >= lam * (1 - 1e-9)
    assert fit["C"] > 0


def test_burnett_functions_orthogonal_to_invariants():
    vel = VelocityGrid(2, 48, 8.0)
    A, B = burnett(vel)
    chi = np.array(kernel_basis(vel))
    W = vel.weights
    assert np.max(np.abs(np.einsum("ijp,kp,p->ijk", A, chi, W))) < 1e-10
    assert np.max(np.abs(np.einsum("ip,kp,p->ik", B, chi, W))) < 1e-10
    np.testing.assert_allclose(np.trace(A), 0, atol=1e-15)
    np.testing.assert_array_equal(A, A.transpose(1, 0, 2))


def test_norm_hierarchy_monotone_and_base_case(tables16, rng):
    vel = tables16.vel
    t = TorusGrid(1, 8)
    x = t.nodes[:, 0]
    f = PhaseSpaceField(t, vel, np.outer(1 + np.cos(x), smooth_random(vel, rng)))
    r0, r1, r2 = (norms(f, tables16.A, N) for N in (0, 1, 2))
    assert r0.e_N == pytest.approx(r0.l2**2)
    assert r0.d_N == pytest.approx(r0.d_norm**2)
    assert r0.d_N <= r1.d_N <= r2.d_N
    assert r0.e_N <= r1.e_N <= r2.e_N


def test_norm_N_used_out_of_range(tables16):
    f = PhaseSpaceField.zeros(TorusGrid(1, 4), tables16.vel)
    with pytest.raises(ValueError):
        norms(f, tables16.A, 3)


def test_equivalence_ratios_finite(tables16, rng):
    vel = tables16.vel
    h = rng.standard_normal((5, vel.n_nodes, 2))
    g = smooth_random(vel, rng, 5)
    r = equivalence_ratios(tables16.A, vel, h, g)
    for key, val in r.items():
        assert np.all(np.isfinite(val)) and np.all(val > 0), key
