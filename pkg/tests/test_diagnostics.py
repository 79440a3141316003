import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbkinetic.diagnostics import (
    DERIVED_COEFFICIENTS,
    PRINTED_COEFFICIENTS,
    DiagnosticsReport,
    decay_fit,
    entropy,
    full_distribution,
    macro_identity_check,
    macro_identity_residuals,
    macro_test_function,
    maxwellian_entropy,
    min_abs_eps,
    poisson_solve,
    relative_drift,
    spectral_derivative,
    weighted_l2,
)
from lbkinetic.dispersion import build_dispersion_table
from lbkinetic.errors import ConfigError, DomainError, FitError, InvariantError
from lbkinetic.grid import PhaseSpaceField, TorusGrid, VelocityGrid, kernel_basis, maxwellian
from lbkinetic.solver import random_micro


# ---------------------------------------------------------------------------
# entropy


def test_entropy_of_maxwellian(homog):
    vel = VelocityGrid(2, 32, 8.0)
    F = full_distribution(PhaseSpaceField.zeros(homog, vel))
    assert entropy(F) == pytest.approx(maxwellian_entropy(homog, 2), abs=1e-12)
    t = TorusGrid(1, 4)
    F = full_distribution(PhaseSpaceField.zeros(t, vel))
    assert entropy(F) == pytest.approx(maxwellian_entropy(t, 2), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gibbs_inequality_at_fixed_invariants(seed):
    # micro data leaves mass, momentum and energy unchanged, so H(F) ≥ H(μ)
    vel = VelocityGrid(2, 24, 8.0)
    t = TorusGrid(0, 1)
    F = full_distribution(random_micro(t, vel, 5e-2, seed=seed))
    assert entropy(F) > maxwellian_entropy(t, 2)


def test_entropy_floor_budget(homog, vel16):
    F = full_distribution(PhaseSpaceField.zeros(homog, vel16))
    vals = F.values.copy()
    vals[0, 0] = -1e-20
    rep = DiagnosticsReport()
    entropy(F.copy(vals), report=rep)
    assert rep.entropy_floor_hits == 1
    vals[0, vel16.n_nodes // 2] = -1.0
    with pytest.raises(DomainError):
        entropy(F.copy(vals))


# ---------------------------------------------------------------------------
# weighted norms


@pytest.fixture(scope="module")
def chi0():
    vel = VelocityGrid(2, 48, 8.0)
    return PhaseSpaceField(TorusGrid(0, 1), vel, kernel_basis(vel)[0])


def test_weighted_l2_closed_forms(chi0):
    assert weighted_l2(chi0) == pytest.approx(1.0, abs=1e-12)
    # E(1 + |v|²)² under μ in 2-D: 1 + 2 + 2
    assert weighted_l2(chi0, l=2) == pytest.approx(5.0, abs=1e-10)
    # ∫ e^{⟨v⟩²/2} μ = 2 e^{1/2}
    assert weighted_l2(chi0, K=0.25) == pytest.approx(2 * np.exp(0.5), rel=1e-10)


@pytest.mark.parametrize("K", [0.5, 1.0])
def test_weighted_l2_refuses_nonintegrable_weight(chi0, K):
    with pytest.raises(DomainError, match="⟨v⟩"):
        weighted_l2(chi0, K=K)


@pytest.mark.parametrize("kw", [{"theta": 0.0}, {"theta": 2.5}, {"K": -0.1}])
def test_weighted_l2_config_errors(chi0, kw):
    with pytest.raises(ConfigError):
        weighted_l2(chi0, **kw)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 4), st.floats(0, 4), st.floats(0, 0.2), st.floats(0, 0.2), st.floats(0.5, 2.0))
def test_weighted_l2_monotone(chi0, l1, l2, K1, K2, theta):
    lo = weighted_l2(chi0, min(l1, l2), theta, min(K1, K2))
    hi = weighted_l2(chi0, max(l1, l2), theta, max(K1, K2))
    assert lo <= hi * (1 + 1e-12)


def test_weighted_l2_of_zero(chi0):
    assert weighted_l2(chi0.copy(np.zeros_like(chi0.values))) == 0.0


# ---------------------------------------------------------------------------
# decay fits


def test_poly_fit_recovers_exponent():
    t = np.linspace(0, 20, 200)
    fit = decay_fit(t, (1 + t * t) ** -1.5, "poly")
    assert fit.parameter == pytest.approx(3.0, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_stretched_fit_recovers_rate():
    t = np.linspace(0, 10, 100)
    fit = decay_fit(t, np.exp(-2 * t ** (2 / 3)), "stretched", theta=2.0)
    assert fit.parameter == pytest.approx(2.0, abs=1e-9)
    assert fit.theta == 2.0


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0.1, 5.0))
def test_fit_scale_equivariance(c, p):
    t = np.linspace(0, 10, 50)
    y = (1 + t * t) ** (-p / 2)
    a, b = decay_fit(t, y, "poly"), decay_fit(t, c * y, "poly")
    assert b.parameter == pytest.approx(a.parameter, abs=1e-8)
    assert b.offset == pytest.approx(a.offset + np.log(c), abs=1e-8)


def test_fit_window():
    t = np.linspace(0, 10, 101)
    y = np.where(t < 1, 1.0, np.exp(-t ** (2 / 3)))
    fit = decay_fit(t, y, "stretched", window=(1, 10))
    assert fit.n_samples == 91
    assert fit.parameter == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize(
    "t, y",
    [
        (np.arange(9.0), np.exp(-np.arange(9.0))),
        (np.arange(20.0), np.ones(20)),
        (np.arange(20.0), np.r_[np.ones(19), -1.0]),
    ],
)
def test_fit_errors(t, y):
    with pytest.raises(FitError):
        decay_fit(t, y, "poly")


def test_report_fit_squares_norm_and_orders_time():
    rep = DiagnosticsReport()
    for t in np.linspace(0, 10, 30):
        rep.add_row({"t": t, "l2": (1 + t * t) ** -0.75})
    assert rep.fit("poly").parameter == pytest.approx(3.0, abs=1e-9)
    assert "poly" in rep.decay_fits
    with pytest.raises(InvariantError):
        rep.add_row({"t": 1.0, "l2": 0.1})


# ---------------------------------------------------------------------------
# drift and Penrose


def test_relative_drift_of_mass_mode(vel24):
    t = TorusGrid(1, 4)
    f0 = PhaseSpaceField.zeros(t, vel24)
    f1 = PhaseSpaceField.from_velocity(t, vel24, 1e-6 * kernel_basis(vel24)[0])
    dr = relative_drift(f0, f1)
    assert dr["mass"] == pytest.approx(1e-6, rel=1e-8)
    assert dr["momentum"] < 1e-20


def test_min_abs_eps_of_maxwellian(debye, vel24):
    tab = build_dispersion_table(debye, vel24, "maxwellian")
    assert min_abs_eps(debye, tab) == pytest.approx(0.5627, abs=2e-3)


# ---------------------------------------------------------------------------
# Poisson


def test_poisson_sine():
    t = TorusGrid(1, 16)
    x = t.nodes[:, 0]
    res = poisson_solve(np.sin(2 * x)[:, None] + 3.0, t)
    np.testing.assert_allclose(res.phi[:, 0], np.sin(2 * x) / 4, atol=1e-14)
    assert res.removed_mean == pytest.approx(3.0)


def test_poisson_with_derivative_and_bounds(rng):
    t = TorusGrid(2, 16)
    s = rng.standard_normal((t.n_nodes, 2))
    res = poisson_solve(s, t, alpha=(1, 0))
    assert np.max(np.abs(res.phi.mean(axis=0))) < 1e-15
    lap = spectral_derivative(res.phi, t, (2, 0)) + spectral_derivative(res.phi, t, (0, 2))
    rhs = spectral_derivative(s, t, (1, 0))
    np.testing.assert_allclose(-lap, rhs, atol=1e-12)
    r0 = poisson_solve(s, t)
    lap0 = spectral_derivative(r0.phi, t, (2, 0)) + spectral_derivative(r0.phi, t, (0, 2))
    assert np.linalg.norm(lap0) <= np.linalg.norm(s) * (1 + 1e-12)


def test_poisson_needs_space():
    with pytest.raises(ConfigError):
        poisson_solve(np.ones((1, 1)), TorusGrid(0, 1))


def test_spectral_derivative_multi_index_length():
    with pytest.raises(ValueError):
        spectral_derivative(np.ones((16, 1)), TorusGrid(1, 16), (1, 0))


# ---------------------------------------------------------------------------
# macroscopic identities


@pytest.fixture(scope="module")
def snapshot():
    vel = VelocityGrid(2, 48, 8.0)
    t = TorusGrid(2, 8)
    rng = np.random.default_rng(5)
    f = random_micro(t, vel, 1e-2, seed=5).values
    for c in kernel_basis(vel):
        for _ in range(2):
            k = rng.integers(-2, 3, size=2)
            f = f + 1e-2 * np.outer(np.cos(t.nodes @ k + rng.uniform(0, 2 * np.pi)), c)
    return PhaseSpaceField(t, vel, f)


@pytest.mark.parametrize("alpha", [(0, 0), (1, 0), (1, 1)])
@pytest.mark.parametrize("which", ["a", "b", "c"])
def test_identities_hold_with_derived_coefficients(snapshot, which, alpha):
    r = macro_identity_check(snapshot, alpha, which)
    assert r.derived_residual < 1e-10
    assert r.q_norm2 > 0


def test_macro_only_b_field():
    vel = VelocityGrid(2, 48, 8.0)
    t = TorusGrid(2, 8)
    x1 = t.nodes[:, 0]
    f = PhaseSpaceField(t, vel, np.outer(np.sin(x1), kernel_basis(vel)[1]))
    r = macro_identity_check(f, None, "b")
    assert abs(r.remainder) < 1e-12
    assert r.xi == pytest.approx(np.sqrt(2) / 4 * r.q_norm2, rel=1e-10)
    # ‖b‖² = ∫ sin² = 2π²
    assert r.q_norm2 == pytest.approx(2 * np.pi**2, rel=1e-12)


def test_micro_only_snapshot_has_no_macro_part():
    vel = VelocityGrid(2, 24, 8.0)
    f = random_micro(TorusGrid(2, 8), vel, 1e-2, seed=1)
    for w in ("a", "b", "c"):
        r = macro_identity_check(f, None, w)
        assert r.q_norm2 < 1e-28
        assert abs(r.xi - r.remainder) <= 1e-10 * abs(r.xi)


def test_printed_and_derived_coefficient_tables():
    assert PRINTED_COEFFICIENTS["c"](2) == DERIVED_COEFFICIENTS["c"](2) == 1.0
    assert DERIVED_COEFFICIENTS["a"](2) == -1.0
    assert DERIVED_COEFFICIENTS["b"](3) == pytest.approx(0.3535533906)


def test_printed_residuals_report(snapshot):
    res = macro_identity_residuals(snapshot)
    assert res["c"] < 1e-10
    assert res["a"] > 0.1 and res["b"] > 0.1


def test_test_function_needs_matching_dimensions(vel24):
    f = PhaseSpaceField.zeros(TorusGrid(1, 4), vel24)
    with pytest.raises(ConfigError):
        macro_test_function("b", f, (0,))
