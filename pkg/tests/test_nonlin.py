import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbkinetic.errors import ConfigError, DomainError, GuardError, InvariantError
from lbkinetic.grid import TorusGrid, VelocityGrid, kernel_basis, maxwellian
from lbkinetic.kernel import build_tables
from lbkinetic.linop import apply_L
from lbkinetic.nonlin import (
    NonlinConfig,
    NonlinearOperator,
    apply_N,
    apply_Q,
    check_guard,
    entropy_production,
    smallness_proxy,
)
from lbkinetic.solver import random_micro


def micro(vel, amp, seed=0):
    return random_micro(TorusGrid(0, 1), vel, amp, seed=seed).values[0]


def test_N_vanishes_at_zero(tables16):
    assert np.all(apply_N(tables16, np.zeros(tables16.n)) == 0)


@settings(max_examples=15, deadline=None)
@given(s=st.floats(0.1, 10.0), seed=st.integers(0, 1000))
def test_frozen_N_is_quadratic(tables16, s, seed):
    f = micro(tables16.vel, 1e-2, seed)
    a = apply_N(tables16, s * f)
    b = s * s * apply_N(tables16, f)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


def test_matmul_contraction_matches_einsum(tables16):
    vel = tables16.vel
    nl = NonlinearOperator(tables16)
    f = np.stack([micro(vel, 1e-2, s) for s in range(3)])
    g = nl.op.grad(f)
    fast = nl._quadratic(tables16.K, f, g)
    slow = nl._quadratic(tables16.K.copy(), f, g)
    np.testing.assert_allclose(fast, slow, atol=1e-14 * np.abs(slow).max())


def test_batch_equals_nodewise(tables16):
    vel = tables16.vel
    f = np.stack([micro(vel, 1e-2, s) for s in range(3)])
    nl = NonlinearOperator(tables16)
    batch = nl.apply(f)
    for i in range(3):
        np.testing.assert_allclose(batch[i], nl.apply(f[i]), atol=1e-15)


def test_N_conservation_improves_with_resolution(debye):
    res = []
    for n in (16, 24):
        vel = VelocityGrid(2, n, 8.0)
        tabs = build_tables(vel, debye, "maxwellian")
        f = micro(vel, 1e-2)
        Nf = apply_N(tabs, f)
        chi = np.array(kernel_basis(vel))
        res.append(np.max(np.abs((chi * vel.weights) @ Nf)) / np.sqrt((Nf**2) @ vel.weights))
    assert res[1] < res[0]
    assert res[1] < 1e-3


def test_Q_conserves_and_dissipates(debye, vel16):
    mu = maxwellian(vel16)
    F = mu + np.sqrt(mu) * micro(vel16, 5e-2)
    Q = apply_Q(F, vel16, debye)
    W = vel16.weights
    scale = np.abs(Q) @ W * (1 + vel16.speed2.max())
    for test in (np.ones_like(F), vel16.nodes[:, 0], vel16.nodes[:, 1], vel16.speed2):
        assert abs((test * Q) @ W) <= 1e-13 * scale
    assert entropy_production(F, Q, vel16) < 0


def test_Q_of_maxwellian_vanishes(debye, vel16):
    mu = maxwellian(vel16)
    Q = apply_Q(mu, vel16, debye, eps_mode="unity")
    assert np.max(np.abs(Q)) < 1e-13


def test_Q_rejects_negative_distribution(debye, vel16):
    F = maxwellian(vel16)
    F[0] = -1.0
    with pytest.raises(DomainError):
        apply_Q(F, vel16, debye)


def test_L_plus_N_consistent_with_Q(debye):
    errs = []
    for n in (16, 24, 32):
        vel = VelocityGrid(2, n, 8.0)
        tabs = build_tables(vel, debye, "maxwellian")
        f = micro(vel, 1e-2, seed=3)
        sq = np.sqrt(maxwellian(vel))
        Q = apply_Q(sq * sq + sq * f, vel, debye)
        r = sq * (apply_L(tabs, f, "fd4") + apply_N(tabs, f, deriv="fd4"))
        W = vel.weights
        errs.append(np.sqrt(((Q - r) ** 2) @ W / ((r**2) @ W)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.1


def test_field_mode_quadratic_and_close_to_frozen(tables16):
    vel = tables16.vel
    f = micro(vel, 1e-3, seed=5)
    cfg = NonlinConfig("field")
    n1 = apply_N(tables16, f, cfg)
    n2 = apply_N(tables16, 2 * f, cfg)
    assert np.linalg.norm(n2) / np.linalg.norm(n1) == pytest.approx(4.0, rel=0.05)
    frozen = apply_N(tables16, f)
    assert np.linalg.norm(n1 - frozen) < np.linalg.norm(frozen)


def test_guard_and_proxy(tables16):
    vel = tables16.vel
    f = micro(vel, 1e-2)
    assert smallness_proxy(vel, 2 * f) == pytest.approx(2 * smallness_proxy(vel, f))
    assert check_guard(vel, f, NonlinConfig("field")) < 0.1
    with pytest.raises(GuardError):
        apply_N(tables16, 100 * f, NonlinConfig("field"))


def test_field_mode_without_tables(tables16):
    nl = NonlinearOperator(tables16, NonlinConfig("field"))
    with pytest.raises(ConfigError):
        nl.apply(np.zeros((2, tables16.n)))


@pytest.mark.parametrize("kw", [{"eps_mode": "live"}, {"table_refresh": 0}, {"table_refresh": 1.5}, {"smallness_guard": 0.0}])
def test_nonlin_config_invariants(kw):
    with pytest.raises(InvariantError) as exc:
        NonlinConfig(**kw)
    assert exc.value.type_name == "NonlinConfig"
