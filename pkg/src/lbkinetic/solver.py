"""Time integration of ∂_t f + v·∇_x f = L[f] + N(f).

Free transport is solved exactly in Fourier space (a phase rotation per
velocity node), collisions by explicit Runge-Kutta at every spatial node.
The two are combined by Strang or Lie splitting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .diagnostics import (
    DiagnosticsReport,
    entropy,
    full_distribution,
    invariant_scales,
    invariants,
    min_abs_eps,
)
from .errors import BlowUpError, ConfigError, InvariantError
from .grid import PhaseSpaceField, TorusGrid, VelocityGrid, kernel_basis, maxwellian
from .kernel import CollisionTables
from .linop import LinearizedOperator, norms
from .nonlin import NonlinConfig, NonlinearOperator, check_guard

log = logging.getLogger(__name__)

SCHEMES = ("strang", "lie")
INTEGRATORS = ("rk4", "rk2")
MODES = ("linear", "nonlinear", "homogeneous")

# extent of the RK stability region along the negative real axis
RK_STABILITY = {"rk4": 2.785293563405282, "rk2": 2.0}


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping settings.

    ``mode`` picks the right-hand side: ``linear`` is L with transport,
    ``nonlinear`` is L + N with transport, ``homogeneous`` is L + N without
    transport.  ``snapshot_every = 0`` disables snapshots.
    """

    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "strang"
    collision_integrator: str = "rk4"
    mode: str = "nonlinear"
    output_every: int = 10
    conservation_projection: bool = False
    snapshot_every: int = 0
    deriv: str = "spectral"

    def __post_init__(self):
        name = "SolverConfig"
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvariantError(name, "dt must be positive")
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise InvariantError(name, "t_end must be positive")
        if self.scheme not in SCHEMES:
            raise InvariantError(name, f"scheme must be one of {SCHEMES}")
        if self.collision_integrator not in INTEGRATORS:
            raise InvariantError(name, f"collision_integrator must be one of {INTEGRATORS}")
        if self.mode not in MODES:
            raise InvariantError(name, f"mode must be one of {MODES}")
        for key in ("output_every", "snapshot_every"):
            val = getattr(self, key)
            if int(val) != val or val < (1 if key == "output_every" else 0):
                raise InvariantError(name, f"{key} must be a {'positive' if key == 'output_every' else 'nonnegative'} integer")
        if not isinstance(self.conservation_projection, bool):
            raise InvariantError(name, "conservation_projection must be a boolean")
        if self.deriv not in ("spectral", "fd4"):
            raise InvariantError(name, "deriv must be 'spectral' or 'fd4'")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.t_end / self.dt - 1e-9))

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "t_end": self.t_end,
            "scheme": self.scheme,
            "collision_integrator": self.collision_integrator,
            "mode": self.mode,
            "output_every": self.output_every,
            "conservation_projection": self.conservation_projection,
            "snapshot_every": self.snapshot_every,
            "deriv": self.deriv,
        }


# ---------------------------------------------------------------------------
# transport


def _phase_wavenumbers(torus: TorusGrid) -> np.ndarray:
    # Nyquist zeroed: its rotation would not stay real
    k = np.fft.fftfreq(torus.n_x, d=1.0 / torus.n_x)
    k[torus.n_x // 2] = 0.0
    mesh = np.meshgrid(*([k] * torus.d_x), indexing="ij")
    return np.stack(mesh, axis=-1)  # shape + (d_x,)


def transport_step(f: PhaseSpaceField, dt: float) -> PhaseSpaceField:
    """Exact free transport: each x-Fourier coefficient times e^{−i k·v dt}."""
    torus, vel = f.torus, f.vel
    if torus.d_x == 0:
        return f.copy()
    if torus.d_x > vel.d_v:
        raise ConfigError("d_x may not exceed d_v")
    axes = tuple(range(torus.d_x))
    cube = f.values.reshape(torus.shape + (vel.n_nodes,))
    hat = np.fft.fftn(cube, axes=axes)
    kv = _phase_wavenumbers(torus) @ vel.nodes[:, : torus.d_x].T  # shape + (n_v,)
    hat *= np.exp(-1j * dt * kv)
    out = np.real(np.fft.ifftn(hat, axes=axes))
    return f.copy(out.reshape(f.values.shape))


# ---------------------------------------------------------------------------
# collisions


class CollisionRHS:
    """L (+ N) evaluated at every spatial node of an (n_x, n_v) array."""

    def __init__(self, tables: CollisionTables, mode: str, nl_cfg: NonlinConfig = NonlinConfig(), deriv: str = "spectral"):
        self.tables = tables
        self.mode = mode
        self.lin = LinearizedOperator(tables, deriv)
        self.nonlinear = mode in ("nonlinear", "homogeneous")
        self.nl = NonlinearOperator(tables, nl_cfg, deriv) if self.nonlinear else None

    def refresh(self, f: np.ndarray) -> None:
        if self.nl is not None:
            self.nl.refresh(f)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        out = self.lin.apply(f)
        if self.nl is not None:
            out = out + self.nl.apply(f)
        return out


def collision_step(f: PhaseSpaceField, dt: float, rhs: CollisionRHS, integrator: str = "rk4", step: int = 0) -> PhaseSpaceField:
    """One explicit RK step of ∂_t f = rhs(f) at every spatial node.

    Raises
    ------
    BlowUpError
        A stage produced NaN or Inf; ``step`` is reported.
    """

    def stage(y):
        k = rhs(y)
        if not np.all(np.isfinite(k)):
            raise BlowUpError(step)
        return k

    y = f.values
    if integrator == "rk4":
        k1 = stage(y)
        k2 = stage(y + 0.5 * dt * k1)
        k3 = stage(y + 0.5 * dt * k2)
        k4 = stage(y + dt * k3)
        new = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    elif integrator == "rk2":
        k1 = stage(y)
        new = y + dt * stage(y + 0.5 * dt * k1)
    else:
        raise ConfigError(f"unknown integrator {integrator!r}")
    if not np.all(np.isfinite(new)):
        raise BlowUpError(step)
    return PhaseSpaceField(f.torus, f.vel, new)


def spectral_radius(tables: CollisionTables, deriv: str = "spectral", seed: int = 0) -> float:
    """Largest |eigenvalue| of L, from the W-symmetrized operator."""
    op = LinearizedOperator(tables, deriv)
    n = op.n
    sw = np.sqrt(tables.vel.weights)

    def mv(y):
        return sw * op.apply(np.ravel(y) / sw)

    lin = LinearOperator((n, n), matvec=mv, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    vals = eigsh(lin, k=1, which="LM", v0=v0, tol=1e-3, return_eigenvectors=False)
    return float(np.max(np.abs(vals)))


def stability_bound(tables: CollisionTables, integrator: str = "rk4", deriv: str = "spectral") -> float:
    """Largest stable dt for the linear part: RK real-axis extent over ρ(L)."""
    return RK_STABILITY[integrator] / spectral_radius(tables, deriv)


# ---------------------------------------------------------------------------
# conservation projection


class ConservationProjector:
    """Restores global mass, momentum and energy with x-uniform χ modes.

    The correction Σ_j c_j χ_j is added at every node; c solves the exact
    discrete moment system, so the invariants are restored to roundoff.
    """

    def __init__(self, torus: TorusGrid, vel: VelocityGrid):
        self.torus, self.vel = torus, vel
        sq = np.sqrt(maxwellian(vel))
        self.chi = np.array(kernel_basis(vel))
        tests = np.vstack([sq, (vel.nodes * sq[:, None]).T, vel.speed2 * sq])  # (d+2, n)
        self.tests = tests * vel.weights
        self.M = torus.volume * (self.tests @ self.chi.T)

    def values(self, f: np.ndarray) -> np.ndarray:
        return self.torus.cell_weight * (self.tests @ f.sum(axis=0))

    def apply(self, f: np.ndarray, target: np.ndarray):
        c = np.linalg.solve(self.M, target - self.values(f))
        return f + (c @ self.chi)[None, :], float(np.linalg.norm(c))


# ---------------------------------------------------------------------------
# initial data


def random_micro(torus: TorusGrid, vel: VelocityGrid, amplitude: float, seed: int = 0, degree: int = 4, n_modes: int = 2) -> PhaseSpaceField:
    """Smooth micro-only data with Gaussian velocity tails.

    f₀ = √μ e^{−|v|²/4} [ρ(x, v) − Σ_k c_k(x) p_k(v)] with ρ a random
    polynomial of the given degree in v times Fourier modes |k_j| ≤
    ``n_modes``, p_k ∈ {1, v, |v|²}, and c chosen so that f₀ ⊥ ker L at every
    node.  The result is scaled so that (∬ f₀² / |𝕋|)^{1/2} = ``amplitude``.
    """
    rng = np.random.default_rng(seed)
    d = vel.d_v
    v = vel.nodes / vel.v_max
    monos = [np.ones(vel.n_nodes)]
    exps = [e for e in np.ndindex(*([degree + 1] * d)) if 0 < sum(e) <= degree]
    for e in exps:
        monos.append(np.prod(v ** np.array(e), axis=1))
    monos = np.array(monos)
    env = np.sqrt(maxwellian(vel)) * np.exp(-0.25 * vel.speed2)
    x = torus.nodes
    if torus.d_x == 0:
        xfun = [np.ones(1)]
    else:
        xfun = [np.ones(torus.n_nodes)]
        for kvec in np.ndindex(*([2 * n_modes + 1] * torus.d_x)):
            k = np.array(kvec) - n_modes
            if np.any(k):
                xfun.append(np.cos(x @ k + rng.uniform(0, 2 * np.pi)))
    vals = np.zeros((torus.n_nodes, vel.n_nodes))
    for xf in xfun:
        coef = rng.standard_normal(len(monos))
        vals += np.outer(xf, env * (coef @ monos))
    # remove the χ components with Gaussian-damped invariants, so f₀/√μ still decays
    phi = env * np.vstack([np.ones(vel.n_nodes), vel.nodes.T, vel.speed2])
    chi = np.array(kernel_basis(vel)) * vel.weights
    vals -= np.linalg.solve(chi @ phi.T, chi @ vals.T).T @ phi
    size = np.sqrt(torus.cell_weight * np.sum(vals**2 @ vel.weights) / torus.volume)
    if size == 0:
        raise ConfigError("random initial data vanished; change the seed or degree")
    return PhaseSpaceField(torus, vel, vals * (amplitude / size))


# ---------------------------------------------------------------------------
# driver


def series_header(d_v: int) -> List[str]:
    return ["t", "mass"] + [f"mom_{i + 1}" for i in range(d_v)] + [
        "energy", "l2", "entropy", "e_N", "d_N", "min_abs_eps", "projection_correction",
    ]


@dataclass
class RunResult:
    f: PhaseSpaceField
    report: DiagnosticsReport
    steps: int
    t: float
    stability_bound: Optional[float]
    refreshes: int = 0
    meta: Dict[str, float] = field(default_factory=dict)


def diagnostics_row(f: PhaseSpaceField, t: float, tables: CollisionTables, eps_min: float, correction: float,
                    report: Optional[DiagnosticsReport] = None, N_used: int = 1) -> Dict[str, float]:
    inv = invariants(f)
    nr = norms(f, tables.A, N_used=N_used)
    row = {"t": float(t), "mass": inv["mass"]}
    for i, m in enumerate(inv["momentum"]):
        row[f"mom_{i + 1}"] = float(m)
    row.update(
        energy=inv["energy"],
        l2=nr.l2,
        entropy=entropy(full_distribution(f), report=report),
        e_N=nr.e_N,
        d_N=nr.d_N,
        min_abs_eps=eps_min,
        projection_correction=float(correction),
    )
    return row


class Simulation:
    """Stepping state; :func:`run` is the one-call wrapper.

    Parameters
    ----------
    cfg : SolverConfig
    tables : CollisionTables
        Maxwellian tables defining L.
    nl_cfg : NonlinConfig
    on_output : callable, optional
        Called as ``on_output(step, f, row)`` at every output step.
    on_snapshot : callable, optional
        Called as ``on_snapshot(step, f)`` every ``snapshot_every`` steps.
    """

    def __init__(
        self,
        cfg: SolverConfig,
        tables: CollisionTables,
        nl_cfg: NonlinConfig = NonlinConfig(),
        on_output: Optional[Callable] = None,
        on_snapshot: Optional[Callable] = None,
        check_stability: bool = True,
    ):
        self.cfg = cfg
        self.tables = tables
        self.nl_cfg = nl_cfg
        self.rhs = CollisionRHS(tables, cfg.mode, nl_cfg, cfg.deriv)
        self.on_output = on_output
        self.on_snapshot = on_snapshot
        self.report = DiagnosticsReport()
        self.bound = None
        if check_stability:
            self.bound = stability_bound(tables, cfg.collision_integrator, cfg.deriv)
            if cfg.dt > self.bound:
                log.warning("dt = %g exceeds the estimated stability bound %.4g", cfg.dt, self.bound)
            else:
                log.info("stability bound estimate %.4g (dt = %g)", self.bound, cfg.dt)
        self._eps_frozen = min_abs_eps(tables.potential, tables.table) if tables.table is not None else 1.0

    def _eps_min(self) -> float:
        nl = self.rhs.nl
        if nl is not None and nl.field:
            return min(min_abs_eps(t.potential, t.table) for t in nl.field)
        return self._eps_frozen

    def _split(self, f: PhaseSpaceField, step: int) -> PhaseSpaceField:
        cfg = self.cfg
        if cfg.mode == "homogeneous" or f.torus.d_x == 0:
            return collision_step(f, cfg.dt, self.rhs, cfg.collision_integrator, step)
        if cfg.scheme == "strang":
            f = transport_step(f, 0.5 * cfg.dt)
            f = collision_step(f, cfg.dt, self.rhs, cfg.collision_integrator, step)
            return transport_step(f, 0.5 * cfg.dt)
        f = transport_step(f, cfg.dt)
        return collision_step(f, cfg.dt, self.rhs, cfg.collision_integrator, step)

    def run(self, f0: PhaseSpaceField, t0: float = 0.0, step0: int = 0) -> RunResult:
        cfg = self.cfg
        if not np.all(np.isfinite(f0.values)):
            raise ConfigError("initial data must be finite")
        if self.rhs.nonlinear and self.nl_cfg.eps_mode == "field":
            check_guard(f0.vel, f0.values, self.nl_cfg)
        proj = ConservationProjector(f0.torus, f0.vel) if cfg.conservation_projection else None
        target = proj.values(f0.values) if proj is not None else None
        f = f0.copy()
        n_steps = cfg.n_steps
        correction = 0.0
        total_corr = 0.0
        self._emit(step0, t0, f, correction)
        for s in range(1, n_steps + 1):
            step = step0 + s
            if self.rhs.nonlinear and self.nl_cfg.eps_mode == "field" and (s - 1) % self.nl_cfg.table_refresh == 0:
                self.rhs.refresh(f.values)
            f = self._split(f, step)
            if proj is not None:
                vals, correction = proj.apply(f.values, target)
                total_corr += correction
                f = PhaseSpaceField(f.torus, f.vel, vals)
            t = t0 + s * cfg.dt
            if s % cfg.output_every == 0 or s == n_steps:
                self._emit(step, t, f, correction)
            if self.on_snapshot is not None and cfg.snapshot_every and s % cfg.snapshot_every == 0:
                self.on_snapshot(step, f)
        refreshes = self.rhs.nl.refreshes if self.rhs.nl is not None else 0
        meta = {"projection_total": total_corr}
        return RunResult(f, self.report, step0 + n_steps, t0 + n_steps * cfg.dt, self.bound, refreshes, meta)

    def _emit(self, step: int, t: float, f: PhaseSpaceField, correction: float) -> None:
        row = diagnostics_row(f, t, self.tables, self._eps_min(), correction, self.report)
        self.report.add_row(row)
        if self.on_output is not None:
            self.on_output(step, f, row)


def run(cfg: SolverConfig, f0: PhaseSpaceField, tables: CollisionTables, nl_cfg: NonlinConfig = NonlinConfig(), **kw) -> RunResult:
    """Integrate from ``f0`` to ``cfg.t_end`` and return the final state with its report."""
    return Simulation(cfg, tables, nl_cfg, **kw).run(f0)


def relative_invariant_drift(report: DiagnosticsReport, torus: TorusGrid, d_v: int) -> Dict[str, float]:
    """Largest |invariant(t) − invariant(0)| over the series, relative to the Maxwellian scales."""
    s = invariant_scales(torus, d_v)
    mass = report.column("mass")
    energy = report.column("energy")
    mom = np.stack([report.column(f"mom_{i + 1}") for i in range(d_v)], axis=-1)
    return {
        "mass": float(np.max(np.abs(mass - mass[0]))) / s["mass"],
        "momentum": float(np.max(np.abs(mom - mom[0]))) / s["momentum"],
        "energy": float(np.max(np.abs(energy - energy[0]))) / s["energy"],
    }
