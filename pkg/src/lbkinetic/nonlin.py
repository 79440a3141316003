"""Nonlinear collision terms N(f) and the full operator Q(F).

With G = ∇_v + v and B_F[g] = ∫ B(v, v - v*; ∇F) √μ* g* dv*, substituting
F = μ + √μ f into Q gives Q(F)/√μ = L f + N(f) with

    N(f) = (∇ - v)·{ (A_F - A_μ) Gf - √μ (B_F - B_μ)[Gf]
                     + B_F[f] ∇f - f B_F[∇f] }.

The last two terms are N₁ and N₂; the first two (N₃, N₄) vanish when the
dielectric is frozen at the Maxwellian.  The divergence is the negative
weighted adjoint of G, as in the linear operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .dispersion import build_dispersion_table
from .errors import ConfigError, DomainError, GuardError, InvariantError
from .grid import VelocityGrid
from .kernel import CollisionTables, KernelQuadrature, RadialTable, assemble_pairs, build_tables
from .linop import LinearizedOperator
from .potential import InteractionPotential

log = logging.getLogger(__name__)

NONLIN_MODES = ("frozen", "field")


@dataclass(frozen=True)
class NonlinConfig:
    """Settings of the nonlinear term.

    Parameters
    ----------
    eps_mode : {"frozen", "field"}
        ``frozen`` keeps ε at the Maxwellian; ``field`` uses ε of F = μ + √μ f
        at every spatial node.
    table_refresh : int
        Field-mode tables are rebuilt every this many steps.
    smallness_guard : float
        Largest admissible value of :func:`smallness_proxy` in field mode.
    """

    eps_mode: str = "frozen"
    table_refresh: int = 1
    smallness_guard: float = 0.1

    def __post_init__(self):
        if self.eps_mode not in NONLIN_MODES:
            raise InvariantError("NonlinConfig", f"eps_mode must be one of {NONLIN_MODES}")
        if int(self.table_refresh) != self.table_refresh or self.table_refresh < 1:
            raise InvariantError("NonlinConfig", "table_refresh must be an integer >= 1")
        if not self.smallness_guard > 0:
            raise InvariantError("NonlinConfig", "smallness_guard must be positive")

    def to_dict(self) -> dict:
        return {"eps_mode": self.eps_mode, "table_refresh": self.table_refresh, "smallness_guard": self.smallness_guard}


# ---------------------------------------------------------------------------
# smallness guard


def smallness_proxy(vel: VelocityGrid, f: np.ndarray, r0: float = 2.0) -> np.ndarray:
    """‖⟨v⟩^{-r₀} ⟨∇_v⟩² f‖_{L²_v} per leading index, with ⟨∇_v⟩² = 1 - Δ_v.

    This is the non-degeneracy condition for ε near the Maxwellian with
    δ₀ = 1/2, for which the Bessel potential is a local operator; Δ_v uses
    the fourth-order difference stencils.
    """
    f = np.asarray(f, dtype=float)
    D = vel.derivative_matrix("fd4")
    lap = np.zeros_like(f)
    for i in range(vel.d_v):
        lap = lap + vel.apply_1d(D, vel.apply_1d(D, f, i), i)
    h = (f - lap) * vel.bracket ** (-r0)
    return np.sqrt(np.einsum("...p,...p,p->...", h, h, vel.weights))


def check_guard(vel: VelocityGrid, f: np.ndarray, cfg: NonlinConfig) -> float:
    """Largest proxy over spatial nodes; raises :class:`GuardError` above the threshold."""
    worst = float(np.max(smallness_proxy(vel, f)))
    if worst > cfg.smallness_guard:
        raise GuardError(
            f"smallness proxy {worst:.4g} exceeds the guard {cfg.smallness_guard:.4g}; "
            "the field dielectric is not guaranteed non-degenerate"
        )
    return worst


# ---------------------------------------------------------------------------
# field tables


def field_tables(
    vel: VelocityGrid,
    p: InteractionPotential,
    f: np.ndarray,
    quad: KernelQuadrature = KernelQuadrature(),
    **table_kw,
) -> CollisionTables:
    """Collision tables with ε of F = μ + √μ f at one spatial node."""
    if not np.any(f):
        return build_tables(vel, p, "maxwellian", quad)
    table = build_dispersion_table(p, vel, "field", f=f, **table_kw)
    return build_tables(vel, p, "field", quad, table=table)


class NonlinearOperator:
    """N(f) on a batch of spatial nodes.

    Parameters
    ----------
    tables : CollisionTables
        Maxwellian-background tables (the ones defining L).
    cfg : NonlinConfig
    deriv : str
        Velocity derivative inside G and ∇; must match the linear operator.
    """

    def __init__(self, tables: CollisionTables, cfg: NonlinConfig = NonlinConfig(), deriv: str = "spectral"):
        self.tables = tables
        self.cfg = cfg
        self.op = LinearizedOperator(tables, deriv)
        self.vel = tables.vel
        self.field: Optional[List[CollisionTables]] = None
        self.refreshes = 0
        self._ckey = None
        self._cmat = None

    def refresh(self, f: np.ndarray) -> None:
        """Rebuild per-node field tables from f (m, n); no-op in frozen mode."""
        if self.cfg.eps_mode != "field":
            return
        f = np.atleast_2d(f)
        check_guard(self.vel, f, self.cfg)
        t = self.tables
        self.field = [field_tables(self.vel, t.potential, row, t.quad) for row in f]
        self.refreshes += 1

    def _contract(self, K: np.ndarray) -> np.ndarray:
        # (n d d, n) layout so that B[f] is one matrix product
        key = id(K)
        if self._ckey != key:
            n, d = self.vel.n_nodes, self.vel.d_v
            self._cmat = np.ascontiguousarray(K.transpose(0, 1, 3, 2).reshape(n * d * d, n))
            self._ckey = key
        return self._cmat

    def _quadratic(self, K: np.ndarray, f: np.ndarray, gradf: np.ndarray) -> np.ndarray:
        # B[f] ∇f - f B[∇f]
        n, d = self.vel.n_nodes, self.vel.d_v
        if K is self.tables.K:
            Bf = (f @ self._contract(K).T).reshape(f.shape[:-1] + (n, d, d))
        else:
            Bf = np.einsum("piqj,...q->...pij", K, f)
        Bg = (gradf.reshape(gradf.shape[:-2] + (n * d,)) @ K.reshape(n * d, n * d).T).reshape(gradf.shape)
        return np.einsum("...pij,...pj->...pi", Bf, gradf) - f[..., None] * Bg

    def flux(self, f: np.ndarray, field: Optional[List[CollisionTables]] = None) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        gradf = self.op.grad(f)
        if self.cfg.eps_mode == "frozen":
            return self._quadratic(self.tables.K, f, gradf)
        field = self.field if field is None else field
        if field is None:
            raise ConfigError("field mode needs per-node tables; call refresh first")
        f2 = np.atleast_2d(f)
        g2 = np.atleast_3d(gradf) if f.ndim > 1 else gradf[None]
        if len(field) != len(f2):
            raise ConfigError("number of field tables does not match the spatial nodes")
        t0 = self.tables
        n, d = t0.n, t0.d
        sq = self.op.sqmu
        out = np.empty_like(g2)
        for m, (row, grow, tf) in enumerate(zip(f2, g2, field)):
            Gf = grow + row[:, None] * self.op.v
            dK = (tf.K - t0.K).reshape(n * d, n * d)
            lin = np.einsum("pij,pj->pi", tf.A - t0.A, Gf) - sq[:, None] * (dK @ Gf.reshape(-1)).reshape(n, d)
            out[m] = lin + self._quadratic(tf.K, row, grow)
        return out if f.ndim > 1 else out[0]

    def apply(self, f: np.ndarray, field: Optional[List[CollisionTables]] = None) -> np.ndarray:
        return -self.op.G_adjoint(self.flux(f, field))

    __call__ = apply


def apply_N(
    tables: CollisionTables,
    f: np.ndarray,
    cfg: NonlinConfig = NonlinConfig(),
    field: Optional[CollisionTables] = None,
    deriv: str = "spectral",
) -> np.ndarray:
    """N(f) at one spatial node.

    In field mode the tables for F = μ + √μ f are built from ``f`` unless
    passed as ``field``; the smallness guard is checked first.
    """
    nl = NonlinearOperator(tables, cfg, deriv)
    f = np.asarray(f, dtype=float)
    if cfg.eps_mode == "field":
        check_guard(tables.vel, f, cfg)
        if field is None:
            field = field_tables(tables.vel, tables.potential, f, tables.quad)
        return nl.apply(f[None], [field])[0]
    return nl.apply(f)


# ---------------------------------------------------------------------------
# full operator


def pair_kernel(vel: VelocityGrid, p: InteractionPotential, F: Optional[np.ndarray], eps_mode: str, quad: KernelQuadrature) -> np.ndarray:
    """Dense (n, d, n, d) array of W_q B(v_p, v_p - v_q; ∇F) without the self term."""
    if eps_mode == "field":
        table = build_dispersion_table(p, vel, "field", F=F)
    elif eps_mode in ("frozen", "maxwellian"):
        table = build_dispersion_table(p, vel, "maxwellian")
    elif eps_mode == "unity":
        table = build_dispersion_table(p, vel, "unity")
    else:
        raise ConfigError(f"unknown eps_mode {eps_mode!r}")
    rtab = RadialTable(table, quad, vel.d_v)
    return assemble_pairs(vel, rtab, quad, vel.weights)


def apply_Q(
    F: np.ndarray,
    vel: VelocityGrid,
    p: InteractionPotential,
    cfg: NonlinConfig = NonlinConfig(),
    quad: KernelQuadrature = KernelQuadrature(),
    kernel: Optional[np.ndarray] = None,
    eps_mode: Optional[str] = None,
) -> np.ndarray:
    """Full operator Q(F) = ∇_v·∫ B(v, v - v*; ∇F)(F* ∇F - F ∇F*) dv*.

    The flux is discretized as F F* (∇log F - ∇*log F*) with fourth-order
    differences, and the divergence as the negative weighted adjoint of the
    same difference matrix.  Then mass, momentum and energy are conserved
    to roundoff, ∫ log F Q(F) ≤ 0 holds exactly, and Q(μ) = 0 to roundoff,
    because the stencils are exact on quadratics and B(v, w) w = 0.

    ``eps_mode`` overrides ``cfg.eps_mode`` and also accepts ``"unity"``.
    """
    F = np.asarray(F, dtype=float)
    if np.any(F < 0) or not np.all(np.isfinite(F)):
        raise DomainError("Q(F) needs a finite nonnegative distribution")
    mode = cfg.eps_mode if eps_mode is None else eps_mode
    Bw = pair_kernel(vel, p, F, mode, quad) if kernel is None else kernel
    n, d = vel.n_nodes, vel.d_v
    D = vel.derivative_matrix("fd4")
    logF = np.log(np.maximum(F, 1e-300))
    ell = np.stack([vel.apply_1d(D, logF, i) for i in range(d)], axis=-1)
    M = np.einsum("piqj,q->pij", Bw, F)
    X = np.einsum("pij,pj->pi", M, ell) - (Bw.reshape(n * d, n * d) @ (F[:, None] * ell).reshape(-1)).reshape(n, d)
    X = F[:, None] * X
    w1 = vel.weights1d
    Dadj = D.T * w1[None, :] / w1[:, None]
    out = np.zeros(n)
    for i in range(d):
        out -= vel.apply_1d(Dadj, X[:, i], i)
    return out


def entropy_production(F: np.ndarray, Q: np.ndarray, vel: VelocityGrid) -> float:
    """∫ log F · Q(F) dv (nonpositive by the H-theorem)."""
    return float(np.sum(vel.weights * np.log(np.maximum(F, 1e-300)) * Q))


def guard_report(vel: VelocityGrid, f: np.ndarray) -> Dict[str, float]:
    vals = smallness_proxy(vel, np.atleast_2d(f))
    return {"max": float(vals.max()), "mean": float(vals.mean())}
