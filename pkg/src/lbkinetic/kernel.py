"""Lenard-Balescu collision matrix and the velocity convolutions built on it.

With the delta function δ(k·w) integrated out, the collision matrix is a
radial-angular quadrature over the hyperplane w⊥:

    B(v, w) = (2/|w|) Σ_j c_j R(k̂_j, k̂_j·v) k̂_j ⊗ k̂_j,
    R(k̂, u) = ∫₀^{r_max} r^d V̂(r)² / |1 + V̂(r) H(k̂, u)|² dr,

where for d = 2 the single direction is the unit normal of w (c = 1) and for
d = 3 the k̂_j sweep a half circle of w⊥ (c_j = π / n_dir).  Every k̂_j is
orthogonal to w by construction, so B w = 0 up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dispersion import DispersionTable, build_dispersion_table, direction_weights
from .errors import ConfigError, DegenerateArgumentError, InvariantError
from .grid import VelocityGrid, maxwellian
from .potential import InteractionPotential, radial_rule, vhat

EPS_MODES = ("unity", "maxwellian", "field")

# Lattice corrections for the trapezoid sum of Y(ŵ)/|w| with the origin left
# out.  The missing part of the integral is h^{d-1} times a linear functional
# of the angular profile Y.  In 2-D only the cos(mθ) modes with m ≡ 0 mod 4
# survive the square symmetry; Z_m below are their constants (Z_0 is
# -4 ζ(1/2) β(1/2); the others come from Richardson-extrapolated lattice sums
# against a Gaussian).  In 3-D only the isotropic constant is used.
LATTICE_ZETA_2D = {
    0: 3.900264920001956,
    4: -2.080297866,
    8: -6.736498144,
    12: -4.860672148,
    16: -12.67522033,
    20: -3.26292276,
    24: -15.5427116,
    28: -7.2924613,
    32: -14.569644,
}
LATTICE_ZETA_3D = 2.837297479480620

# pair arrays are processed in chunks of this many pairs
_CHUNK = 1 << 18


@dataclass(frozen=True)
class KernelQuadrature:
    """Quadrature settings for the collision kernel.

    Parameters
    ----------
    n_r : int
        Gauss-Legendre points in the radial integral (at least 16).
    n_dir : int
        Angles on the half circle of w⊥ for d = 3 (ignored for d = 2, where
        the hyperplane is a line).
    r_max : float, optional
        Radial cutoff, at most the potential's ``k_max`` (default: ``k_max``).
    diag_exclusion : float, optional
        Radius ρ around v* = v left out of the convolution sums, at least one
        grid spacing (default: one grid spacing, which drops only v* = v).
    self_correction : bool
        Add the leading lattice correction for the dropped singular node to
        A and B₀.  It cancels exactly in L and N.
    min_w : float
        Smallest |w| accepted by :func:`collision_matrix`.
    """

    n_r: int = 64
    n_dir: int = 16
    r_max: Optional[float] = None
    diag_exclusion: Optional[float] = None
    self_correction: bool = True
    min_w: float = 1e-10

    def __post_init__(self):
        if self.n_r < 16:
            raise InvariantError("KernelQuadrature", "n_r must be at least 16")
        if self.n_dir < 2:
            raise InvariantError("KernelQuadrature", "n_dir must be at least 2")
        if self.r_max is not None and not self.r_max > 0:
            raise InvariantError("KernelQuadrature", "r_max must be positive")
        if self.diag_exclusion is not None and not self.diag_exclusion > 0:
            raise InvariantError("KernelQuadrature", "diag_exclusion must be positive")

    def rho(self, vel: VelocityGrid) -> float:
        rho = vel.h if self.diag_exclusion is None else self.diag_exclusion
        if rho < vel.h * (1.0 - 1e-12):
            raise InvariantError("KernelQuadrature", "diag_exclusion must be at least one grid spacing")
        return rho


# ---------------------------------------------------------------------------
# radial integrals


class RadialTable:
    """R(k̂, u) = ∫ r^d V̂² / |1 + V̂ H(k̂, u)|² dr on the table's lattice.

    Lookup is linear in u and uses the dispersion table's direction stencil,
    so it is exact at lattice nodes.
    """

    def __init__(self, table: DispersionTable, quad: KernelQuadrature, d: int):
        self.table = table
        self.d = d
        p = table.potential
        r, w = radial_rule(p, quad.n_r, quad.r_max)
        V = vhat(p, r)
        self.r, self.wr, self.V = r, w, V
        base = w * r**d * V**2
        if table.background == "unity":
            self.values = np.array([[base.sum()]])
            self.constant = True
            return
        self.constant = False
        rows = []
        for h in table.H:
            eps2 = np.abs(1.0 + V[None, :] * h[:, None]) ** 2
            rows.append((base[None, :] / eps2).sum(axis=1))
        self.values = np.array(rows)

    def lookup(self, khat: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.constant:
            return np.full(u.shape, self.values[0, 0])
        un = self.table.u_nodes
        du = un[1] - un[0]
        x = np.clip((u - un[0]) / du, 0.0, len(un) - 1.0)
        i0 = np.minimum(np.floor(x).astype(int), len(un) - 2)
        t = x - i0
        if self.table.isotropic:
            row = self.values[0]
            return (1.0 - t) * row[i0] + t * row[i0 + 1]
        idx, wts = direction_weights(self.table.directions, khat)
        out = np.zeros(u.shape)
        for c in range(idx.shape[-1]):
            rows = self.values[idx[..., c]]
            lo = np.take_along_axis(rows, i0[..., None], -1)[..., 0]
            hi = np.take_along_axis(rows, (i0 + 1)[..., None], -1)[..., 0]
            out += wts[..., c] * ((1.0 - t) * lo + t * hi)
        return out


def hyperplane_directions(w: np.ndarray, n_dir: int):
    """Quadrature directions in w⊥ and their weights, vectorized over w (…, d).

    The basis of w⊥ depends on w only up to sign, so w and -w produce the
    same directions.
    """
    w = np.asarray(w, dtype=float)
    d = w.shape[-1]
    wn = np.linalg.norm(w, axis=-1, keepdims=True)
    nhat = w / wn
    if d == 2:
        e = np.stack([-nhat[..., 1], nhat[..., 0]], axis=-1)
        # canonical sign: e and -e give the same matrix, keep it deterministic
        return e[..., None, :], np.ones(1)
    # flip the normal so its largest component is positive
    big = np.argmax(np.abs(nhat), axis=-1)
    sgn = np.sign(np.take_along_axis(nhat, big[..., None], -1))
    nhat = nhat * sgn
    # helper axis: the coordinate axis least aligned with the normal
    small = np.argmin(np.abs(nhat), axis=-1)
    helper = np.eye(3)[small]
    a = np.cross(nhat, helper)
    a /= np.linalg.norm(a, axis=-1, keepdims=True)
    b = np.cross(nhat, a)
    theta = np.pi * np.arange(n_dir) / n_dir
    dirs = np.cos(theta)[:, None] * a[..., None, :] + np.sin(theta)[:, None] * b[..., None, :]
    return dirs, np.full(n_dir, np.pi / n_dir)


def _eps_table_for(eps, p: InteractionPotential, vel: Optional[VelocityGrid] = None):
    if eps is None or eps == "unity":
        un = np.array([-1.0, 1.0])
        return DispersionTable(p, un, np.zeros((1, 2), dtype=complex), None, "unity")
    if isinstance(eps, DispersionTable):
        return eps
    if eps == "maxwellian":
        if vel is None:
            raise ConfigError("maxwellian mode needs a velocity grid to size the table")
        return build_dispersion_table(p, vel, "maxwellian")
    raise ConfigError(f"unsupported dielectric specification {eps!r}")


def collision_matrix(v, w, eps, p: InteractionPotential, q: KernelQuadrature = KernelQuadrature()) -> np.ndarray:
    """B(v, w) = (1/|w|) ∫_{w⊥} (k⊗k) V̂(|k|)² / |ε(k, k·v)|² dk.

    Reference evaluation for one pair: Gauss-Legendre in the radius, the
    trapezoid rule in the angle (d = 3), and ε drawn from ``eps`` (a
    :class:`DispersionTable`, or ``None``/``"unity"`` for ε ≡ 1) at every
    radial node.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = np.linalg.norm(w)
    if wn < q.min_w:
        raise DegenerateArgumentError(f"|w| = {wn:g} below {q.min_w:g}")
    table = _eps_table_for(eps, p)
    dirs, cw = hyperplane_directions(w, q.n_dir)
    r, wr = radial_rule(p, q.n_r, q.r_max)
    V = vhat(p, r)
    d = len(v)
    out = np.zeros((d, d))
    for khat, c in zip(dirs, cw):
        u = float(khat @ v)
        if table.background == "unity":
            eps2 = np.ones_like(r)
        else:
            kvec = r[:, None] * khat[None, :]
            e = table.eps(kvec, np.full(len(r), u))
            eps2 = np.abs(e) ** 2
        R = np.sum(wr * r**d * V**2 / eps2)
        out += c * R * np.outer(khat, khat)
    return (2.0 / wn) * out


# ---------------------------------------------------------------------------
# pair assembly


def _pair_matrices(vel: VelocityGrid, rtab: RadialTable, quad: KernelQuadrature, iu, ju):
    V = vel.nodes
    w = V[iu] - V[ju]
    vbar = 0.5 * (V[iu] + V[ju])
    wn = np.linalg.norm(w, axis=-1)
    dirs, cw = hyperplane_directions(w, quad.n_dir)
    u = np.einsum("pjd,pd->pj", dirs, vbar)
    R = rtab.lookup(dirs, u)
    coef = (2.0 / wn)[:, None] * cw[None, :] * R
    return np.einsum("pj,pja,pjb->pab", coef, dirs, dirs)


def self_cell_matrices(vel: VelocityGrid, rtab: RadialTable, n_theta: int = 128) -> np.ndarray:
    """Lattice correction for the dropped singular node, one d×d matrix per node.

    The correction is h^{d-1} times a lattice functional of the homogeneous
    profile Y(ŵ) = |w| B(v, w).  In 2-D the functional uses the cos(mθ) modes
    listed in ``LATTICE_ZETA_2D``; in 3-D only the direction average
    ⟨Y⟩ = ½∫_{S²} k̂⊗k̂ R dk̂ is corrected.
    """
    d = vel.d_v
    V = vel.nodes
    if d == 2:
        th = 2.0 * np.pi * np.arange(n_theta) / n_theta
        e = np.column_stack([-np.sin(th), np.cos(th)])  # unit normal of ŵ = (cos θ, sin θ)
        u = V @ e.T
        R = rtab.lookup(np.broadcast_to(e, u.shape + (2,)), u)
        Y = 2.0 * np.einsum("pk,ka,kb->pkab", R, e, e)
        out = np.zeros((len(V), 2, 2))
        for m, z in LATTICE_ZETA_2D.items():
            c = np.cos(m * th)
            scale = 1.0 / n_theta if m == 0 else 2.0 / n_theta
            out += z * scale * np.einsum("pkab,k->pab", Y, c)
        return vel.h * out
    x, wx = leggauss(n_theta // 2)
    ph = 2.0 * np.pi * np.arange(n_theta) / n_theta
    st = np.sqrt(1.0 - x * x)
    dirs = np.stack(
        [np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)), np.outer(x, np.ones_like(ph))], axis=-1
    ).reshape(-1, 3)
    wts = 0.5 * np.outer(wx, np.full(n_theta, 2.0 * np.pi / n_theta)).ravel()
    u = V @ dirs.T
    R = rtab.lookup(np.broadcast_to(dirs, u.shape + (3,)), u)
    avg = np.einsum("pk,k,ka,kb->pab", R, wts, dirs, dirs)
    return vel.h**2 * LATTICE_ZETA_3D * avg


@dataclass(eq=False)
class CollisionTables:
    """Dense velocity-pair kernel together with the background matrix A.

    ``K`` has shape (n, d, n, d) with ``K[p, :, q, :] = W_q √μ_q B(v_p, v_p - v_q)``
    for q ≠ p and the lattice self-correction √μ_p S_p on the diagonal.
    Then B₀[g] = Σ_q K[:, :, q, :] g_q and A = B₀[√μ].
    """

    vel: VelocityGrid
    potential: InteractionPotential
    quad: KernelQuadrature
    eps_mode: str
    K: np.ndarray
    A: np.ndarray
    table: Optional[DispersionTable] = None

    @property
    def n(self) -> int:
        return self.vel.n_nodes

    @property
    def d(self) -> int:
        return self.vel.d_v

    @property
    def Kmat(self) -> np.ndarray:
        n, d = self.n, self.d
        return self.K.reshape(n * d, n * d)


def pair_list(vel: VelocityGrid, quad: KernelQuadrature):
    """Unordered node pairs p < q kept by the diagonal exclusion."""
    n = vel.n_nodes
    rho = quad.rho(vel)
    iu, ju = np.triu_indices(n, 1)
    if rho > vel.h * (1.0 + 1e-12):
        dist = np.linalg.norm(vel.nodes[iu] - vel.nodes[ju], axis=-1)
        keep = dist >= rho * (1.0 - 1e-9)
        iu, ju = iu[keep], ju[keep]
    return iu, ju


def assemble_pairs(vel: VelocityGrid, rtab: RadialTable, quad: KernelQuadrature, weight_q: np.ndarray) -> np.ndarray:
    """Dense (n, d, n, d) array of weight_q[q] B(v_p, v_p - v_q) over kept pairs."""
    n, d = vel.n_nodes, vel.d_v
    K = np.zeros((n, d, n, d))
    iu, ju = pair_list(vel, quad)
    for lo in range(0, len(iu), _CHUNK):
        a, b = iu[lo:lo + _CHUNK], ju[lo:lo + _CHUNK]
        B = _pair_matrices(vel, rtab, quad, a, b)
        K[a, :, b, :] = weight_q[b][:, None, None] * B
        K[b, :, a, :] = weight_q[a][:, None, None] * B
    return K


def build_tables(
    vel: VelocityGrid,
    p: InteractionPotential,
    eps_mode: str = "maxwellian",
    quad: KernelQuadrature = KernelQuadrature(),
    table: Optional[DispersionTable] = None,
    f: Optional[np.ndarray] = None,
) -> CollisionTables:
    """Assemble the pair kernel and A for one dielectric background.

    ``eps_mode="field"`` needs either a field ``table`` or the perturbation
    profile ``f`` at the spatial node of interest.
    """
    if eps_mode not in EPS_MODES:
        raise ConfigError(f"unknown eps_mode {eps_mode!r}")
    if table is None:
        if eps_mode == "field":
            if f is None:
                raise ConfigError("field mode needs a dispersion table or the perturbation f")
            table = build_dispersion_table(p, vel, "field", f=f)
        else:
            table = build_dispersion_table(p, vel, eps_mode)
    rtab = RadialTable(table, quad, vel.d_v)
    mu = maxwellian(vel)
    sq = np.sqrt(mu)
    K = assemble_pairs(vel, rtab, quad, vel.weights * sq)
    if quad.self_correction and quad.rho(vel) <= vel.h * (1.0 + 1e-12):
        S = self_cell_matrices(vel, rtab)
        idx = np.arange(vel.n_nodes)
        K[idx, :, idx, :] = sq[:, None, None] * S
    A = np.einsum("piqj,q->pij", K, sq)
    return CollisionTables(vel, p, quad, eps_mode, K, A, table)


def build_A(vel: VelocityGrid, p: InteractionPotential, eps=None, q: KernelQuadrature = KernelQuadrature()) -> CollisionTables:
    """Tabulate A(v) = ∫ B(v, v - v*) μ(v*) dv* (Maxwellian dielectric by default)."""
    if eps is None:
        return build_tables(vel, p, "maxwellian", q)
    if isinstance(eps, str):
        return build_tables(vel, p, eps, q)
    return build_tables(vel, p, "field" if eps.background == "field" else eps.background, q, table=eps)


def b0_apply(tables: CollisionTables, g: np.ndarray) -> np.ndarray:
    """B₀[g](v) = ∫ B(v, v - v*) √μ* g* dv*.

    A scalar profile ``g`` (n,) gives a matrix field (n, d, d); a vector
    profile (n, d) is contracted and gives a vector field (n, d).
    """
    g = np.asarray(g, dtype=float)
    n, d = tables.n, tables.d
    if g.shape == (n,):
        return np.einsum("piqj,q->pij", tables.K, g)
    if g.shape == (n, d):
        return (tables.Kmat @ g.reshape(-1)).reshape(n, d)
    raise ValueError("g must have shape (n,) or (n, d)")


def bF_apply(
    p: InteractionPotential,
    f: Optional[np.ndarray],
    g: np.ndarray,
    eps_mode: str,
    vel: VelocityGrid,
    quad: KernelQuadrature = KernelQuadrature(),
    tables: Optional[CollisionTables] = None,
) -> np.ndarray:
    """B_{∇F}[g] with F = μ + √μ f and ε chosen by ``eps_mode``.

    Pass prebuilt ``tables`` to reuse an assembled kernel; with
    ``eps_mode="field"`` and f = 0 the result coincides with
    :func:`b0_apply` on the Maxwellian tables.
    """
    if tables is None:
        if eps_mode == "field":
            if f is None:
                raise ConfigError("field mode needs the perturbation f")
            if not np.any(f):
                tables = build_tables(vel, p, "maxwellian", quad)
            else:
                tables = build_tables(vel, p, "field", quad, f=f)
        else:
            tables = build_tables(vel, p, eps_mode, quad)
    return b0_apply(tables, g)
