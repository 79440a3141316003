"""Penrose dielectric function through line marginals and the Plemelj split.

Along a unit direction k̂ the dielectric function reduces to

    ε(k, u) = 1 + V̂(|k|) H(k̂, u),   H = p.v.∫ φ'(s)/(u - s) ds + iπ φ'(u),

where φ is the marginal of F on the hyperplanes k̂·v = s.  The magnitude |k|
enters only through V̂, so tables store H per direction and phase velocity
and the radial dependence stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import map_coordinates
from scipy.special import exp1

from .errors import OutOfRangeError
from .grid import VelocityGrid, fd4_derivative, maxwellian
from .potential import InteractionPotential, vhat

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


def _gauss(s):
    return _INV_SQRT_PI * np.exp(-s * s)


def _gauss_d1(s):
    return -2.0 * s * _INV_SQRT_PI * np.exp(-s * s)


def _gauss_d2(s):
    return (4.0 * s * s - 2.0) * _INV_SQRT_PI * np.exp(-s * s)


@dataclass(frozen=True, eq=False)
class LineMarginal:
    """Marginal density φ(s) of a velocity distribution along ``direction``.

    The marginal is stored as ``gauss_mass`` times the exact marginal of μ
    plus a sampled residual.  The Maxwellian part therefore stays analytic,
    which keeps the Maxwellian dielectric function at roundoff accuracy.
    """

    direction: np.ndarray
    s: np.ndarray
    residual: np.ndarray
    gauss_mass: float = 0.0
    _res_d1: np.ndarray = field(default=None, repr=False)
    _res_d2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        ds = self.ds
        d1 = fd4_derivative(self.residual, ds)
        d2 = fd4_derivative(d1, ds)
        object.__setattr__(self, "_res_d1", d1)
        object.__setattr__(self, "_res_d2", d2)
        if np.any(self.residual != 0):
            object.__setattr__(self, "_spl1", CubicSpline(self.s, d1))
            object.__setattr__(self, "_spl2", CubicSpline(self.s, d2))
        else:
            object.__setattr__(self, "_spl1", None)
            object.__setattr__(self, "_spl2", None)

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def phi(self) -> np.ndarray:
        return self.gauss_mass * _gauss(self.s) + self.residual

    @property
    def dphi(self) -> np.ndarray:
        return self.gauss_mass * _gauss_d1(self.s) + self._res_d1

    @property
    def d2phi(self) -> np.ndarray:
        return self.gauss_mass * _gauss_d2(self.s) + self._res_d2

    def dphi_at(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.gauss_mass * _gauss_d1(u)
        if self._spl1 is not None:
            out = out + self._spl1(u)
        return out

    def d2phi_at(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.gauss_mass * _gauss_d2(u)
        if self._spl2 is not None:
            out = out + self._spl2(u)
        return out

    def mass(self) -> float:
        w = np.full(len(self.s), self.ds)
        w[0] = w[-1] = 0.5 * self.ds
        return float(w @ self.phi)


def s_grid(vel: VelocityGrid, ds: Optional[float] = None) -> np.ndarray:
    """Symmetric uniform grid on [-v_max√d, v_max√d] with a node at zero."""
    half = vel.v_max * np.sqrt(vel.d_v)
    ds = 0.5 * vel.h if ds is None else ds
    m = int(np.ceil(half / ds))
    return np.linspace(-half, half, 2 * m + 1)


def _unit(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    n = np.linalg.norm(k)
    if n == 0:
        raise ValueError("direction must be nonzero")
    return k / n


def maxwellian_marginal(direction, s: np.ndarray) -> LineMarginal:
    """Exact marginal π^{-1/2} e^{-s²} of μ, the same along every direction."""
    return LineMarginal(_unit(direction), np.asarray(s, dtype=float), np.zeros(len(s)), 1.0)


def _orth_complement(k: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(np.column_stack([k, np.eye(len(k))]))
    return q[:, 1:len(k)].T


def _slice_integrals(values: np.ndarray, vel: VelocityGrid, khat: np.ndarray, s: np.ndarray) -> np.ndarray:
    """∫ G δ(k̂·v - s) dv by multilinear interpolation on slice quadrature points."""
    ds = s[1] - s[0]
    half = vel.v_max * np.sqrt(vel.d_v)
    m = int(np.ceil(half / ds))
    t = ds * np.arange(-m, m + 1)
    perp = _orth_complement(khat)
    cube = values.reshape(vel.shape)
    if vel.d_v == 2:
        pts = s[:, None, None] * khat + t[None, :, None] * perp[0]
    else:
        pts = (
            s[:, None, None, None] * khat
            + t[None, :, None, None] * perp[0]
            + t[None, None, :, None] * perp[1]
        )
    coords = (pts + vel.v_max) / vel.h
    flat = coords.reshape(-1, vel.d_v).T
    vals = map_coordinates(cube, flat, order=1, mode="constant", cval=0.0, prefilter=False)
    vals = vals.reshape(pts.shape[:-1])
    # the slice integrand vanishes at the ends, so the plain sum is the trapezoid rule
    return vals.reshape(len(s), -1).sum(axis=1) * ds ** (vel.d_v - 1)


def line_marginal(F: np.ndarray, vel: VelocityGrid, khat, ds: Optional[float] = None) -> LineMarginal:
    """Numerical marginal of a sampled distribution ``F`` along ``khat``."""
    khat = np.asarray(khat, dtype=float)
    if abs(np.linalg.norm(khat) - 1.0) > 1e-12:
        raise ValueError("khat must be a unit vector")
    s = s_grid(vel, ds)
    phi = _slice_integrals(np.asarray(F, dtype=float), vel, khat, s)
    return LineMarginal(khat, s, phi, 0.0)


def field_marginal(f: np.ndarray, vel: VelocityGrid, khat, ds: Optional[float] = None) -> LineMarginal:
    """Marginal of F = μ + √μ f: analytic Maxwellian part plus sampled residual."""
    khat = np.asarray(khat, dtype=float)
    s = s_grid(vel, ds)
    res = _slice_integrals(np.sqrt(maxwellian(vel)) * np.asarray(f, dtype=float), vel, khat, s)
    return LineMarginal(khat, s, res, 1.0)


def hilbert_pv(m: LineMarginal, u, chunk: int = 512) -> np.ndarray:
    """Principal value p.v.∫ φ'(s)/(u - s) ds on the marginal's s-interval.

    The singular part is removed by subtracting φ'(u) e^{-(s-u)²}; the
    remaining integrand is smooth and decays, so the trapezoid rule converges
    rapidly, and the subtracted term has the closed form
    ½[E₁((a-u)²) - E₁((b-u)²)] on [a, b].
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    s = m.s
    a, b = s[0], s[-1]
    if np.any(u <= a) or np.any(u >= b):
        raise OutOfRangeError(f"phase velocity outside ({a:g}, {b:g})")
    ds = m.ds
    w = np.full(len(s), ds)
    w[0] = w[-1] = 0.5 * ds
    g1 = m.dphi
    out = np.empty(len(u))
    for lo in range(0, len(u), chunk):
        uu = u[lo:lo + chunk]
        d1u = m.dphi_at(uu)
        d2u = m.d2phi_at(uu)
        t = s[None, :] - uu[:, None]
        near = np.abs(t) < 1e-6 * ds
        safe = np.where(near, 1.0, t)
        q = (g1[None, :] - d1u[:, None] * np.exp(-t * t)) / (-safe)
        q = np.where(near, -d2u[:, None], q)
        bulk = q @ w
        tail = -d1u * 0.5 * (exp1((a - uu) ** 2) - exp1((b - uu) ** 2))
        out[lo:lo + chunk] = bulk + tail
    return out[0] if scalar else out


def plemelj_h(m: LineMarginal, u) -> np.ndarray:
    """H(k̂, u) = p.v.∫ φ'/(u - s) ds + iπ φ'(u)."""
    return hilbert_pv(m, u) + 1j * np.pi * m.dphi_at(u)


def epsilon(p: InteractionPotential, k, u, m: LineMarginal):
    """ε(k, u) = 1 + V̂(|k|)[p.v.∫ φ'(s)/(u - s) ds + iπ φ'(u)]."""
    k = np.asarray(k, dtype=float)
    kn = np.linalg.norm(k)
    if kn == 0:
        raise ValueError("|k| must be positive")
    return 1.0 + vhat(p, kn) * plemelj_h(m, u)


# ---------------------------------------------------------------------------
# direction lattices


def circle_directions(n: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([np.cos(theta), np.sin(theta)])


def sphere_directions(n: int) -> np.ndarray:
    """Antipodally symmetric near-uniform set of ``n`` (even) unit vectors."""
    half = max(n // 2, 1)
    i = np.arange(half) + 0.5
    z = i / half  # upper hemisphere
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    up = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return np.vstack([up, -up])


def default_directions(d: int, n: Optional[int] = None) -> np.ndarray:
    if d == 2:
        return circle_directions(64 if n is None else max(int(n), 32))
    return sphere_directions(26 if n is None else max(int(n), 26))


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True, eq=False)
class DispersionTable:
    """Tabulated H(k̂, u) on a (direction × phase-velocity) lattice.

    ``directions is None`` marks an isotropic background (the Maxwellian),
    where H does not depend on k̂.  ``background == "unity"`` means ε ≡ 1.
    Interpolation is linear in u and, for anisotropic tables, linear in the
    angle (d=2) or inverse-distance over the three nearest directions (d=3);
    lattice nodes are reproduced exactly.
    """

    potential: InteractionPotential
    u_nodes: np.ndarray
    H: np.ndarray
    directions: Optional[np.ndarray] = None
    background: str = "maxwellian"
    x_index: Optional[int] = None
    k_nodes: Optional[np.ndarray] = None

    @property
    def isotropic(self) -> bool:
        return self.directions is None

    def H_at(self, khat, u) -> np.ndarray:
        """Interpolated H at unit directions ``khat`` (…, d) and velocities ``u`` (…)."""
        u = np.asarray(u, dtype=float)
        if self.background == "unity":
            return np.zeros(np.shape(u), dtype=complex)
        un = self.u_nodes
        du = un[1] - un[0]
        x = np.clip((u - un[0]) / du, 0.0, len(un) - 1.0)
        i0 = np.minimum(np.floor(x).astype(int), len(un) - 2)
        t = x - i0
        if self.isotropic:
            h = self.H[0]
            return (1.0 - t) * h[i0] + t * h[i0 + 1]
        khat = np.asarray(khat, dtype=float)
        idx, wts = direction_weights(self.directions, khat)
        out = np.zeros(np.shape(u), dtype=complex)
        for c in range(idx.shape[-1]):
            row = self.H[idx[..., c]]
            hv = (1.0 - t) * np.take_along_axis(row, i0[..., None], -1)[..., 0] + t * np.take_along_axis(
                row, (i0 + 1)[..., None], -1
            )[..., 0]
            out = out + wts[..., c] * hv
        return out

    def eps(self, k, u):
        """Interpolated ε at wavevector(s) ``k`` (…, d) and phase velocity ``u``."""
        k = np.asarray(k, dtype=float)
        kn = np.linalg.norm(k, axis=-1)
        khat = k / np.where(kn == 0, 1.0, kn)[..., None]
        return 1.0 + vhat(self.potential, kn) * self.H_at(khat, u)

    def eps_grid(self, direction_index: int = 0) -> np.ndarray:
        """ε on the (k_nodes × u_nodes) lattice along one tabulated direction."""
        if self.k_nodes is None:
            raise ValueError("table has no radial lattice")
        row = self.H[0 if self.isotropic else direction_index]
        return 1.0 + vhat(self.potential, self.k_nodes)[:, None] * row[None, :]


def direction_weights(dirs: np.ndarray, khat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolation stencil over a direction lattice.

    Returns index and weight arrays of shape (…, m).  For planar lattices the
    stencil is the two neighbouring angles; for spherical lattices it is
    inverse-distance weighting over the three nearest directions, with exact
    reproduction at lattice nodes.
    """
    khat = np.asarray(khat, dtype=float)
    n = len(dirs)
    if dirs.shape[1] == 2:
        theta = np.mod(np.arctan2(khat[..., 1], khat[..., 0]), 2.0 * np.pi)
        x = theta / (2.0 * np.pi / n)
        i0 = np.floor(x).astype(int) % n
        t = x - np.floor(x)
        idx = np.stack([i0, (i0 + 1) % n], axis=-1)
        wts = np.stack([1.0 - t, t], axis=-1)
        return idx, wts
    cos = khat @ dirs.T
    idx = np.argsort(-cos, axis=-1)[..., :3]
    c = np.take_along_axis(cos, idx, -1)
    dist = np.arccos(np.clip(c, -1.0, 1.0))
    exact = dist[..., 0] < 1e-12
    inv = 1.0 / np.where(dist < 1e-12, 1.0, dist)
    wts = inv / inv.sum(axis=-1, keepdims=True)
    one = np.zeros_like(wts)
    one[..., 0] = 1.0
    wts = np.where(exact[..., None], one, wts)
    return idx, wts


def default_u_nodes(vel: VelocityGrid, du: float = 5e-4) -> np.ndarray:
    """Symmetric phase-velocity lattice strictly inside the s-interval."""
    half = vel.v_max * np.sqrt(vel.d_v)
    edge = half - 0.5 * vel.h
    m = int(np.ceil(edge / du))
    return np.linspace(-edge, edge, 2 * m + 1)


def build_dispersion_table(
    p: InteractionPotential,
    vel: VelocityGrid,
    background: str = "maxwellian",
    f: Optional[np.ndarray] = None,
    u_nodes: Optional[np.ndarray] = None,
    directions: Optional[np.ndarray] = None,
    k_nodes: Optional[np.ndarray] = None,
    x_index: Optional[int] = None,
    ds: Optional[float] = None,
    F: Optional[np.ndarray] = None,
) -> DispersionTable:
    """Tabulate H for the Maxwellian background, for F = μ + √μ f, or ε ≡ 1.

    Parameters
    ----------
    background : {"maxwellian", "field", "unity"}
    f : array, optional
        Velocity profile of the perturbation at one spatial node (field mode).
    F : array, optional
        Full distribution at one spatial node; replaces ``f`` in field mode
        when the distribution is not written as μ + √μ f.
    u_nodes : array, optional
        Phase-velocity lattice; default spacing 5e-4 for the Maxwellian
        table and 0.02 for field tables.
    directions : array, optional
        Direction lattice for field tables (defaults: 64 angles in 2-D,
        26 directions in 3-D).
    """
    if background == "unity":
        un = default_u_nodes(vel, 1.0) if u_nodes is None else np.asarray(u_nodes, dtype=float)
        return DispersionTable(p, un, np.zeros((1, len(un)), dtype=complex), None, "unity", x_index, k_nodes)
    if background == "maxwellian":
        un = default_u_nodes(vel) if u_nodes is None else np.asarray(u_nodes, dtype=float)
        m = maxwellian_marginal(np.eye(vel.d_v)[0], s_grid(vel, ds))
        H = plemelj_h(m, un)[None, :]
        return DispersionTable(p, un, H, None, "maxwellian", x_index, k_nodes)
    if background != "field":
        raise ValueError(f"unknown background {background!r}")
    if f is None and F is None:
        raise ValueError("field background needs the perturbation profile f")

    def marg(k):
        if F is not None:
            return line_marginal(F, vel, k, ds)
        return field_marginal(f, vel, k, ds)

    un = default_u_nodes(vel, 0.02) if u_nodes is None else np.asarray(u_nodes, dtype=float)
    if not np.allclose(un, -un[::-1]):
        raise ValueError("field tables need a symmetric u lattice")
    dirs = default_directions(vel.d_v) if directions is None else np.asarray(directions, dtype=float)
    n = len(dirs)
    H = np.empty((n, len(un)), dtype=complex)
    if vel.d_v == 2 and n % 2 == 0:
        # H(-k̂, u) = conj H(k̂, -u): only half the circle needs marginals
        half = n // 2
        for j in range(half):
            m = marg(dirs[j])
            H[j] = plemelj_h(m, un)
            H[j + half] = np.conj(H[j][::-1])
    else:
        for j in range(n):
            m = marg(dirs[j])
            H[j] = plemelj_h(m, un)
    return DispersionTable(p, un, H, dirs, "field", x_index, k_nodes)


def penrose_scan(
    p: InteractionPotential,
    table_or_marginals,
    k_values: Sequence[float],
    u_values: Sequence[float],
):
    """Minimum of |ε| over a (|k|, u[, direction]) lattice and its location.

    ``table_or_marginals`` is a :class:`LineMarginal`, a list of them (one
    per direction), or a :class:`DispersionTable`.  Marginals are evaluated
    directly; tables through their interpolation accessor.

    Returns
    -------
    (min_abs, (k, u, direction_index))
    """
    k = np.asarray(k_values, dtype=float)
    u = np.asarray(u_values, dtype=float)
    if k.size == 0 or u.size == 0:
        raise ValueError("scan ranges must be non-empty")
    vk = np.atleast_1d(vhat(p, k))
    if isinstance(table_or_marginals, DispersionTable):
        tab = table_or_marginals
        rows = tab.H if not tab.isotropic else tab.H[:1]
        if tab.background == "unity":
            rows = np.zeros((1, len(tab.u_nodes)), dtype=complex)
        Hs = []
        for j in range(len(rows)):
            khat = tab.directions[j] if not tab.isotropic else np.eye(2)[0]
            Hs.append(tab.H_at(np.broadcast_to(khat, u.shape + khat.shape), u))
        Hs = np.array(Hs)
    else:
        ms = table_or_marginals if isinstance(table_or_marginals, (list, tuple)) else [table_or_marginals]
        Hs = np.array([plemelj_h(m, u) for m in ms])
    mag = np.abs(1.0 + vk[None, :, None] * Hs[:, None, :])
    j, i, l = np.unravel_index(np.argmin(mag), mag.shape)
    return float(mag[j, i, l]), (float(k[i]), float(u[l]), int(j))
