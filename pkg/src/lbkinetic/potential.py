"""Pair-interaction potentials described by their radial Fourier profile.

Only the transform V̂(r) is ever used: the collision kernel needs V̂², the
dielectric function needs V̂, and nothing needs the real-space potential.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConvergenceError, InvariantError

KINDS = ("debye", "gaussian", "tabulated")


@dataclass(frozen=True)
class InteractionPotential:
    """Radial Fourier profile V̂(r) truncated at ``k_max``.

    Parameters
    ----------
    kind : {"debye", "gaussian", "tabulated"}
        Debye is ``amplitude / (r² + screening²)``, Gaussian is
        ``amplitude * exp(-r² / (2 screening²))``.  Tabulated profiles are
        linearly interpolated from ``table`` and scaled by ``amplitude``.
    amplitude : float
        Overall strength, nonnegative (zero gives the free-streaming limit).
    screening : float
        Screening wavenumber κ (Debye) or width (Gaussian).
    k_max : float
        Truncation radius; V̂ vanishes beyond it.
    table : tuple of (r, value) pairs, optional
        Samples for ``kind="tabulated"``.
    """

    kind: str = "debye"
    amplitude: float = 1.0
    screening: float = 1.0
    k_max: float = 10.0
    table: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        name = "InteractionPotential"
        if self.kind not in KINDS:
            raise InvariantError(name, f"unknown kind {self.kind!r}")
        for field in ("amplitude", "screening", "k_max"):
            val = getattr(self, field)
            if not np.isfinite(val):
                raise InvariantError(name, f"{field} must be finite")
        if self.amplitude < 0:
            raise InvariantError(name, "amplitude must be nonnegative")
        if self.screening <= 0:
            raise InvariantError(name, "screening must be positive")
        if self.k_max <= 0:
            raise InvariantError(name, "k_max must be positive")
        if self.kind == "tabulated":
            if self.table is None or len(self.table) < 2:
                raise InvariantError(name, "tabulated kind needs at least two samples")
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 2 or tab.shape[1] != 2:
                raise InvariantError(name, "table must be a list of [r, value] pairs")
            if not np.all(np.isfinite(tab)):
                raise InvariantError(name, "table values must be finite")
            if np.any(np.diff(tab[:, 0]) <= 0) or tab[0, 0] < 0:
                raise InvariantError(name, "table radii must be increasing and nonnegative")
            if np.any(tab[:, 1] < 0):
                raise InvariantError(name, "V̂ must be nonnegative (positive-definite V)")
            object.__setattr__(self, "table", tuple(map(tuple, tab.tolist())))

    @property
    def support(self) -> float:
        """Radius beyond which V̂ is identically zero."""
        if self.kind == "tabulated":
            return min(self.k_max, self.table[-1][0])
        return self.k_max

    def __call__(self, r):
        return vhat(self, r)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "amplitude": self.amplitude,
            "screening": self.screening,
            "k_max": self.k_max,
        }
        if self.table is not None:
            out["table"] = [list(row) for row in self.table]
        return out


def vhat(p: InteractionPotential, r):
    """Evaluate V̂(r); zero beyond ``k_max``.  Vectorized over ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    if p.kind == "debye":
        val = p.amplitude / (r * r + p.screening**2)
    elif p.kind == "gaussian":
        val = p.amplitude * np.exp(-0.5 * (r / p.screening) ** 2)
    else:
        tab = np.asarray(p.table)
        val = p.amplitude * np.interp(r, tab[:, 0], tab[:, 1], right=0.0)
    val = np.where(r > p.k_max, 0.0, val)
    return val if val.ndim else float(val)


def radial_rule(p: InteractionPotential, n_r: int, r_max: Optional[float] = None):
    """Gauss-Legendre nodes and weights on ``[0, r_max]``.

    For tabulated profiles the interval is split at the table radii so each
    panel sees a smooth (linear) integrand.
    """
    r_max = p.support if r_max is None else min(r_max, p.support)
    if p.kind == "tabulated":
        breaks = [r for r, _ in p.table if 0 < r < r_max]
        edges = np.unique(np.concatenate([[0.0], breaks, [r_max]]))
    else:
        edges = np.array([0.0, r_max])
    x, w = leggauss(n_r)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (hi - lo) * (x + 1) + lo)
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _hyperplane_basis(w: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the orthogonal complement of ``w``."""
    w = np.asarray(w, dtype=float)
    q, _ = np.linalg.qr(np.column_stack([w, np.eye(len(w))]))
    return q[:, 1:len(w)].T


def _simpson(y: np.ndarray, h: float) -> float:
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def landau_matrix(p: InteractionPotential, w, n_r: int = 512, n_theta: int = 16) -> np.ndarray:
    """Quadrature of ∫_{w⊥} (k⊗k) V̂(|k|)² dk at a fixed resolution.

    The hyperplane is parametrized in polar coordinates (a line for d=2):
    composite Simpson in the radius with ``n_r`` intervals and the
    trapezoid rule in the angle.
    """
    w = np.asarray(w, dtype=float)
    d = len(w)
    if n_r % 2:
        n_r += 1
    basis = _hyperplane_basis(w)
    R = p.support
    r = np.linspace(0.0, R, n_r + 1)
    v2 = vhat(p, r) ** 2
    if d == 2:
        # k = t e, t over the whole line; the integrand is even in t
        e = basis[0]
        radial = 2.0 * _simpson(r**2 * v2, R / n_r)
        return radial * np.outer(e, e)
    if d != 3:
        raise ValueError("dimension must be 2 or 3")
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    dirs = np.cos(theta)[:, None] * basis[0] + np.sin(theta)[:, None] * basis[1]
    radial = _simpson(r**3 * v2, R / n_r)
    ang = (2.0 * np.pi / n_theta) * np.einsum("ti,tj->ij", dirs, dirs)
    return radial * ang


def landau_constant(
    p: InteractionPotential,
    d: int,
    w=None,
    rtol: float = 1e-12,
    n_start: int = 64,
    max_levels: int = 18,
) -> float:
    """Constant c with ∫_{w⊥}(k⊗k)V̂² dk = c P_w^⊥, by direct quadrature.

    The radial resolution is doubled until two successive estimates agree to
    ``rtol``; failure raises :class:`ConvergenceError`.

    Examples
    --------
    >>> ind = InteractionPotential("tabulated", table=((0, 1), (1, 1)), k_max=1.0)
    >>> round(landau_constant(ind, 3), 12) == round(np.pi / 4, 12)
    True
    """
    if d not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    if w is None:
        w = np.eye(d)[-1]
    w = np.asarray(w, dtype=float)
    if len(w) != d or np.linalg.norm(w) == 0:
        raise ValueError("w must be a nonzero vector of length d")

    def estimate(n):
        return np.trace(landau_matrix(p, w, n_r=n)) / (d - 1)

    n = n_start
    prev = estimate(n)
    for _ in range(max_levels):
        n *= 2
        cur = estimate(n)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300) or cur == prev:
            return float(cur)
        prev = cur
    raise ConvergenceError(
        f"landau_constant did not converge to rtol={rtol} "
        f"(last two estimates {prev:.16g}, {cur:.16g}); check k_max and the profile"
    )


def radial_moment(p: InteractionPotential, power: int, n_r: int = 128) -> float:
    """∫₀^{k_max} r^power V̂(r)² dr by Gauss-Legendre."""
    r, w = radial_rule(p, n_r)
    return float(np.sum(w * r**power * vhat(p, r) ** 2))
