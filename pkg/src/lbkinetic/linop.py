"""Linearized operator, macro-micro projection, Burnett functions and norms.

The linearized operator is discretized in first-order form.  With the
discrete factor G = ∇_v + v (vector valued) and its adjoint G* in the
trapezoid inner product,

    L[g] = -G* Φ[Gg],   Φ[h]_p = A_p h_p - √μ_p Σ_q K_pq h_q,

so -⟨g, L g⟩ = ⟨Gg, Φ[Gg]⟩ is a symmetric quadratic form and the
discrete operator is symmetric and nonpositive by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Dict, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lobpcg

from .errors import ConvergenceError
from .grid import PhaseSpaceField, VelocityGrid, d_dx, d_dv, kernel_basis, maxwellian
from .kernel import CollisionTables


# ---------------------------------------------------------------------------
# projection onto ker L


@dataclass
class MacroState:
    """Coefficients of f on χ₀, χ₁..χ_d, χ_{d+1} (per spatial node for fields)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def reconstruct(self, vel: VelocityGrid) -> np.ndarray:
        chi = kernel_basis(vel)
        a = np.asarray(self.a)[..., None]
        c = np.asarray(self.c)[..., None]
        out = a * chi[0] + c * chi[-1]
        b = np.asarray(self.b)
        for i in range(vel.d_v):
            out = out + b[..., i, None] * chi[1 + i]
        return out


def _basis_matrix(vel: VelocityGrid) -> np.ndarray:
    return np.array(kernel_basis(vel))  # (d+2, n)


def _gram_inverse(vel: VelocityGrid) -> np.ndarray:
    X = _basis_matrix(vel)
    gram = (X * vel.weights) @ X.T
    return np.linalg.inv(gram)


def macro_coefficients(vel: VelocityGrid, g: np.ndarray) -> np.ndarray:
    """Coefficients (…, d+2) of the W-orthogonal projection onto span{χ}.

    The discrete χ are orthonormal only up to quadrature error, so the
    coefficients are corrected by the inverse Gram matrix; this makes the
    discrete P an exact projector.
    """
    X = _basis_matrix(vel)
    raw = (np.asarray(g) * vel.weights) @ X.T
    return raw @ _gram_inverse(vel).T


def project_P(f: Union[np.ndarray, PhaseSpaceField], vel: Optional[VelocityGrid] = None):
    """Macro coefficients (a, b, c) of f and the micro part (I - P)f.

    ``f`` is a :class:`PhaseSpaceField` or a velocity array (…, n), in which
    case ``vel`` is required.  The micro part has the same type as ``f``.
    """
    if isinstance(f, PhaseSpaceField):
        state, micro = project_P_velocity(f.vel, f.values)
        return state, f.copy(micro)
    if vel is None:
        raise ValueError("a bare velocity array needs its VelocityGrid")
    return project_P_velocity(vel, f)


def project_P_velocity(vel: VelocityGrid, g: np.ndarray) -> Tuple[MacroState, np.ndarray]:
    g = np.asarray(g, dtype=float)
    coef = macro_coefficients(vel, g)
    d = vel.d_v
    state = MacroState(coef[..., 0], coef[..., 1:d + 1], coef[..., d + 1])
    return state, g - coef @ _basis_matrix(vel)


def apply_P(vel: VelocityGrid, g: np.ndarray) -> np.ndarray:
    return macro_coefficients(vel, g) @ _basis_matrix(vel)


# ---------------------------------------------------------------------------
# the operator


class LinearizedOperator:
    """Matrix-free L built on a :class:`CollisionTables`.

    Parameters
    ----------
    tables : CollisionTables
    deriv : {"spectral", "fd4"}
        Discrete ∇_v inside G.  The spectral default keeps L χ at the level
        of the Gaussian's truncation error.
    """

    def __init__(self, tables: CollisionTables, deriv: str = "spectral"):
        self.tables = tables
        vel = tables.vel
        self.vel = vel
        self.deriv = deriv
        self.D = vel.derivative_matrix(deriv)
        w1 = vel.weights1d
        # adjoint of D in the 1-D trapezoid inner product
        self.Dadj = self.D.T * w1[None, :] / w1[:, None]
        self.sqmu = np.sqrt(maxwellian(vel))
        self.v = vel.nodes

    @property
    def n(self) -> int:
        return self.vel.n_nodes

    def grad(self, g: np.ndarray) -> np.ndarray:
        """∇_v g, shape (…, n, d)."""
        return np.stack([self.vel.apply_1d(self.D, g, i) for i in range(self.vel.d_v)], axis=-1)

    def G(self, g: np.ndarray) -> np.ndarray:
        """(∇_v + v) g, shape (…, n, d)."""
        g = np.asarray(g, dtype=float)
        return self.grad(g) + g[..., None] * self.v

    def G_adjoint(self, h: np.ndarray) -> np.ndarray:
        """Adjoint of G in the weighted inner product; -G* is the divergence (∇ - v)·."""
        out = np.einsum("...pi,pi->...p", h, self.v)
        for i in range(self.vel.d_v):
            out = out + self.vel.apply_1d(self.Dadj, h[..., i], i)
        return out

    def flux(self, h: np.ndarray) -> np.ndarray:
        """A h - √μ B₀[h] for a vector field h (…, n, d)."""
        t = self.tables
        n, d = t.n, t.d
        Ah = np.einsum("pij,...pj->...pi", t.A, h)
        Kh = (h.reshape(h.shape[:-2] + (n * d,)) @ t.Kmat.T).reshape(h.shape)
        return Ah - self.sqmu[:, None] * Kh

    def apply(self, g: np.ndarray) -> np.ndarray:
        return -self.G_adjoint(self.flux(self.G(g)))

    __call__ = apply

    def dirichlet(self, g: np.ndarray) -> np.ndarray:
        """-⟨g, L g⟩ in first-order form ⟨Gg, A Gg⟩ - ⟨Gg, √μ B₀[Gg]⟩."""
        Gg = self.G(g)
        return np.einsum("...pi,...pi,p->...", Gg, self.flux(Gg), self.vel.weights)

    def bilinear(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """⟨f, L g⟩ computed as -⟨Gf, Φ[Gg]⟩."""
        return -np.einsum("...pi,...pi,p->...", self.G(f), self.flux(self.G(g)), self.vel.weights)

    def G_matrix(self) -> np.ndarray:
        """Dense G as an (n d, n) matrix."""
        n, d = self.n, self.vel.d_v
        cols = self.G(np.eye(n))  # (q, p, i)
        return cols.transpose(1, 2, 0).reshape(n * d, n)

    def flux_matrix(self) -> np.ndarray:
        """Dense (n d, n d) matrix of the flux map."""
        t = self.tables
        n, d = t.n, t.d
        M = -(self.sqmu[:, None, None, None] * t.K).reshape(n * d, n * d)
        idx = np.arange(n)
        blk = M.reshape(n, d, n, d)
        blk[idx, :, idx, :] += t.A
        return M

    def weighted_form(self) -> np.ndarray:
        """Dense symmetric matrix S with ⟨f, -L g⟩ = fᵀ S g."""
        Gm = self.G_matrix()
        Wd = np.repeat(self.vel.weights, self.vel.d_v)
        S = Gm.T @ ((Wd[:, None] * self.flux_matrix()) @ Gm)
        return 0.5 * (S + S.T)

    def matrix(self) -> np.ndarray:
        """Dense L (n, n): L = -W⁻¹ S."""
        return -self.weighted_form() / self.vel.weights[:, None]


def apply_L(tables: CollisionTables, g: np.ndarray, deriv: str = "spectral") -> np.ndarray:
    """L[g] at every leading index of ``g`` (…, n)."""
    return LinearizedOperator(tables, deriv).apply(g)


def dirichlet_form(tables: CollisionTables, g: np.ndarray, deriv: str = "spectral") -> np.ndarray:
    return LinearizedOperator(tables, deriv).dirichlet(g)


# ---------------------------------------------------------------------------
# A- and D-norms at one spatial node


def a_norm2(A: np.ndarray, vel: VelocityGrid, h: np.ndarray) -> np.ndarray:
    """‖h‖²_A = ∫ h·A h dv for vector fields h (…, n, d)."""
    return np.einsum("...pi,pij,...pj,p->...", h, A, h, vel.weights)


def grad_fd(vel: VelocityGrid, g: np.ndarray, method: str = "fd4") -> np.ndarray:
    D = vel.derivative_matrix(method)
    return np.stack([vel.apply_1d(D, g, i) for i in range(vel.d_v)], axis=-1)


def d_norm2(A: np.ndarray, vel: VelocityGrid, g: np.ndarray, method: str = "fd4") -> np.ndarray:
    """‖g‖²_D = ‖v g‖²_A + ‖∇_v g‖²_A."""
    g = np.asarray(g, dtype=float)
    return a_norm2(A, vel, g[..., None] * vel.nodes) + a_norm2(A, vel, grad_fd(vel, g, method))


def d_norm_matrix(A: np.ndarray, vel: VelocityGrid, method: str = "fd4") -> np.ndarray:
    """Dense symmetric matrix of the quadratic form ‖g‖²_D."""
    n, d = vel.n_nodes, vel.d_v
    Dg = grad_fd(vel, np.eye(n), method)  # (q, p, i)
    Gm = Dg.transpose(1, 2, 0).reshape(n * d, n)
    W = vel.weights
    blk = np.zeros((n, d, n, d))
    idx = np.arange(n)
    blk[idx, :, idx, :] = W[:, None, None] * A
    Mw = blk.reshape(n * d, n * d)
    vAv = np.einsum("pi,pij,pj->p", vel.nodes, A, vel.nodes)
    S = Gm.T @ Mw @ Gm + np.diag(W * vAv)
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------------------
# spectral gap


def micro_basis(vel: VelocityGrid) -> np.ndarray:
    """Columns spanning the W-orthogonal complement of span{χ}, W-orthonormal."""
    sw = np.sqrt(vel.weights)
    X = (_basis_matrix(vel) * sw).T
    q, _ = np.linalg.qr(X, mode="complete")
    Z = q[:, X.shape[1]:]
    return Z / sw[:, None]


DENSE_LIMIT = 2500


def spectral_gap(
    tables: CollisionTables,
    vel: Optional[VelocityGrid] = None,
    deriv: str = "fd4",
    method: str = "auto",
    tol: float = 1e-8,
    maxiter: int = 500,
    seed: int = 0,
) -> float:
    """Smallest Rayleigh quotient -⟨g, Lg⟩ / ‖(I - P)g‖²_D over micro g.

    Dense generalized eigensolve for small grids; LOBPCG on the shifted
    pencil beyond ``DENSE_LIMIT`` nodes (raises :class:`ConvergenceError`
    when the residual stalls above ``tol``).

    The default discretization of ∇_v here is ``fd4``: the periodic spectral
    derivative lets micro functions wrap around the truncated box, and those
    wrap-around modes dissipate arbitrarily slowly as n_v grows, so the
    spectral-G quotient has no resolution-independent lower bound.
    """
    vel = tables.vel if vel is None else vel
    op = LinearizedOperator(tables, deriv)
    n = vel.n_nodes
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lobpcg"
    if method == "dense":
        Q = micro_basis(vel)
        S = op.weighted_form()
        Dm = d_norm_matrix(tables.A, vel, deriv)
        KL = Q.T @ S @ Q
        KD = Q.T @ Dm @ Q
        KL = 0.5 * (KL + KL.T)
        KD = 0.5 * (KD + KD.T)
        lam = scipy.linalg.eigh(KL, KD, eigvals_only=True, subset_by_index=[0, 0])
        return float(lam[0])
    if method != "lobpcg":
        raise ValueError(f"unknown method {method!r}")
    W = vel.weights
    A = tables.A

    def micro(y):
        return y - apply_P(vel, y.T).T

    def pw(y):
        return W[:, None] * apply_P(vel, y.T).T

    def dnorm_apply(g):
        # W-weighted Hessian of ‖g‖²_D, columns of g
        gt = g.T
        h = gt[..., None] * vel.nodes
        out = (W * np.einsum("pi,pij,...pj->...p", vel.nodes, A, h))
        gr = grad_fd(vel, gt, deriv)
        flux = W[:, None] * np.einsum("pij,...pj->...pi", A, gr)
        Dm = vel.derivative_matrix(deriv)
        for i in range(vel.d_v):
            out = out + vel.apply_1d(Dm.T, flux[..., i], i)
        return out.T

    trace_scale = float(np.einsum("pii,p->", A, W)) + 1.0
    sigma = 1e3 * trace_scale

    def amat(y):
        y = np.atleast_2d(y.T).T if y.ndim == 1 else y
        m = micro(y)
        Lm = -op.apply(m.T).T * W[:, None]
        return micro_T(Lm) + sigma * pw(y)

    def micro_T(z):
        # (I - P)ᵀ z for W-orthogonal P: z - W P W⁻¹ z
        return z - W[:, None] * apply_P(vel, (z / W[:, None]).T).T

    def bmat(y):
        y = np.atleast_2d(y.T).T if y.ndim == 1 else y
        m = micro(y)
        return micro_T(dnorm_apply(m)) + pw(y)

    Aop = LinearOperator((n, n), matvec=amat, matmat=amat, dtype=float)
    Bop = LinearOperator((n, n), matvec=bmat, matmat=bmat, dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 4))
    lam, _, hist = lobpcg(Aop, X, B=Bop, largest=False, tol=tol, maxiter=maxiter, retResidualNormsHistory=True)
    res = np.asarray(hist[-1])
    if not np.all(np.isfinite(lam)) or res[0] > tol * max(1.0, abs(lam[0])) * 10:
        raise ConvergenceError(f"spectral gap iteration stalled (residual {res[0]:.3g} after {maxiter} iterations)")
    return float(np.min(lam))


def fitted_coercivity(tables: CollisionTables, samples: np.ndarray, deriv: str = "spectral") -> Dict[str, float]:
    """Empirical constants of the lower and upper bounds of L on random samples.

    ``lambda`` is the smallest ratio dirichlet(g) / ‖(I - P)g‖²_D and ``C`` the
    largest |⟨f, Lg⟩| / (‖(I - P)f‖_D ‖(I - P)g‖_D) over consecutive pairs.
    """
    vel = tables.vel
    op = LinearizedOperator(tables, deriv)
    g = np.asarray(samples, dtype=float)
    micro = g - apply_P(vel, g)
    dn = d_norm2(tables.A, vel, micro, deriv)
    ratio = op.dirichlet(g) / dn
    f2 = np.roll(g, 1, axis=0)
    upper = np.abs(op.bilinear(f2, g)) / np.sqrt(np.roll(dn, 1) * dn)
    return {"lambda": float(ratio.min()), "C": float(upper.max())}


# ---------------------------------------------------------------------------
# Burnett functions


def burnett(vel: VelocityGrid) -> Tuple[np.ndarray, np.ndarray]:
    """A_ij = (v_i v_j - δ_ij |v|²/d)√μ and B_i = v_i(2|v|² - (d+2))/√(d+2) √μ.

    Returns arrays of shape (d, d, n) and (d, n).
    """
    d = vel.d_v
    v = vel.nodes
    s2 = vel.speed2
    sq = np.sqrt(maxwellian(vel))
    A = np.einsum("pi,pj->ijp", v, v) - np.eye(d)[:, :, None] * (s2 / d)
    A = A * sq
    B = (v * (2.0 * s2 - (d + 2))[:, None] / np.sqrt(d + 2) * sq[:, None]).T
    return A, B


# ---------------------------------------------------------------------------
# weighted norm hierarchy


@dataclass
class NormReport:
    """Norms of a phase-space field.

    ``a_norm`` is ‖∇_v f‖_A and ``v_a_norm`` is ‖v f‖_A, so that
    ``d_norm² = v_a_norm² + a_norm²``.  ``contributions`` maps (N₁, N₂) to
    the energy-functional term with that split.
    """

    l2: float
    a_norm: float
    v_a_norm: float
    d_norm: float
    e_N: float
    d_N: float
    N_used: int
    contributions: Dict[Tuple[int, int], float] = field(default_factory=dict)
    d_contributions: Dict[Tuple[int, int], float] = field(default_factory=dict)


def _multi_indices(dim: int, order: int):
    return [m for m in product(range(order + 1), repeat=dim) if sum(m) <= order]


def _derivatives(f: PhaseSpaceField, N: int, M: int, method: str):
    """∂^α_β f for |α| ≤ N, |β| ≤ M, keyed by (α, β)."""
    out = {}
    for alpha in _multi_indices(f.torus.d_x, N):
        g = f
        for ax, k in enumerate(alpha):
            for _ in range(k):
                g = d_dx(g, ax)
        for beta in _multi_indices(f.vel.d_v, M):
            h = g
            for ax, k in enumerate(beta):
                for _ in range(k):
                    h = d_dv(h, ax, method)
            out[(alpha, beta)] = h.values
    return out


def norms(
    f: PhaseSpaceField,
    A: np.ndarray,
    N_used: int = 1,
    weight_power: float = 0.0,
    method: str = "fd4",
) -> NormReport:
    """Energy and dissipation functionals e_N, d_N of ⟨v⟩^s f, s = ``weight_power``.

    e_N = Σ_{N₁+N₂≤N} Σ_{|α|≤N₁, |β|≤N₂} ∬ ⟨v⟩^{2(N-N₁-2N₂)} |∂^α_β f|²,
    and d_N is the same sum with the weighted D-norm of each derivative.
    Spatial derivatives are spectral, velocity derivatives use ``method``.
    """
    if not 0 <= N_used <= 2:
        raise ValueError("N_used must be 0, 1 or 2")
    vel, torus = f.vel, f.torus
    br = vel.bracket
    g = f.copy(f.values * br**weight_power)
    wx = torus.cell_weight
    W = vel.weights
    N = N_used
    derivs = _derivatives(g, N, N, method)
    vg = [g.copy(g.values * vel.nodes[:, i]) for i in range(vel.d_v)]
    dv = [_derivatives(x, N, N, method) for x in vg]

    def weighted_l2(arr, power):
        return float(np.sum(arr**2 * (br ** (2 * power) * W)) * wx)

    def weighted_d(alpha, beta, power):
        wt = br ** (2 * power)
        # ∂^α_β (v f) as a vector field
        h = np.stack([dv[i][(alpha, beta)] for i in range(vel.d_v)], axis=-1)
        base = derivs[(alpha, beta)]
        gr = np.stack([vel.apply_1d(vel.derivative_matrix(method), base, i) for i in range(vel.d_v)], axis=-1)
        val = np.einsum("xpi,pij,xpj,p->", h, A, h, W * wt) + np.einsum("xpi,pij,xpj,p->", gr, A, gr, W * wt)
        return float(val * wx)

    contrib, dcontrib = {}, {}
    cache_e, cache_d = {}, {}
    for N1 in range(N + 1):
        for N2 in range(N + 1 - N1):
            power = N - N1 - 2 * N2
            te = td = 0.0
            for alpha in _multi_indices(torus.d_x, N1):
                for beta in _multi_indices(vel.d_v, N2):
                    key = (alpha, beta, power)
                    if key not in cache_e:
                        cache_e[key] = weighted_l2(derivs[(alpha, beta)], power)
                        cache_d[key] = weighted_d(alpha, beta, power)
                    te += cache_e[key]
                    td += cache_d[key]
            contrib[(N1, N2)] = te
            dcontrib[(N1, N2)] = td
    zero = (0,) * torus.d_x, (0,) * vel.d_v
    base = derivs[zero]
    gr = np.stack([vel.apply_1d(vel.derivative_matrix(method), base, i) for i in range(vel.d_v)], axis=-1)
    h = base[..., None] * vel.nodes
    a2 = float(np.einsum("xpi,pij,xpj,p->", gr, A, gr, W) * wx)
    va2 = float(np.einsum("xpi,pij,xpj,p->", h, A, h, W) * wx)
    return NormReport(
        l2=float(np.sqrt(weighted_l2(base, 0))),
        a_norm=float(np.sqrt(a2)),
        v_a_norm=float(np.sqrt(va2)),
        d_norm=float(np.sqrt(a2 + va2)),
        e_N=float(sum(contrib.values())),
        d_N=float(sum(dcontrib.values())),
        N_used=N,
        contributions=contrib,
        d_contributions=dcontrib,
    )


def equivalence_ratios(A: np.ndarray, vel: VelocityGrid, h: np.ndarray, g: np.ndarray, method: str = "fd4"):
    """Ratios entering the A- and D-norm sandwiches for samples h (m, n, d) and g (m, n).

    Returns a dict of arrays:
    ``A_lower`` = ‖⟨v⟩^{-3/2} h‖ / ‖h‖_A, ``A_upper`` = ‖h‖_A / ‖⟨v⟩^{-1/2} h‖,
    ``D_lower`` = (‖⟨v⟩^{-1/2} g‖ + ‖⟨v⟩^{-3/2} ∇g‖) / ‖g‖_D and
    ``D_upper`` = ‖g‖_D / (‖⟨v⟩^{-1/2} g‖ + ‖⟨v⟩^{-1/2} ∇g‖).
    """
    W = vel.weights
    br = vel.bracket

    def l2(x, p):
        x = np.asarray(x)
        if x.ndim == 3:
            return np.sqrt(np.einsum("mpi,mpi,p->m", x, x, W * br ** (2 * p)))
        return np.sqrt(np.einsum("mp,mp,p->m", x, x, W * br ** (2 * p)))

    hA = np.sqrt(a_norm2(A, vel, h))
    gD = np.sqrt(d_norm2(A, vel, g, method))
    gr = grad_fd(vel, g, method)
    return {
        "A_lower": l2(h, -1.5) / hA,
        "A_upper": hA / l2(h, -0.5),
        "D_lower": (l2(g, -0.5) + l2(gr, -1.5)) / gD,
        "D_upper": gD / (l2(g, -0.5) + l2(gr, -0.5)),
    }
