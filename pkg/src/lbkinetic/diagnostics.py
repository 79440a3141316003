"""Entropy, conservation audits, decay fits and the macroscopic identities.

The macroscopic checks build the test functions ψ_a, ψ_b, ψ_c from
solutions of −Δφ = ∂^α q on the torus (q = a, b or c of f) and compare

    Ξ = −∬ (v·∇_x ψ) ∂^α f dv dx

with κ‖∂^α q‖² + E, where E = ∬ (I−P)(−v·∇_x ψ) (I−P)∂^α f is the
micro-micro remainder.  Spatial derivatives are spectral, so Ξ − E is the
macro-macro pairing up to velocity quadrature error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dispersion import DispersionTable, penrose_scan
from .errors import ConfigError, DomainError, FitError, InvariantError
from .grid import PhaseSpaceField, TorusGrid, VelocityGrid, kernel_basis, maxwellian, moments
from .linop import apply_P, burnett, macro_coefficients
from .potential import InteractionPotential

log = logging.getLogger(__name__)

ENTROPY_FLOOR = 1e-300
DECAY_MODELS = ("poly", "stretched")


# ---------------------------------------------------------------------------
# report container


@dataclass
class DecayFit:
    """Least-squares fit of log ‖f(t)‖² on a time window.

    ``parameter`` is the exponent δl (poly) or the rate K/C (stretched);
    ``offset`` is the fitted log-amplitude.
    """

    model: str
    parameter: float
    offset: float
    r2: float
    n_samples: int
    window: Tuple[float, float]
    theta: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "parameter": self.parameter,
            "offset": self.offset,
            "r2": self.r2,
            "n_samples": self.n_samples,
            "window": list(self.window),
            "theta": self.theta,
        }


@dataclass
class DiagnosticsReport:
    """Time series plus derived fits.

    Rows are dicts keyed by the series header; :meth:`add_row` refuses rows
    that go back in time.
    """

    series: List[Dict[str, float]] = field(default_factory=list)
    decay_fits: Dict[str, DecayFit] = field(default_factory=dict)
    macro_identity_residuals: List[Dict[str, float]] = field(default_factory=list)
    entropy_floor_hits: int = 0

    def add_row(self, row: Dict[str, float]) -> None:
        if self.series and row["t"] < self.series[-1]["t"]:
            raise InvariantError("DiagnosticsReport", "rows must be time-ordered")
        self.series.append(dict(row))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.series], dtype=float)

    def fit(self, model: str, key: str = "l2", theta: float = 2.0, window=None) -> DecayFit:
        """Fit ``key`` (a norm, squared before fitting) and store the result."""
        t = self.column("t")
        y = self.column(key) ** 2
        res = decay_fit(t, y, model, theta=theta, window=window)
        self.decay_fits[model] = res
        return res


# ---------------------------------------------------------------------------
# entropy and weighted norms


def full_distribution(f: PhaseSpaceField) -> PhaseSpaceField:
    """F = μ + √μ f as a phase-space field."""
    mu = maxwellian(f.vel)
    return f.copy(mu[None, :] + np.sqrt(mu)[None, :] * f.values)


def entropy(F: PhaseSpaceField, mass_budget: float = 1e-9, report: Optional[DiagnosticsReport] = None) -> float:
    """Discrete ∬ F log F dv dx of a full distribution.

    Nodes with F ≤ 1e-300 are floored there and counted.  In the tail of
    the box F = μ + √μ f falls below the discretization error of √μ f, so
    small negative values are expected there.  They are tolerated while
    their total mass stays below ``mass_budget`` times the total mass;
    beyond that the state is not a distribution and :class:`DomainError`
    is raised.
    """
    vals = np.asarray(F.values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DomainError("entropy of a non-finite distribution")
    W = F.vel.weights
    low = vals <= ENTROPY_FLOOR
    hits = int(np.count_nonzero(low))
    if hits:
        neg = float(np.sum(np.where(low, -vals, 0.0) @ W))
        total = float(np.sum(np.abs(vals) @ W))
        if neg > mass_budget * total:
            raise DomainError(
                f"{hits} nonpositive nodes carry mass fraction {neg / total:.3g}, above the floor budget {mass_budget:g}"
            )
        log.debug("entropy: %d nodes floored at %g", hits, ENTROPY_FLOOR)
        if report is not None:
            report.entropy_floor_hits += hits
    Fc = np.where(low, ENTROPY_FLOOR, vals)
    dens = Fc * np.log(Fc)
    return float(F.torus.cell_weight * np.sum(dens @ W))


def maxwellian_entropy(torus: TorusGrid, d_v: int) -> float:
    """(2π)^{d_x} ∫ μ log μ = −(2π)^{d_x}(d_v/2)(1 + log π)."""
    return -torus.volume * 0.5 * d_v * (1.0 + np.log(np.pi))


def weight(vel: VelocityGrid, l: float, theta: float, K: float) -> np.ndarray:
    """w_{l,θ,K}(v) = ⟨v⟩^l exp(K⟨v⟩^θ) on the nodes."""
    br = vel.bracket
    return br**l * np.exp(K * br**theta)


def weighted_l2(f: PhaseSpaceField, l: float = 0.0, theta: float = 2.0, K: float = 0.0, edge_tol: float = 1e-6) -> float:
    """∬ w²_{l,θ,K} |f|² dv dx.

    The integral lives on an unbounded velocity space, so a value is only
    meaningful when the integrand has decayed at the box edge.  If the
    largest integrand on the boundary nodes exceeds ``edge_tol`` times the
    interior maximum, or anything overflows, :class:`DomainError` reports
    the offending ⟨v⟩.

    For f = χ₀ and θ = 2 the weighted integrand is exp((2K − 1)|v|²) up to
    constants, so it is finite exactly when K < 1/2.
    """
    if not 0.0 < theta <= 2.0:
        raise ConfigError("theta must lie in (0, 2]")
    if K < 0:
        raise ConfigError("K must be nonnegative")
    if theta == 2.0 and K > 0:
        log.info("weighted_l2: θ = 2 with K = %g; the decay theory needs K small", K)
    vel = f.vel
    br = vel.bracket
    logw2 = 2.0 * l * np.log(br) + 2.0 * K * br**theta
    f2 = f.values**2
    with np.errstate(over="ignore", divide="ignore"):
        logint = logw2[None, :] + np.log(f2)
    top = np.max(logint)
    if not np.isfinite(top) and top > 0:
        raise DomainError("weighted integrand overflows")
    if top == -np.inf:
        return 0.0
    edge = _edge_mask(vel)
    edge_log = np.max(logint[:, edge])
    if edge_log - top > np.log(edge_tol) or top > 700.0:
        node = int(np.argmax(np.where(edge[None, :], logint, -np.inf)) % vel.n_nodes)
        raise DomainError(
            f"weighted integrand does not decay at the grid edge (⟨v⟩ = {br[node]:.4g}); "
            f"the weight w_{{l={l:g},θ={theta:g},K={K:g}}} is too strong for this f"
        )
    val = np.exp(logint - top) @ vel.weights
    return float(f.torus.cell_weight * np.exp(top) * val.sum())


def _edge_mask(vel: VelocityGrid) -> np.ndarray:
    idx = np.indices(vel.shape).reshape(vel.d_v, -1)
    return np.any((idx == 0) | (idx == vel.n_v - 1), axis=0)


# ---------------------------------------------------------------------------
# conservation audit


def invariants(f: PhaseSpaceField) -> Dict[str, object]:
    mass, mom, energy = moments(f)
    return {"mass": mass, "momentum": np.asarray(mom, dtype=float), "energy": energy}


def invariant_scales(torus: TorusGrid, d_v: int) -> Dict[str, float]:
    """Reference sizes for relative drift: the Maxwellian's mass and energy.

    Momentum uses the geometric mean of the two, since μ carries none.
    """
    mass = torus.volume
    energy = 0.5 * d_v * torus.volume
    return {"mass": mass, "momentum": float(np.sqrt(mass * energy)), "energy": energy}


def relative_drift(f0: PhaseSpaceField, f1: PhaseSpaceField) -> Dict[str, float]:
    """|Δ invariant| divided by :func:`invariant_scales`."""
    i0, i1 = invariants(f0), invariants(f1)
    s = invariant_scales(f0.torus, f0.vel.d_v)
    return {
        "mass": abs(i1["mass"] - i0["mass"]) / s["mass"],
        "momentum": float(np.max(np.abs(i1["momentum"] - i0["momentum"]))) / s["momentum"],
        "energy": abs(i1["energy"] - i0["energy"]) / s["energy"],
    }


def min_abs_eps(p: InteractionPotential, table: DispersionTable, n_k: int = 64, u_max: float = 6.0, n_u: int = 241) -> float:
    """min |ε| of a dispersion table over |k| ∈ [0.05, k_max], |u| ≤ u_max."""
    k = np.linspace(0.05, p.support, n_k)
    u = np.linspace(-u_max, u_max, n_u)
    return penrose_scan(p, table, k, u)[0]


# ---------------------------------------------------------------------------
# decay fits


def decay_fit(t, y, model: str, theta: float = 2.0, window: Optional[Sequence[float]] = None) -> DecayFit:
    """Fit a decay law to samples ``y`` ≈ ‖f(t)‖².

    ``poly``: log y = c − p log⟨t⟩ with ⟨t⟩ = √(1 + t²); returns p = δl.
    ``stretched``: log y = c − r t^{θ/(θ+1)}; returns r = K/C.

    Raises
    ------
    FitError
        Fewer than 10 samples in the window, nonpositive samples or a
        constant series.
    """
    if model not in DECAY_MODELS:
        raise ConfigError(f"model must be one of {DECAY_MODELS}")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise FitError("t and y must have the same length")
    if window is not None:
        t0, t1 = window
        sel = (t >= t0) & (t <= t1)
        t, y = t[sel], y[sel]
    else:
        t0, t1 = (float(t.min()), float(t.max())) if t.size else (0.0, 0.0)
    if t.size < 10:
        raise FitError(f"decay fit needs at least 10 samples in the window, got {t.size}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("decay fit needs positive finite samples")
    ly = np.log(y)
    if model == "poly":
        x = np.log(np.sqrt(1.0 + t * t))
    else:
        if theta <= 0:
            raise ConfigError("theta must be positive")
        x = t ** (theta / (theta + 1.0))
    if np.ptp(x) == 0:
        raise FitError("degenerate fit window: all abscissae coincide")
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    if ss_tot <= 1e-28 * max(1.0, float(np.sum(ly * ly))):
        raise FitError("degenerate fit window: the series is constant")
    slope, offset = np.polyfit(x, ly, 1)
    ss_res = float(np.sum((ly - (slope * x + offset)) ** 2))
    r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return DecayFit(model, float(-slope), float(offset), r2, int(t.size), (float(t0), float(t1)),
                    theta if model == "stretched" else None)


# ---------------------------------------------------------------------------
# Poisson problem and macroscopic identities


@dataclass
class PoissonResult:
    phi: np.ndarray
    removed_mean: float


def _kgrid(torus: TorusGrid) -> List[np.ndarray]:
    """Integer wavenumbers on the FFT cube, Nyquist zeroed."""
    k = np.fft.fftfreq(torus.n_x, d=1.0 / torus.n_x)
    k[torus.n_x // 2] = 0.0
    return np.meshgrid(*([k] * torus.d_x), indexing="ij")


def spectral_derivative(u: np.ndarray, torus: TorusGrid, alpha: Sequence[int]) -> np.ndarray:
    """∂^α of x-fields of shape (n_x nodes, ...) by FFT."""
    u = np.asarray(u, dtype=float)
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != torus.d_x:
        raise ValueError("multi-index length must equal d_x")
    if not any(alpha):
        return u.copy()
    rest = u.shape[1:]
    cube = u.reshape(torus.shape + rest)
    axes = tuple(range(torus.d_x))
    hat = np.fft.fftn(cube, axes=axes)
    mult = np.ones(torus.shape, dtype=complex)
    for kk, a in zip(_kgrid(torus), alpha):
        mult = mult * (1j * kk) ** a
    hat = hat * mult.reshape(torus.shape + (1,) * len(rest))
    return np.real(np.fft.ifftn(hat, axes=axes)).reshape(u.shape)


def poisson_solve(source: np.ndarray, torus: TorusGrid, alpha: Optional[Sequence[int]] = None) -> PoissonResult:
    """Solve −Δφ = ∂^α s on the torus with ∫φ = 0.

    The mean of ``source`` is subtracted first and returned as
    ``removed_mean``.  Works column-wise on arrays of shape (n_x nodes, ...).
    """
    if torus.d_x == 0:
        raise ConfigError("the Poisson problem needs d_x ≥ 1")
    s = np.asarray(source, dtype=float)
    mean = s.mean(axis=0)
    s = s - mean
    if alpha is not None:
        s = spectral_derivative(s, torus, alpha)
    rest = s.shape[1:]
    axes = tuple(range(torus.d_x))
    hat = np.fft.fftn(s.reshape(torus.shape + rest), axes=axes)
    k2 = sum(kk**2 for kk in _kgrid(torus))
    inv = np.zeros_like(k2)
    inv[k2 > 0] = 1.0 / k2[k2 > 0]
    hat = hat * inv.reshape(torus.shape + (1,) * len(rest))
    phi = np.real(np.fft.ifftn(hat, axes=axes)).reshape(s.shape)
    phi -= phi.mean(axis=0)
    return PoissonResult(phi, float(np.max(np.abs(mean))))


def _grad(u: np.ndarray, torus: TorusGrid) -> List[np.ndarray]:
    d = torus.d_x
    return [spectral_derivative(u, torus, tuple(int(i == j) for i in range(d))) for j in range(d)]


PRINTED_COEFFICIENTS = {
    "a": lambda d: -3.0 * (d + 2) / 4.0,
    "b": lambda d: 0.25,
    "c": lambda d: np.sqrt(d + 2) / np.sqrt(2.0 * d),
}

# Values of the macro-macro pairing worked out with the orthonormal χ_i = √2 v_i √μ
DERIVED_COEFFICIENTS = {
    "a": lambda d: -(d + 2) / 4.0,
    "b": lambda d: np.sqrt(2.0) / 4.0,
    "c": lambda d: np.sqrt(d + 2) / np.sqrt(2.0 * d),
}


def _velocity_tensor(vel: VelocityGrid):
    """χ_{d+1}, A_ij, B_i and v on the nodes."""
    chi = kernel_basis(vel)
    A, B = burnett(vel)
    return chi[-1], chi[1 : vel.d_v + 1], A, B


def macro_test_function(which: str, f: PhaseSpaceField, alpha: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """(ψ, ∂^α q) for the a-, b- or c-test function built from snapshot f.

    ψ_a = Σ_i ∂_iφ_a [√(d+2)/2 B_i − (d+2)/(2√2) χ_i],
    ψ_b = Σ_ij ∂_jφ_{b,i} A_ij − Σ_i ∂_iφ_{b,i} χ_{d+1}(d−2)/(2√(2d)),
    ψ_c = Σ_i ∂_iφ_c B_i,
    with −Δφ_q = ∂^α q and zero mean.
    """
    torus, vel = f.torus, f.vel
    d = torus.d_x
    if vel.d_v != d:
        raise ConfigError("the macroscopic identities need d_x = d_v")
    coeff = macro_coefficients(vel, f.values)  # (n_x, d+2)
    chi_e, chi_v, A, B = _velocity_tensor(vel)
    if which == "a":
        q = coeff[:, :1]
    elif which == "b":
        q = coeff[:, 1 : d + 1]
    elif which == "c":
        q = coeff[:, d + 1 :]
    else:
        raise ConfigError("which must be 'a', 'b' or 'c'")
    dq = spectral_derivative(q, torus, alpha)
    phi = poisson_solve(q, torus, alpha).phi
    g = _grad(phi, torus)  # g[j][:, i] = ∂_j φ_i
    n = vel.n_nodes
    psi = np.zeros((torus.n_nodes, n))
    if which == "a":
        prof = [np.sqrt(d + 2) / 2.0 * B[i] - (d + 2) / (2.0 * np.sqrt(2.0)) * chi_v[i] for i in range(d)]
        for i in range(d):
            psi += np.outer(g[i][:, 0], prof[i])
    elif which == "b":
        for i in range(d):
            for j in range(d):
                psi += np.outer(g[j][:, i], A[i, j])
        div = sum(g[i][:, i] for i in range(d))
        psi -= np.outer(div, chi_e) * (d - 2) / (2.0 * np.sqrt(2.0 * d))
    else:
        for i in range(d):
            psi += np.outer(g[i][:, 0], B[i])
    return psi, dq


@dataclass
class MacroIdentity:
    """Pieces of one macroscopic identity check."""

    which: str
    xi: float
    macro: float
    remainder: float
    q_norm2: float
    coefficient: float
    derived_coefficient: float
    residual: float
    derived_residual: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def macro_identity_check(f: PhaseSpaceField, alpha: Optional[Sequence[int]] = None, which: str = "b") -> MacroIdentity:
    """Evaluate Ξ, E and the residual |Ξ − (κ‖∂^α q‖² + E)| / scale.

    ``residual`` uses the coefficient κ of :data:`PRINTED_COEFFICIENTS`;
    ``derived_residual`` uses :data:`DERIVED_COEFFICIENTS`.  The scale is
    max(|Ξ|, |κ|‖∂^α q‖², |E|), so both residuals are relative.
    """
    torus, vel = f.torus, f.vel
    d = torus.d_x
    alpha = (0,) * d if alpha is None else tuple(alpha)
    psi, dq = macro_test_function(which, f, alpha)
    df = spectral_derivative(f.values, torus, alpha)
    gp = _grad(psi, torus)
    lhs = -sum(gp[k] * vel.nodes[:, k][None, :] for k in range(d))  # −v·∇_x ψ
    wx = torus.cell_weight
    W = vel.weights
    xi = float(wx * np.sum(lhs * df * W))
    P_l = apply_P(vel, lhs)
    P_f = apply_P(vel, df)
    macro = float(wx * np.sum(P_l * P_f * W))
    rem = float(wx * np.sum((lhs - P_l) * (df - P_f) * W))
    # −Δφ sees only the zero-mean part of ∂^α q
    dq = dq - dq.mean(axis=0)
    q2 = float(wx * np.sum(dq * dq))
    k_p = PRINTED_COEFFICIENTS[which](d)
    k_d = DERIVED_COEFFICIENTS[which](d)

    def rel(k):
        scale = max(abs(xi), abs(k) * q2, abs(rem), 1e-300)
        return abs(xi - (k * q2 + rem)) / scale

    return MacroIdentity(which, xi, macro, rem, q2, k_p, k_d, rel(k_p), rel(k_d))


def macro_identity_residuals(f: PhaseSpaceField, alpha: Optional[Sequence[int]] = None) -> Dict[str, float]:
    """Printed-coefficient residuals of the three identities, keyed a/b/c."""
    return {w: macro_identity_check(f, alpha, w).residual for w in ("a", "b", "c")}
