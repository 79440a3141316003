"""Phase-space grids: a periodic spatial torus times a truncated velocity box.

Velocity arrays are flattened in C order (first velocity axis slowest).  A
phase-space array has shape ``(n_x_nodes, n_v_nodes)`` with the spatial index
slowest, so its flattened form matches the snapshot layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Dict, List, Tuple

import numpy as np
from scipy.special import erfc

from .errors import InvariantError

DERIVATIVES = ("fd4", "spectral")


# ---------------------------------------------------------------------------
# one-dimensional derivative stencils


def fd4_matrix(n: int, h: float) -> np.ndarray:
    """Fourth-order finite-difference first derivative, one-sided near the ends."""
    if n < 5:
        raise ValueError("fd4 needs at least 5 points")
    D = np.zeros((n, n))
    c = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    for i in range(2, n - 2):
        D[i, i - 2:i + 3] = c
    left = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
    left1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0
    D[0, 0:5] = left
    D[1, 0:5] = left1
    D[-1, -5:] = -left[::-1]
    D[-2, -5:] = -left1[::-1]
    return D / h


def spectral_matrix(n: int, h: float) -> np.ndarray:
    """Fourier differentiation matrix treating the n samples as one period.

    Suitable for functions that decay to roundoff at both ends of the box, as
    everything multiplied by √μ does at the default truncation.  The Nyquist
    mode is given zero derivative so the matrix is real and antisymmetric.
    """
    k = np.fft.fftfreq(n, d=h) * 2.0 * np.pi
    if n % 2 == 0:
        k[n // 2] = 0.0
    eye = np.eye(n)
    D = np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0))
    return 0.5 * (D - D.T)


def fd4_derivative(y: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Apply :func:`fd4_matrix` along ``axis`` without forming the matrix."""
    y = np.moveaxis(np.asarray(y, dtype=float), axis, -1)
    out = np.empty_like(y)
    out[..., 2:-2] = (y[..., :-4] - 8 * y[..., 1:-3] + 8 * y[..., 3:-1] - y[..., 4:]) / (12 * h)
    left = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * h)
    left1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12.0 * h)
    out[..., 0] = y[..., :5] @ left
    out[..., 1] = y[..., :5] @ left1
    out[..., -1] = -(y[..., -5:] @ left[::-1])
    out[..., -2] = -(y[..., -5:] @ left1[::-1])
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on [0, 2π)^{d_x}.

    ``d_x = 0`` is accepted as the spatially homogeneous case: a single node
    of unit weight.
    """

    d_x: int = 1
    n_x: int = 16

    def __post_init__(self):
        if self.d_x not in (0, 1, 2):
            raise InvariantError("TorusGrid", "d_x must be 0, 1 or 2")
        if self.d_x > 0:
            n = self.n_x
            if n < 4 or n % 2 or (n & (n - 1)):
                raise InvariantError("TorusGrid", "n_x must be a power of two, at least 4")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n_x,) * self.d_x

    @property
    def n_nodes(self) -> int:
        return self.n_x**self.d_x if self.d_x else 1

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.n_x

    @property
    def cell_weight(self) -> float:
        return self.spacing**self.d_x if self.d_x else 1.0

    @property
    def volume(self) -> float:
        return (2.0 * np.pi) ** self.d_x

    @cached_property
    def axis(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_x)

    @cached_property
    def nodes(self) -> np.ndarray:
        if self.d_x == 0:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*([self.axis] * self.d_x), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers per node of the FFT layout, shape (n_nodes, d_x)."""
        if self.d_x == 0:
            return np.zeros((1, 0))
        k = np.fft.fftfreq(self.n_x, d=1.0 / self.n_x)
        mesh = np.meshgrid(*([k] * self.d_x), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform tensor grid on [-v_max, v_max]^{d_v} with trapezoid weights."""

    d_v: int = 2
    n_v: int = 32
    v_max: float = 8.0

    def __post_init__(self):
        if self.d_v not in (2, 3):
            raise InvariantError("VelocityGrid", "d_v must be 2 or 3")
        if self.n_v < 5:
            raise InvariantError("VelocityGrid", "n_v must be at least 5")
        if not (np.isfinite(self.v_max) and self.v_max > 0):
            raise InvariantError("VelocityGrid", "v_max must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.v_max / (self.n_v - 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n_v,) * self.d_v

    @property
    def n_nodes(self) -> int:
        return self.n_v**self.d_v

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.n_v)

    @cached_property
    def weights1d(self) -> np.ndarray:
        w = np.full(self.n_v, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @cached_property
    def weights(self) -> np.ndarray:
        w = self.weights1d
        out = w
        for _ in range(self.d_v - 1):
            out = np.multiply.outer(out, w)
        return out.ravel()

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.d_v), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def speed2(self) -> np.ndarray:
        return np.sum(self.nodes**2, axis=-1)

    @cached_property
    def bracket(self) -> np.ndarray:
        """⟨v⟩ = (1 + |v|²)^{1/2} at every node."""
        return np.sqrt(1.0 + self.speed2)

    @property
    def exterior_mass_bound(self) -> float:
        return self.d_v * float(erfc(self.v_max))

    def derivative_matrix(self, method: str = "fd4") -> np.ndarray:
        if method == "fd4":
            return fd4_matrix(self.n_v, self.h)
        if method == "spectral":
            return spectral_matrix(self.n_v, self.h)
        raise ValueError(f"unknown derivative method {method!r}")

    def apply_1d(self, mat: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
        """Apply an (n_v, n_v) matrix along velocity ``axis`` of flattened data."""
        arr = np.asarray(arr)
        lead = arr.shape[:-1]
        cube = arr.reshape(lead + self.shape)
        ax = len(lead) + axis
        out = np.moveaxis(np.tensordot(mat, cube, axes=([1], [ax])), 0, ax)
        return out.reshape(arr.shape)

    def integrate(self, arr: np.ndarray) -> np.ndarray:
        """Trapezoid integral over velocity of the trailing axis."""
        return np.asarray(arr) @ self.weights


@dataclass
class PhaseSpaceField:
    """Perturbation f(x, v) sampled on a torus times velocity grid."""

    torus: TorusGrid
    vel: VelocityGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (self.torus.n_nodes, self.vel.n_nodes)
        if vals.size != expected[0] * expected[1]:
            raise InvariantError(
                "PhaseSpaceField",
                f"array length {vals.size} != {expected[0] * expected[1]}",
            )
        vals = vals.reshape(expected)
        if not np.all(np.isfinite(vals)):
            raise InvariantError("PhaseSpaceField", "values must be finite")
        self.values = vals

    def copy(self, values=None) -> "PhaseSpaceField":
        return PhaseSpaceField(self.torus, self.vel, self.values.copy() if values is None else values)

    @classmethod
    def zeros(cls, torus: TorusGrid, vel: VelocityGrid) -> "PhaseSpaceField":
        return cls(torus, vel, np.zeros((torus.n_nodes, vel.n_nodes)))

    @classmethod
    def from_velocity(cls, torus: TorusGrid, vel: VelocityGrid, g: np.ndarray) -> "PhaseSpaceField":
        """x-constant field with velocity profile ``g``."""
        return cls(torus, vel, np.tile(np.asarray(g, dtype=float), (torus.n_nodes, 1)))


# ---------------------------------------------------------------------------
# Maxwellian data and moments


def maxwellian(vel: VelocityGrid) -> np.ndarray:
    """μ(v) = π^{-d/2} exp(-|v|²) on the nodes."""
    return np.pi ** (-0.5 * vel.d_v) * np.exp(-vel.speed2)


def kernel_basis(vel: VelocityGrid) -> List[np.ndarray]:
    """Orthonormal basis χ₀, …, χ_{d+1} of the collision invariants."""
    d = vel.d_v
    sq = np.sqrt(maxwellian(vel))
    out = [sq]
    for i in range(d):
        out.append(np.sqrt(2.0) * vel.nodes[:, i] * sq)
    out.append((2.0 * vel.speed2 - d) / np.sqrt(2.0 * d) * sq)
    return out


def moments(f: PhaseSpaceField):
    """(mass, momentum, energy) = ∬ (1, v, |v|²) √μ f dv dx."""
    vel = f.vel
    sq = np.sqrt(maxwellian(vel))
    wx = f.torus.cell_weight
    vf = f.values.sum(axis=0) * wx  # ∫ f dx at each velocity node
    weighted = vel.weights * sq * vf
    mass = weighted.sum()
    mom = vel.nodes.T @ weighted
    energy = vel.speed2 @ weighted
    return float(mass), mom, float(energy)


@dataclass(frozen=True)
class MomentEntry:
    name: str
    value: float
    target: float

    @property
    def error(self) -> float:
        return abs(self.value - self.target)


def moment_table(vel: VelocityGrid) -> Dict[str, MomentEntry]:
    """Discrete Gaussian moment identities paired with their exact values."""
    d = vel.d_v
    mu = maxwellian(vel)
    sq = np.sqrt(mu)
    v = vel.nodes
    s2 = vel.speed2
    w = vel.weights
    chi = kernel_basis(vel)

    def ip(a, b):
        return float(np.sum(w * a * b))

    rows = [
        ("int v1^4 mu", ip(v[:, 0] ** 4, mu), 0.75),
        ("int v1^2 v2^2 mu", ip(v[:, 0] ** 2 * v[:, 1] ** 2, mu), 0.25),
        ("int v1^2 (2|v|^2-(d-2)) mu", ip(v[:, 0] ** 2 * (2 * s2 - (d - 2)), mu), 2.0),
    ]
    for i, j in product(range(d), repeat=2):
        delta = 1.0 if i == j else 0.0
        vv = v[:, i] * v[:, j]
        rows += [
            (f"<v{i+1}v{j+1}|v|^2 sqrt(mu), chi0>", ip(vv * s2 * sq, chi[0]), (d + 2) / 4 * delta),
            (f"<v{i+1}v{j+1}|v|^2 sqrt(mu), chi{d+1}>", ip(vv * s2 * sq, chi[d + 1]), (d + 2) / np.sqrt(2 * d) * delta),
            (f"<v{i+1}v{j+1} sqrt(mu), chi0>", ip(vv * sq, chi[0]), 0.5 * delta),
            (f"<v{i+1}v{j+1} sqrt(mu), chi{d+1}>", ip(vv * sq, chi[d + 1]), delta / np.sqrt(2 * d)),
        ]
        for k in range(1, d + 1):
            rows += [
                (f"<v{i+1}v{j+1}|v|^2 sqrt(mu), chi{k}>", ip(vv * s2 * sq, chi[k]), 0.0),
                (f"<v{i+1}v{j+1} sqrt(mu), chi{k}>", ip(vv * sq, chi[k]), 0.0),
            ]
    return {name: MomentEntry(name, val, tgt) for name, val, tgt in rows}


# ---------------------------------------------------------------------------
# derivatives on phase-space fields


def d_dv(f: PhaseSpaceField, axis: int, method: str = "fd4") -> PhaseSpaceField:
    """Velocity derivative along ``axis`` (fourth-order differences by default)."""
    if not 0 <= axis < f.vel.d_v:
        raise ValueError("velocity axis out of range")
    vel = f.vel
    if method == "fd4":
        cube = f.values.reshape((f.torus.n_nodes,) + vel.shape)
        out = fd4_derivative(cube, vel.h, axis=1 + axis)
        return f.copy(out.reshape(f.values.shape))
    mat = vel.derivative_matrix(method)
    return f.copy(vel.apply_1d(mat, f.values, axis))


def d_dx(f: PhaseSpaceField, axis: int) -> PhaseSpaceField:
    """Spatial derivative along ``axis``, spectrally exact on resolved modes."""
    torus = f.torus
    if not 0 <= axis < torus.d_x:
        raise ValueError("spatial axis out of range")
    cube = f.values.reshape(torus.shape + (f.vel.n_nodes,))
    k = np.fft.fftfreq(torus.n_x, d=1.0 / torus.n_x)
    if torus.n_x % 2 == 0:
        k[torus.n_x // 2] = 0.0
    shape = [1] * (torus.d_x + 1)
    shape[axis] = torus.n_x
    hat = np.fft.fft(cube, axis=axis) * (1j * k.reshape(shape))
    out = np.real(np.fft.ifft(hat, axis=axis))
    return f.copy(out.reshape(f.values.shape))


def velocity_slice_rows(vel: VelocityGrid, g: np.ndarray):
    """Rows (v₁, …, v_d, value) for CSV export of a velocity profile."""
    return np.column_stack([vel.nodes, np.asarray(g, dtype=float)])
