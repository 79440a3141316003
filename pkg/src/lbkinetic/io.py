"""Run configuration, binary snapshots and CSV series.

Snapshot layout (little-endian)::

    b"LBKF"  u32 version=1  u32 d_x  u32 d_v  u32 n_x  u32 n_v  f64 v_max
    f64 values[n_x_nodes * n_v_nodes]            x-index slowest

An A-table file appends d_v² f64 per velocity node, row-major, after the
(single x-node) values block.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InvariantError, OutputError, SchemaError, SnapshotError
from .grid import PhaseSpaceField, TorusGrid, VelocityGrid
from .kernel import KernelQuadrature
from .nonlin import NonlinConfig
from .potential import InteractionPotential
from .solver import SolverConfig

MAGIC = b"LBKF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIId")

INITIAL_KINDS = ("zero", "random-micro", "snapshot")


# ---------------------------------------------------------------------------
# schema helpers


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool))


_CHECKS = {
    "int": (_is_int, "an integer"),
    "real": (_is_real, "a number"),
    "bool": (lambda x: isinstance(x, bool), "a boolean"),
    "str": (lambda x: isinstance(x, str), "a string"),
    "real?": (lambda x: x is None or _is_real(x), "a number or null"),
    "pairs?": (lambda x: x is None or (isinstance(x, list) and all(isinstance(p, list) and len(p) == 2 and all(_is_real(v) for v in p) for p in x)), "a list of [r, value] pairs or null"),
    "window?": (lambda x: x is None or (isinstance(x, list) and len(x) == 2 and all(_is_real(v) for v in x)), "a [t0, t1] pair or null"),
}


def _block(data: Any, name: str, schema: Dict[str, Tuple[str, Any]]) -> Dict[str, Any]:
    """Defaults filled, unknown keys and wrong types rejected."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SchemaError(name, f"schema error: {name!r} must be an object")
    for key in data:
        if key not in schema:
            raise SchemaError(key, f"schema error: unknown key {key!r} in {name!r}")
    out = {}
    for key, (kind, default) in schema.items():
        val = data.get(key, default)
        ok, what = _CHECKS[kind]
        if not ok(val):
            raise SchemaError(key, f"schema error: {name}.{key} must be {what}")
        if kind == "real" and not math.isfinite(val):
            raise SchemaError(key, f"schema error: {name}.{key} must be finite")
        out[key] = float(val) if kind == "real" else val
    return out


GRID_SCHEMA = {
    "d_x": ("int", 1),
    "n_x": ("int", 16),
    "d_v": ("int", 2),
    "n_v": ("int", 24),
    "v_max": ("real", 8.0),
}
POTENTIAL_SCHEMA = {
    "kind": ("str", "debye"),
    "amplitude": ("real", 1.0),
    "screening": ("real", 1.0),
    "k_max": ("real", 10.0),
    "table": ("pairs?", None),
}
KERNEL_SCHEMA = {
    "n_r": ("int", 64),
    "n_dir": ("int", 16),
    "r_max": ("real?", None),
    "diag_exclusion": ("real?", None),
    "self_correction": ("bool", True),
}
SOLVER_SCHEMA = {
    "dt": ("real", 1e-3),
    "t_end": ("real", 1.0),
    "scheme": ("str", "strang"),
    "collision_integrator": ("str", "rk4"),
    "mode": ("str", "nonlinear"),
    "output_every": ("int", 10),
    "conservation_projection": ("bool", False),
    "snapshot_every": ("int", 0),
    "deriv": ("str", "spectral"),
}
NONLIN_SCHEMA = {
    "eps_mode": ("str", "frozen"),
    "table_refresh": ("int", 1),
    "smallness_guard": ("real", 0.1),
}
DIAGNOSTICS_SCHEMA = {
    "N_used": ("int", 1),
    "decay_model": ("str", "none"),
    "theta": ("real", 2.0),
    "window": ("window?", None),
}
INITIAL_SCHEMA = {
    "kind": ("str", "zero"),
    "seed": ("int", 0),
    "amplitude": ("real", 1e-3),
    "file": ("str", ""),
}
TOP_KEYS = ("grid", "potential", "kernel", "solver", "nonlin", "diagnostics", "initial", "out_dir", "seed")


@dataclass(frozen=True)
class DiagnosticsConfig:
    N_used: int = 1
    decay_model: str = "none"
    theta: float = 2.0
    window: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.N_used not in (0, 1, 2):
            raise InvariantError("DiagnosticsConfig", "N_used must be 0, 1 or 2")
        if self.decay_model not in ("none", "poly", "stretched"):
            raise InvariantError("DiagnosticsConfig", "decay_model must be none, poly or stretched")
        if not self.theta > 0:
            raise InvariantError("DiagnosticsConfig", "theta must be positive")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise InvariantError("DiagnosticsConfig", "window must satisfy t0 < t1")


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "zero"
    seed: int = 0
    amplitude: float = 1e-3
    file: str = ""

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise InvariantError("InitialConfig", f"kind must be one of {INITIAL_KINDS}")
        if self.amplitude < 0:
            raise InvariantError("InitialConfig", "amplitude must be nonnegative")
        if self.kind == "snapshot" and not self.file:
            raise InvariantError("InitialConfig", "snapshot initial data needs 'file'")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; every sub-config is built eagerly."""

    torus: TorusGrid
    vel: VelocityGrid
    potential: InteractionPotential
    quad: KernelQuadrature
    solver: SolverConfig
    nonlin: NonlinConfig
    diagnostics: DiagnosticsConfig
    initial: InitialConfig
    out_dir: str = "out"
    seed: int = 0
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        if not isinstance(data, dict):
            raise SchemaError("<root>", "schema error: the configuration must be a JSON object")
        for key in data:
            if key not in TOP_KEYS:
                raise SchemaError(key, f"schema error: unknown key {key!r}")
        g = _block(data.get("grid"), "grid", GRID_SCHEMA)
        p = _block(data.get("potential"), "potential", POTENTIAL_SCHEMA)
        k = _block(data.get("kernel"), "kernel", KERNEL_SCHEMA)
        s = _block(data.get("solver"), "solver", SOLVER_SCHEMA)
        n = _block(data.get("nonlin"), "nonlin", NONLIN_SCHEMA)
        d = _block(data.get("diagnostics"), "diagnostics", DIAGNOSTICS_SCHEMA)
        i = _block(data.get("initial"), "initial", INITIAL_SCHEMA)
        out_dir = data.get("out_dir", "out")
        if not isinstance(out_dir, str):
            raise SchemaError("out_dir", "schema error: out_dir must be a string")
        seed = data.get("seed", 0)
        if not _is_int(seed):
            raise SchemaError("seed", "schema error: seed must be an integer")
        torus = TorusGrid(g["d_x"], g["n_x"])
        vel = VelocityGrid(g["d_v"], g["n_v"], g["v_max"])
        table = None if p["table"] is None else tuple((float(r), float(v)) for r, v in p["table"])
        potential = InteractionPotential(p["kind"], p["amplitude"], p["screening"], p["k_max"], table)
        quad = KernelQuadrature(k["n_r"], k["n_dir"], k["r_max"], k["diag_exclusion"], k["self_correction"])
        if quad.r_max is not None and quad.r_max > potential.k_max:
            raise InvariantError("KernelQuadrature", "r_max may not exceed the potential's k_max")
        quad.rho(vel)
        if torus.d_x > vel.d_v:
            raise InvariantError("TorusGrid", "d_x may not exceed d_v")
        solver = SolverConfig(**s)
        nonlin = NonlinConfig(**n)
        window = None if d["window"] is None else (float(d["window"][0]), float(d["window"][1]))
        diag = DiagnosticsConfig(d["N_used"], d["decay_model"], d["theta"], window)
        init = InitialConfig(**i)
        raw = {
            "grid": g, "potential": p, "kernel": k, "solver": s, "nonlin": n,
            "diagnostics": d, "initial": i, "out_dir": out_dir, "seed": seed,
        }
        return cls(torus, vel, potential, quad, solver, nonlin, diag, init, out_dir, seed, raw)

    def to_dict(self) -> Dict[str, Any]:
        """Canonical form: every key present, defaults filled."""
        return json.loads(json.dumps(self.raw))

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return RunConfig.from_dict(data)


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises
    ------
    ConfigError
        Parse errors (with line and column), :class:`SchemaError` naming the
        offending key, or :class:`InvariantError` naming the domain type.
    OutputError
        The file cannot be read.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def load_json_block(text_or_path: str, name: str) -> Dict[str, Any]:
    """A JSON object given inline or as a file path (CLI helper)."""
    src = text_or_path.strip()
    if not src.startswith("{"):
        try:
            src = Path(text_or_path).read_text()
        except OSError as exc:
            raise OutputError(f"cannot read {text_or_path}: {exc.strerror}") from None
    try:
        data = json.loads(src)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise SchemaError(name, f"schema error: {name} must be a JSON object")
    return data


def potential_from_dict(data: Dict[str, Any]) -> InteractionPotential:
    p = _block(data, "potential", POTENTIAL_SCHEMA)
    table = None if p["table"] is None else tuple((float(r), float(v)) for r, v in p["table"])
    return InteractionPotential(p["kind"], p["amplitude"], p["screening"], p["k_max"], table)


def grid_from_dict(data: Dict[str, Any]) -> Tuple[TorusGrid, VelocityGrid]:
    g = _block(data, "grid", GRID_SCHEMA)
    return TorusGrid(g["d_x"], g["n_x"]), VelocityGrid(g["d_v"], g["n_v"], g["v_max"])


# ---------------------------------------------------------------------------
# snapshots


def _header(torus: TorusGrid, vel: VelocityGrid) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, torus.d_x, vel.d_v, torus.n_x, vel.n_v, vel.v_max)


def write_snapshot(f: PhaseSpaceField, path, extra: Optional[np.ndarray] = None) -> Path:
    """Write ``f`` (and an optional trailing f64 payload) to ``path``."""
    path = Path(path)
    if not path.parent.is_dir():
        raise OutputError(f"cannot write {path}: directory does not exist")
    body = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    if extra is not None:
        body += np.ascontiguousarray(extra, dtype="<f8").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_header(f.torus, f.vel))
            fh.write(body)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None
    return path


def _read(path) -> Tuple[TorusGrid, VelocityGrid, bytes]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read {path}: {exc.strerror}") from None
    if len(data) < 4 or data[:4] != MAGIC:
        raise SnapshotError(f"{path}: bad magic, not an LBKF snapshot")
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header ({len(data)} bytes)")
    _, version, d_x, d_v, n_x, n_v, v_max = _HEADER.unpack_from(data)
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {version} (expected {VERSION})")
    try:
        torus = TorusGrid(d_x, n_x)
        vel = VelocityGrid(d_v, n_v, v_max)
    except InvariantError as exc:
        raise SnapshotError(f"{path}: invalid header: {exc}") from None
    return torus, vel, data[_HEADER.size:]


def read_snapshot(path, torus: Optional[TorusGrid] = None, vel: Optional[VelocityGrid] = None) -> PhaseSpaceField:
    """Read a snapshot; optional grids are checked against the header.

    Raises
    ------
    SnapshotError
        Bad magic, unsupported version, truncated payload or a dimension
        mismatch.
    """
    t, v, body = _read(path)
    if (torus is not None and torus != t) or (vel is not None and vel != v):
        raise SnapshotError(f"{path}: snapshot grid {t}, {v} does not match the configuration")
    count = t.n_nodes * v.n_nodes
    if len(body) < 8 * count:
        raise SnapshotError(f"{path}: truncated file, expected {8 * count} payload bytes, found {len(body)}")
    if len(body) > 8 * count:
        raise SnapshotError(f"{path}: {len(body) - 8 * count} unexpected trailing bytes")
    vals = np.frombuffer(body, dtype="<f8", count=count).astype(float).reshape(t.n_nodes, v.n_nodes)
    try:
        return PhaseSpaceField(t, v, vals)
    except InvariantError as exc:
        raise SnapshotError(f"{path}: {exc}") from None


def write_A_table(A: np.ndarray, vel: VelocityGrid, path) -> Path:
    """Snapshot of a single x-node whose values are tr A, followed by A row-major."""
    torus = TorusGrid(0, 4)
    trace = np.einsum("pii->p", A)
    return write_snapshot(PhaseSpaceField(torus, vel, trace[None, :]), path, extra=A.reshape(-1))


def read_A_table(path) -> Tuple[VelocityGrid, np.ndarray]:
    t, v, body = _read(path)
    n, d = v.n_nodes, v.d_v
    need = 8 * n * (1 + d * d)
    if len(body) != need:
        raise SnapshotError(f"{path}: A-table payload has {len(body)} bytes, expected {need}")
    A = np.frombuffer(body, dtype="<f8", offset=8 * n).astype(float).reshape(n, d, d)
    return v, A


# ---------------------------------------------------------------------------
# CSV


class SeriesWriter:
    """Appends diagnostic rows to ``series.csv`` with a fixed header."""

    def __init__(self, path, header: Sequence[str]):
        self.path = Path(path)
        self.header = list(header)
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise OutputError(f"cannot write {self.path}: {exc.strerror}") from None
        self._w = csv.writer(self._fh)
        self._w.writerow(self.header)

    def write(self, row: Dict[str, float]) -> None:
        try:
            self._w.writerow([repr(float(row[k])) for k in self.header])
            self._fh.flush()
        except OSError as exc:
            raise OutputError(f"cannot write {self.path}: {exc.strerror}") from None

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_series(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ConfigError(f"{path}: empty series file")
    header, body = rows[0], rows[1:]
    try:
        cols = np.array(body, dtype=float).reshape(len(body), len(header))
    except ValueError:
        raise ConfigError(f"{path}: malformed series file") from None
    return {h: cols[:, j] for j, h in enumerate(header)}


def write_rows(path, header: Sequence[str], rows: List[Sequence[float]]) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(header))
            for r in rows:
                w.writerow([repr(float(x)) for x in r])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None
    return path
