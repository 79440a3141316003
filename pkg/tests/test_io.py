import json
import struct

import numpy as np
import pytest

from lbkinetic.errors import ConfigError, InvariantError, OutputError, SchemaError, SnapshotError
from lbkinetic.grid import PhaseSpaceField, TorusGrid, VelocityGrid
from lbkinetic.io import (
    MAGIC,
    RunConfig,
    SeriesWriter,
    load_config,
    parse_config,
    read_A_table,
    read_series,
    read_snapshot,
    write_A_table,
    write_snapshot,
)
from lbkinetic.solver import random_micro


def test_defaults_fill_every_block():
    cfg = parse_config("{}")
    raw = cfg.to_dict()
    assert set(raw) == {"grid", "potential", "kernel", "solver", "nonlin", "diagnostics", "initial", "out_dir", "seed"}
    assert raw["solver"]["dt"] == 1e-3
    assert cfg.vel.n_v == 24


def test_canonical_roundtrip():
    cfg = parse_config('{"grid": {"n_v": 16, "v_max": 6}, "solver": {"t_end": 0.5}}')
    again = parse_config(cfg.canonical())
    assert again.canonical() == cfg.canonical()
    assert again == cfg


def test_unknown_key_named():
    with pytest.raises(SchemaError) as exc:
        parse_config('{"solver": {"dtt": 0.1}}')
    assert exc.value.key == "dtt"
    with pytest.raises(SchemaError) as exc:
        parse_config('{"solvers": {}}')
    assert exc.value.key == "solvers"


def test_wrong_type_named():
    with pytest.raises(SchemaError) as exc:
        parse_config('{"grid": {"n_v": 16.5}}')
    assert exc.value.key == "n_v"
    with pytest.raises(SchemaError):
        parse_config('{"solver": {"conservation_projection": 1}}')


@pytest.mark.parametrize(
    "text, type_name",
    [
        ('{"grid": {"v_max": -1}}', "VelocityGrid"),
        ('{"grid": {"n_x": 12}}', "TorusGrid"),
        ('{"grid": {"d_x": 2, "d_v": 2}, "solver": {"dt": 0}}', "SolverConfig"),
        ('{"potential": {"screening": 0}}', "InteractionPotential"),
        ('{"nonlin": {"eps_mode": "live"}}', "NonlinConfig"),
        ('{"initial": {"kind": "snapshot"}}', "InitialConfig"),
        ('{"diagnostics": {"window": [5, 1]}}', "DiagnosticsConfig"),
        ('{"kernel": {"r_max": 50}}', "KernelQuadrature"),
    ],
)
def test_invariant_errors_name_the_type(text, type_name):
    with pytest.raises(InvariantError) as exc:
        parse_config(text)
    assert exc.value.type_name == type_name


def test_parse_error_reports_line_and_column():
    with pytest.raises(ConfigError, match="line 2, column 14"):
        parse_config('{\n  "solver": {,}\n}')


def test_load_config_missing_file(tmp_path):
    with pytest.raises(OutputError):
        load_config(tmp_path / "nope.json")


def test_load_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3}))
    assert load_config(p).seed == 3


def test_config_errors_are_config_errors():
    assert issubclass(SchemaError, ConfigError) and issubclass(InvariantError, ConfigError)
    assert ConfigError("x").exit_code == 2


# ---------------------------------------------------------------------------
# snapshots


@pytest.fixture
def field():
    return random_micro(TorusGrid(1, 8), VelocityGrid(2, 12, 5.0), 1e-2, seed=1)


def test_snapshot_roundtrip_bitwise(tmp_path, field):
    p = write_snapshot(field, tmp_path / "s.lbkf")
    back = read_snapshot(p)
    assert back.torus == field.torus and back.vel == field.vel
    assert np.array_equal(back.values, field.values)
    assert p.read_bytes()[:4] == MAGIC


def test_snapshot_truncated(tmp_path, field):
    p = write_snapshot(field, tmp_path / "s.lbkf")
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(p)
    p.write_bytes(data[:10])
    with pytest.raises(SnapshotError):
        read_snapshot(p)


def test_snapshot_version_and_magic(tmp_path, field):
    p = write_snapshot(field, tmp_path / "s.lbkf")
    data = bytearray(p.read_bytes())
    data[4:8] = struct.pack("<I", 2)
    p.write_bytes(bytes(data))
    with pytest.raises(SnapshotError, match="version"):
        read_snapshot(p)
    data[0:4] = b"XXXX"
    p.write_bytes(bytes(data))
    with pytest.raises(SnapshotError):
        read_snapshot(p)


def test_snapshot_trailing_bytes(tmp_path, field):
    p = write_snapshot(field, tmp_path / "s.lbkf")
    p.write_bytes(p.read_bytes() + b"\0" * 8)
    with pytest.raises(SnapshotError):
        read_snapshot(p)


def test_snapshot_grid_mismatch(tmp_path, field):
    p = write_snapshot(field, tmp_path / "s.lbkf")
    with pytest.raises(SnapshotError):
        read_snapshot(p, vel=VelocityGrid(2, 16, 5.0))


def test_snapshot_missing_directory(tmp_path, field):
    with pytest.raises(OutputError):
        write_snapshot(field, tmp_path / "no" / "s.lbkf")


def test_A_table_roundtrip(tmp_path, tables16):
    p = write_A_table(tables16.A, tables16.vel, tmp_path / "A.lbkf")
    vel, A = read_A_table(p)
    assert vel == tables16.vel
    assert np.array_equal(A, tables16.A)


def test_series_writer_and_reader(tmp_path):
    p = tmp_path / "series.csv"
    with SeriesWriter(p, ["t", "l2"]) as w:
        w.write({"t": 0.0, "l2": 0.1})
        w.write({"t": 0.5, "l2": 1 / 3})
    cols = read_series(p)
    assert list(cols) == ["t", "l2"]
    assert cols["l2"][1] == 1 / 3
    assert p.read_text().splitlines()[0] == "t,l2"
