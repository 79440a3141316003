"""Command line interface: ``lbkinetic <subcommand> [options]``.

Exit codes: 0 ok, 1 usage, 2 configuration, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .diagnostics import decay_fit
from .errors import ConfigError, LBError, OutputError
from .io import (
    grid_from_dict,
    load_config,
    load_json_block,
    potential_from_dict,
    read_series,
    read_snapshot,
    write_A_table,
    write_rows,
)

log = logging.getLogger("lbkinetic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in re.split(r"[,\s]+", text.strip()) if x], dtype=float)
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_dispersion(args) -> int:
    from .dispersion import build_dispersion_table
    from .grid import VelocityGrid

    p = potential_from_dict(load_json_block(args.potential, "potential"))
    bg = args.background
    if bg[0] == "maxwellian" and len(bg) == 1:
        vel = grid_from_dict(load_json_block(args.grid, "grid"))[1] if args.grid else VelocityGrid()
        table = build_dispersion_table(p, vel, "maxwellian")
    elif bg[0] == "snapshot" and len(bg) == 2:
        f = read_snapshot(bg[1])
        vel = f.vel
        if not 0 <= args.x_index < f.torus.n_nodes:
            raise UsageError("--x-index out of range")
        table = build_dispersion_table(p, f.vel, "field", f=f.values[args.x_index], x_index=args.x_index)
    else:
        raise UsageError("--background takes 'maxwellian' or 'snapshot <file>'")
    k = np.linspace(args.k_min, args.k_max, args.k_steps)
    u = np.linspace(args.u_min, args.u_max, args.u_steps)
    khat = np.zeros(vel.d_v)
    khat[0] = 1.0
    K, U = np.meshgrid(k, u, indexing="ij")
    eps = table.eps(K[..., None] * khat, U)
    rows = np.column_stack([K.ravel(), U.ravel(), eps.real.ravel(), eps.imag.ravel(), np.abs(eps).ravel()])
    header = ["k", "u", "re_eps", "im_eps", "abs_eps"]
    if args.out:
        write_rows(args.out, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(repr(float(x)) for x in r))
    return 0


def cmd_kernel(args) -> int:
    from .kernel import KernelQuadrature, build_tables, collision_matrix

    p = potential_from_dict(load_json_block(args.potential, "potential"))
    if args.table_A:
        if not (args.grid and args.out):
            raise UsageError("--table-A needs --grid and --out")
        vel = grid_from_dict(load_json_block(args.grid, "grid"))[1]
        tables = build_tables(vel, p, args.mode)
        write_A_table(tables.A, vel, args.out)
        print(_dump({"out": str(args.out), "n_nodes": vel.n_nodes, "d_v": vel.d_v}))
        return 0
    if args.v is None or args.w is None:
        raise UsageError("kernel needs --v and --w (or --table-A)")
    v, w = _floats(args.v), _floats(args.w)
    if v.shape != w.shape or v.size not in (2, 3):
        raise UsageError("--v and --w must have the same dimension, 2 or 3")
    eps = "unity"
    if args.mode == "maxwellian":
        from .dispersion import build_dispersion_table
        from .grid import VelocityGrid

        eps = build_dispersion_table(p, VelocityGrid(v.size, 32, 8.0), "maxwellian")
    B = collision_matrix(v, w, eps, p, KernelQuadrature())
    for row in B:
        print(" ".join(f"{x: .16e}" for x in row))
    return 0


def cmd_spectrum(args) -> int:
    from .kernel import build_tables
    from .linop import fitted_coercivity, spectral_gap
    from .solver import random_micro
    from .grid import TorusGrid

    p = potential_from_dict(load_json_block(args.potential, "potential"))
    vel = grid_from_dict(load_json_block(args.grid, "grid"))[1]
    tables = build_tables(vel, p, args.mode)
    gap = spectral_gap(tables)
    rng = np.random.default_rng(args.seed)
    samples = np.vstack([
        random_micro(TorusGrid(0, 4), vel, 1.0, seed=int(s)).values for s in rng.integers(0, 2**31, args.samples)
    ])
    fit = fitted_coercivity(tables, samples)
    print(_dump({"mode": args.mode, "n_v": vel.n_v, "d_v": vel.d_v, "v_max": vel.v_max,
                 "spectral_gap": gap, "coercivity_lambda": fit["lambda"], "boundedness_C": fit["C"]}))
    return 0


def _build_initial(cfg, seed_override: Optional[int]):
    from .grid import PhaseSpaceField
    from .solver import random_micro

    init = cfg.initial
    if init.kind == "zero":
        return PhaseSpaceField.zeros(cfg.torus, cfg.vel)
    if init.kind == "random-micro":
        seed = init.seed if seed_override is None else seed_override
        return random_micro(cfg.torus, cfg.vel, init.amplitude, seed=seed)
    return read_snapshot(init.file, cfg.torus, cfg.vel)


def cmd_simulate(args) -> int:
    from .io import SeriesWriter, write_snapshot
    from .kernel import build_tables
    from .solver import Simulation, series_header

    cfg = load_config(args.config)
    print(cfg.canonical())
    out = Path(args.out_dir or cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.canonical() + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {out}: {exc.strerror}") from None
    step0, t0 = 0, 0.0
    if args.resume:
        f0 = read_snapshot(args.resume, cfg.torus, cfg.vel)
        m = re.search(r"state_(\d+)\.lbkf$", str(args.resume))
        step0 = int(m.group(1)) if m else 0
        t0 = step0 * cfg.solver.dt
    else:
        f0 = _build_initial(cfg, args.seed_given)
    tables = build_tables(cfg.vel, cfg.potential, "maxwellian", cfg.quad)
    header = series_header(cfg.vel.d_v)
    with SeriesWriter(out / "series.csv", header) as writer:
        def on_output(step, f, row):
            writer.write(row)

        def on_snapshot(step, f):
            write_snapshot(f, out / f"state_{step}.lbkf")

        scfg = cfg.solver
        if step0:
            remaining = scfg.n_steps - step0
            if remaining <= 0:
                raise ConfigError(f"snapshot step {step0} is already at or past t_end")
            scfg = replace(scfg, t_end=remaining * scfg.dt)
        sim = Simulation(scfg, tables, cfg.nonlin, on_output=on_output, on_snapshot=on_snapshot)
        res = sim.run(f0, t0=t0, step0=step0)
    write_snapshot(res.f, out / f"state_{res.steps}.lbkf")
    summary = {"steps": res.steps, "t": res.t, "stability_bound": res.stability_bound,
               "field_refreshes": res.refreshes, "projection_total": res.meta["projection_total"]}
    d = cfg.diagnostics
    if d.decay_model != "none":
        summary["decay_fit"] = res.report.fit(d.decay_model, theta=d.theta, window=d.window).to_dict()
    print(_dump(summary))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    cfg = load_config(args.config)
    report = run_suite(cfg, seed=args.seed)
    print(_dump(report))
    return 0 if report["passed"] else 3


def cmd_fit_decay(args) -> int:
    cols = read_series(args.series)
    if args.column not in cols or "t" not in cols:
        raise ConfigError(f"series has no column {args.column!r}")
    window = None
    if args.window:
        w = _floats(args.window)
        if w.size != 2:
            raise UsageError("--window takes t0,t1")
        window = (float(w[0]), float(w[1]))
    fit = decay_fit(cols["t"], cols[args.column] ** 2, args.model, theta=args.theta, window=window)
    print(_dump(fit.to_dict()))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lbkinetic", description="Lenard-Balescu kinetics near a global Maxwellian.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads (0 = library default)")
    ap.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    ap.add_argument("--log", choices=["info", "debug"], default=None)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("dispersion", help="tabulate ε(k, u)")
    s.add_argument("--potential", default="{}", help="JSON object or file")
    s.add_argument("--grid", default=None, help="velocity grid JSON (sizes the table)")
    s.add_argument("--background", nargs="+", default=["maxwellian"], metavar="KIND",
                   help="'maxwellian' or 'snapshot <file>'")
    s.add_argument("--x-index", type=int, default=0)
    s.add_argument("--k-min", type=float, default=0.05)
    s.add_argument("--k-max", type=float, default=10.0)
    s.add_argument("--k-steps", type=int, default=50)
    s.add_argument("--u-min", type=float, default=-6.0)
    s.add_argument("--u-max", type=float, default=6.0)
    s.add_argument("--u-steps", type=int, default=121)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_dispersion)

    s = sub.add_parser("kernel", help="evaluate B(v, w) or dump the A table")
    s.add_argument("--potential", default="{}")
    s.add_argument("--mode", choices=["unity", "maxwellian"], default="maxwellian")
    s.add_argument("--v", default=None, help='components, e.g. "0.5,1"')
    s.add_argument("--w", default=None)
    s.add_argument("--table-A", action="store_true")
    s.add_argument("--grid", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_kernel)

    s = sub.add_parser("spectrum", help="spectral gap and coercivity constants of L")
    s.add_argument("--potential", default="{}")
    s.add_argument("--grid", default='{"d_v": 2, "n_v": 16, "v_max": 5.0}')
    s.add_argument("--mode", choices=["unity", "maxwellian"], default="maxwellian")
    s.add_argument("--samples", type=int, default=32)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("simulate", help="time-integrate a configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", default=None)
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the invariant suite on a configuration")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("fit-decay", help="fit a decay law to a series.csv column")
    s.add_argument("--series", required=True)
    s.add_argument("--model", choices=["poly", "stretched"], required=True)
    s.add_argument("--theta", type=float, default=2.0)
    s.add_argument("--window", default=None, help="t0,t1")
    s.add_argument("--column", default="l2")
    s.set_defaults(func=cmd_fit_decay)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 1
    level = {"info": logging.INFO, "debug": logging.DEBUG}.get(args.log, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args.seed_given = args.seed
    if args.seed is None:
        args.seed = 0
    if args.threads < 0:
        sys.stderr.write("lbkinetic: error: --threads must be >= 0\n")
        return 1
    limits = None if args.threads == 0 else args.threads
    try:
        with threadpool_limits(limits=limits):
            return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"lbkinetic: error: {exc}\n")
        return 1
    except LBError as exc:
        sys.stderr.write(f"lbkinetic: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"lbkinetic: I/O error: {exc}\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
