"""Command-line entry point: ``thermoform <subcommand> [options]``.

Subcommands ``excite``, ``collect``, ``fit``, ``validate``, ``control``,
``sweep`` and ``metrics`` each read configs and files, write their outputs and
a ``manifest.json`` into ``--out-dir``, and never touch their inputs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import persist
from .config import parse_config, serialize_config
from .excitation import CollectConfig, PrbsSchedule, collect_dataset, generate_prbs
from .experiments import (SIM_REFERENCE, SweepGrid, compute_metrics, read_trajectory,
                          robustness_sweep, run_closed_loop, write_metrics_csv, SweepRow)
from .mpc import MpcConfig
from .narx import HORIZONS, FitConfig, NarxModel, RegressorLayout, fit_narx, validation_table
from .thermal_sim import ConfigError, PlantConfig


class CliError(RuntimeError):
    pass


def _load(path, kind, default):
    return default if path is None else parse_config(path, kind)


def _out_dir(args) -> Path:
    out = Path(args.out_dir if args.out_dir else f"run-{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _reference(args) -> np.ndarray:
    return SIM_REFERENCE.copy() if args.ref is None else persist.read_reference(args.ref)


def _require(args, name: str) -> Path:
    v = getattr(args, name)
    if v is None:
        raise CliError(f"--{name.replace('_', '-')} is required for {args.command}")
    return Path(v)


def cmd_excite(args, man: persist.RunManifest, out: Path) -> None:
    sched = _load(args.config, "prbs", PrbsSchedule())
    if args.seed is not None:
        sched = replace(sched, seed=args.seed)
    man.add_config("prbs", serialize_config(sched))
    man.seeds["prbs"] = sched.seed
    with man.timed("excite"):
        U = generate_prbs(sched)
    path = out / "excitation.csv"
    persist.write_excitation(path, U, sched.sample_time)
    man.add_output(path)
    print(f"wrote {len(U)} samples to {path}")


def cmd_collect(args, man, out) -> None:
    plant = _load(args.plant_config, "plant", PlantConfig())
    col = _load(args.config, "collect", CollectConfig())
    if args.seed is not None:
        col = replace(col, seed=args.seed)
    exc = _require(args, "excitation")
    man.add_input(exc)
    U, dt = persist.read_excitation(exc)
    if abs(dt - col.sample_time) > 1e-9:
        raise CliError(f"excitation sample time {dt} s differs from collect sample_time {col.sample_time} s")
    man.add_config("plant", serialize_config(plant))
    man.add_config("collect", serialize_config(col))
    man.seeds["noise"] = col.seed
    with man.timed("collect"):
        data = collect_dataset(plant, U, dt, col.noise_std, col.seed)
    path = out / "dataset.csv"
    persist.write_dataset(path, data)
    man.add_output(path)
    print(f"wrote {len(data.Y)} rows to {path}")


def cmd_fit(args, man, out) -> None:
    cfg = _load(args.config, "fit", FitConfig())
    ds = _require(args, "dataset")
    man.add_input(ds)
    man.add_config("fit", serialize_config(cfg))
    data = persist.read_dataset(ds)
    layout = RegressorLayout(Z=data.Y.shape[1], H=data.U.shape[1])
    with man.timed("fit"):
        model = fit_narx(data, layout, cfg)
    path = out / "model.txt"
    model.save(path)
    man.add_output(path)
    units = sum(ch.n_units for ch in model.channels)
    print(f"wrote {path} ({units} units over {layout.Z} channels)")


def format_fit_table(table: np.ndarray, horizons=HORIZONS) -> str:
    head = "zone " + "".join(f"{'N=' + str(N):>9}" for N in horizons)
    rows = [head]
    for z, r in enumerate(table):
        rows.append(f"{z + 1:>4} " + "".join(f"{v:9.2f}" for v in r))
    return "\n".join(rows)


def cmd_validate(args, man, out) -> None:
    ds, mp = _require(args, "dataset"), _require(args, "model")
    man.add_input(ds)
    man.add_input(mp)
    data = persist.read_dataset(ds)
    model = NarxModel.load(mp)
    with man.timed("validate"):
        table = validation_table(model, data)
    print("fit % on the test split")
    print(format_fit_table(table))
    path = out / "fit_table.csv"
    cols = ["zone"] + [f"N{N}" for N in HORIZONS]
    persist._write_table(path, "# fit percent, 100 (1 - NRMSE), per zone and horizon",
                         cols, np.column_stack([np.arange(1, len(table) + 1), table]))
    man.add_output(path)


def _print_metrics(m) -> None:
    print(f"avg final error  {m.avg_final_error:.3f} degC")
    print(f"max final error  {m.max_final_error:.3f} degC")
    print(f"max overshoot    {m.max_overshoot:.3f} degC")
    print(f"settling time    {m.settling_time:g} s")
    print(f"terminal pass    {m.terminal_pass_count}/{len(m.terminal_pass)}")


def _mpc_inputs(args, man):
    plant = _load(args.plant_config, "plant", PlantConfig())
    mpc = _load(args.config, "mpc", MpcConfig())
    mp = _require(args, "model")
    man.add_input(mp)
    if args.ref is not None:
        man.add_input(args.ref)
    man.add_config("plant", serialize_config(plant))
    man.add_config("mpc", serialize_config(mpc))
    return plant, mpc, NarxModel.load(mp), _reference(args)


def cmd_control(args, man, out) -> None:
    plant, mpc, model, ref = _mpc_inputs(args, man)
    path = out / "trajectory.csv"
    with man.timed("control"):
        res = run_closed_loop(plant, model, mpc, ref, args.duration, log_path=path)
    man.add_output(path)
    mpath = out / "metrics.csv"
    g = plant.geometry
    write_metrics_csv([SweepRow(plant.material.h_top, g.gap_d, plant.material.absorptivity,
                                res.metrics)], mpath)
    man.add_output(mpath)
    _print_metrics(res.metrics)
    print(f"{len(res.records)} moves in {res.wall_time:.1f} s, {res.fallbacks} solver fallbacks")


def cmd_sweep(args, man, out) -> None:
    plant, mpc, model, ref = _mpc_inputs(args, man)
    grid = _load(args.grid, "grid", SweepGrid())
    if args.grid is not None:
        man.add_input(args.grid)
    man.add_config("grid", serialize_config(grid))
    with man.timed("sweep"):
        rows = robustness_sweep(model, grid, ref, args.duration, mpc, plant, out, args.workers)
    for p in sorted(out.glob("traj_*.csv")):
        man.add_output(p)
    man.add_output(out / "metrics.csv")
    failed = [r for r in rows if r.metrics is None]
    print(f"{len(rows)} runs, {len(failed)} failed; metrics in {out / 'metrics.csv'}")
    for r in failed:
        print(f"  h={r.h:g} d={r.d:g} alpha={r.alpha:g}: {r.error}", file=sys.stderr)


def cmd_metrics(args, man, out) -> None:
    tp = _require(args, "trajectory")
    man.add_input(tp)
    t, Y, R, _ = read_trajectory(tp)
    ref = persist.read_reference(args.ref) if args.ref is not None else R[0]
    t_f = args.duration if args.duration is not None else None
    m = compute_metrics(t, Y, ref, band=args.band, t_f=t_f)
    _print_metrics(m)
    path = out / "metrics.csv"
    write_metrics_csv([SweepRow(np.nan, np.nan, np.nan, m)], path)
    man.add_output(path)


COMMANDS = {
    "excite": (cmd_excite, "generate the PRBS excitation"),
    "collect": (cmd_collect, "run the plant open loop under an excitation"),
    "fit": (cmd_fit, "identify a NARX model from a dataset"),
    "validate": (cmd_validate, "print held-out fit % per zone and horizon"),
    "control": (cmd_control, "run one closed-loop experiment"),
    "sweep": (cmd_sweep, "closed-loop runs over an (h, d, alpha) grid"),
    "metrics": (cmd_metrics, "tracking metrics of a stored trajectory"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermoform", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="config file for this subcommand")
        p.add_argument("--out-dir", help="run directory (default run-<command>)")
        if name in ("excite", "collect"):
            p.add_argument("--seed", type=int, help="override the config seed")
        if name == "collect":
            p.add_argument("--excitation", help="excitation CSV from excite")
        if name in ("collect", "control", "sweep"):
            p.add_argument("--plant-config", help="plant config file")
        if name in ("fit", "validate"):
            p.add_argument("--dataset", help="dataset CSV from collect")
        if name in ("validate", "control", "sweep"):
            p.add_argument("--model", help="model file from fit")
        if name in ("control", "sweep", "metrics"):
            p.add_argument("--ref", help="CSV with one row of 15 reference temperatures (deg C)")
        if name in ("control", "sweep"):
            p.add_argument("--duration", type=float, default=1000.0, help="run length in s")
        if name == "sweep":
            p.add_argument("--grid", help="grid config file")
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        if name == "metrics":
            p.add_argument("--trajectory", help="trajectory CSV from control or sweep")
            p.add_argument("--duration", type=float, help="evaluation time t_f in s (default: last sample)")
            p.add_argument("--band", type=float, default=10.0, help="settling band in deg C")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)   # exits with 2 on usage errors
    fn = COMMANDS[args.command][0]
    man = persist.RunManifest(args.command, argv)
    try:
        out = _out_dir(args)
        if args.config is not None:
            man.add_input(args.config)
        with man.timed("total"):
            fn(args, man, out)
        man.write(out / "manifest.json")
    except (CliError, ConfigError, persist.FileFormatError, ValueError, OSError, RuntimeError) as exc:
        print(f"thermoform {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
