"""Command-line entry point: spectrum, compile, validate-gate, run, sweep."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import presets
from .config import load_config
from .errors import Spin1QRSError
from .experiment import (CSV_COLUMNS, build_schedule, compile_schedule, emit_csv, run_experiment,
                         sweep, validate_gate)
from .qrs import build_rabi_hamiltonian, convergence_check, diagonalize

log = logging.getLogger("spin1qrs")


def _config(args):
    overrides = {}
    sampling = {}
    if getattr(args, "seed", None) is not None:
        sampling["seed"] = args.seed
    if getattr(args, "full_states", False):
        sampling["n_states"] = presets.N_STATES
    if getattr(args, "n_states", None) is not None:
        sampling["n_states"] = args.n_states
    if sampling:
        overrides["sampling"] = sampling
    if getattr(args, "force", False):
        overrides["output"] = {"force": True}
    return load_config(args.config, overrides)


def _write_schedule(schedule, path):
    Path(path).write_text(schedule.to_json(indent=2) + "\n", encoding="utf-8")
    log.info("schedule written to %s", path)


def cmd_spectrum(args):
    cfg = _config(args)
    params = cfg.species[0 if args.species.upper() == "A" else 1]
    spec = diagonalize(build_rabi_hamiltonian(params), args.levels or cfg.n_kept)
    err = convergence_check(params, spec.n_kept)
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("index", "energy_rad_per_s", "parity"))
        for i in range(spec.n_kept):
            w.writerow((i, repr(float(spec.energies[i])), int(spec.parities[i])))
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("cutoff-doubling change %.3e omega_r", err)


def cmd_compile(args):
    cfg = _config(args)
    schedule, notes = compile_schedule(cfg)
    for n in notes:
        log.warning("%s", n)
    target = args.emit_schedule or args.output
    if target:
        _write_schedule(schedule, target)
    else:
        print(schedule.to_json(indent=2))


def cmd_validate(args):
    cfg = _config(args)
    report = validate_gate(cfg, args.gate)
    text = json.dumps(report.to_dict(), indent=2, default=str)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_run(args):
    cfg = _config(args)
    if args.emit_schedule:
        _write_schedule(build_schedule(cfg), args.emit_schedule)
    report = run_experiment(cfg)
    if args.output:
        emit_csv(report, args.output, force=cfg.force)
        log.info("report written to %s", args.output)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.rows():
            w.writerow([repr(x) for x in row])


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def cmd_sweep(args):
    cfg = _config(args)
    values = [_parse_value(v) for v in args.values.split(",")]
    results = sweep(cfg, args.key, values)
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("value",) + CSV_COLUMNS)
        for value, report in results:
            w.writerow([value] + [repr(x) for x in report.rows()[-1]])
    finally:
        if out is not sys.stdout:
            out.close()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spin1qrs", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML experiment configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output", help="output file (stdout when omitted)")
        sp.add_argument("--force", action="store_true", help="overwrite outputs from other configs")

    s = sub.add_parser("spectrum", help="dressed QRS levels as CSV")
    common(s)
    s.add_argument("--species", default="A", choices=["A", "B", "a", "b"])
    s.add_argument("--levels", type=int)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("compile", help="build and compile the protocol schedule")
    common(s)
    s.add_argument("--emit-schedule")
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("validate-gate", help="full vs effective two-site gate check")
    common(s)
    s.add_argument("--gate", choices=["XY", "XX", "ROT"])
    s.set_defaults(func=cmd_validate)

    def states(sp):
        sp.add_argument("--n-states", type=int, help="number of random initial states")
        sp.add_argument("--full-states", action="store_true",
                        help=f"use {presets.N_STATES} initial states instead of the default")

    s = sub.add_parser("run", help="random-state fidelity run")
    common(s)
    states(s)
    s.add_argument("--emit-schedule")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="final-time statistics over one config key")
    common(s)
    states(s)
    s.add_argument("--key", required=True, help="dotted key, e.g. protocol.n_o")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (Spin1QRSError, FileExistsError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
