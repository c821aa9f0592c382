"""Command line entry point: ``delayeso {check,design,run,sweep}``.

Exit status: 0 on success, 3 when the scenario does not validate, 4 when
an observer diverged, 5 on I/O failure (argparse keeps 2 for usage errors).
"""

import argparse
import csv
import fnmatch
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .gain import DesignError, analyze, delay_eso_abscissa, delay_spectral_abscissa
from .model import pbh_observability
from .observers import SLIDING_KINDS, extension_for, lower
from .scenario import PRESETS, ScenarioError, load
from .sim import SimulationError, metrics, metrics_table, simulate, sweep_delay

EXIT_OK = 0
EXIT_INVALID = 3
EXIT_DIVERGED = 4
EXIT_IO = 5


def _select(observers, pattern):
    if not pattern:
        return list(observers)
    chosen = [o for o in observers if fnmatch.fnmatchcase(o.name, pattern) or pattern in o.name]
    if not chosen:
        raise ScenarioError(f"no observer matches {pattern!r} (have {[o.name for o in observers]})")
    return chosen


def _experiment(args):
    sc = load(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc, sc.build()


def _abscissa(spec, system):
    """Rightmost root of the linear error dynamics of a delay observer."""
    if hasattr(system, "C2"):
        form = lower(spec, system, spec.h / 40)
        return delay_spectral_abscissa(form.M0, form.M1, spec.h, form.M2)
    return delay_eso_abscissa(system, spec.L, spec.h)


def cmd_check(args, out):
    _, exp = _experiment(args)
    for spec in _select(exp.observers, args.observer):
        system = extension_for(spec, exp.setup.model)
        if hasattr(system, "C2"):
            rep = pbh_observability(system.ext.Abar, system.C2)
            plain = pbh_observability(system.ext)
            print(f"{spec.name}: extension {plain}; with integral output {rep}", file=out)
        else:
            rep = pbh_observability(system)
            print(f"{spec.name}: extension {rep}", file=out)
        if not rep.observable:
            raise ScenarioError(f"{spec.name}: pair is not observable")
        if spec.uses_delay and spec.kind not in SLIDING_KINDS:
            a = _abscissa(spec, system)
            print(f"{spec.name}: delay-system spectral abscissa {a:.6g} ({'stable' if a < 0 else 'UNSTABLE'})",
                  file=out)
    print(f"scenario {exp.name}: ok ({exp.config.steps} steps, backend {kernels.BACKEND})", file=out)
    return EXIT_OK


def cmd_design(args, out):
    _, exp = _experiment(args)
    for spec in _select(exp.observers, args.observer):
        system = extension_for(spec, exp.setup.model)
        print(f"[{spec.name}]", file=out)
        if spec.kind in SLIDING_KINDS:
            print(f"Gn =\n{np.array2string(spec.smo.Gn, precision=6)}", file=out)
            print(f"rho = {spec.smo.rho:g}, boundary_layer = {spec.smo.boundary_layer:g}", file=out)
            continue
        print(f"L =\n{np.array2string(spec.L, precision=6)}", file=out)
        if hasattr(system, "C2"):
            Acl = system.ext.Abar + spec.L @ system.C2
            print(f"eig(Abar + L C2) = {np.array2string(np.sort_complex(np.linalg.eigvals(Acl)), precision=6)}",
                  file=out)
            a = _abscissa(spec, system)
            print(f"delay-system spectral abscissa at h={spec.h:g}: {a:.6g}", file=out)
            continue
        Acl = system.Abar + spec.L @ system.Cbar
        print(f"eig(Abar + L Cbar) = {np.array2string(np.sort_complex(np.linalg.eigvals(Acl)), precision=6)}",
              file=out)
        an = analyze(system, spec.L)
        print(f"c3 = {an.c3:.6g}, c4 = {an.c4:.6g}, c5 = {an.c5:.6g}, h* = {an.h_star:.6g} (conservative)",
              file=out)
        if spec.uses_delay:
            a = _abscissa(spec, system)
            print(f"h = {spec.h:g}: above h* = {spec.h > an.h_star}; spectral abscissa {a:.6g}", file=out)
    return EXIT_OK


def _out_dir(args):
    d = Path(args.out)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {d}: {exc}") from exc
    return d


def cmd_run(args, out):
    _, exp = _experiment(args)
    specs = _select(exp.observers, args.observer)
    trace = simulate(exp.setup, specs, exp.config)
    rows = metrics(trace, exp.setup.disturbance, exp.warmup_fraction)
    d = _out_dir(args)
    trace.to_csv(d / f"{exp.name}.csv")
    table = metrics_table(rows)
    (d / f"{exp.name}_metrics.txt").write_text(table + "\n")
    print(table, file=out)
    diverged = [o.name for o in trace.observers if o.diverged]
    for o in trace.observers:
        if o.diverged:
            print(f"DIVERGED {o.name} at t={trace.t[o.diverged_at]:.6g}", file=out)
    return EXIT_DIVERGED if diverged else EXIT_OK


def _parse_h(text):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--h expects comma-separated numbers: {exc}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("--h needs positive delays")
    return vals


def cmd_sweep(args, out):
    sc, exp = _experiment(args)
    if args.observer:
        delayed = [o for o in _select(exp.observers, args.observer) if o.uses_delay]
        if not delayed:
            raise ScenarioError(f"no delay observer matches {args.observer!r}")
        spec = delayed[0]
    else:
        spec = sc.sweep_spec(exp.observers)
    hs = args.h if args.h is not None else list(exp.sweep_h)
    if not hs:
        raise ScenarioError("no delays to sweep: pass --h or define a sweep in the scenario")
    cfg = exp.config
    if isinstance(cfg.xhat0, dict) and spec.name in cfg.xhat0:
        cfg = replace(cfg, xhat0=tuple(cfg.xhat0[spec.name]))
    rows = sweep_delay(exp.setup, spec, hs, cfg, exp.warmup_fraction)
    d = _out_dir(args)
    nseg = max(len(r.segments) for r in rows)
    path = d / f"{exp.name}_sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "stable", "diverged_at"] + [f"rms_seg{i}" for i in range(nseg)]
                   + [f"rms_disturbance_seg{i}" for i in range(nseg)])
        for r in rows:
            w.writerow([repr(r.h), int(r.stable), r.diverged_at]
                       + [repr(s.rms_error) for s in r.segments]
                       + [repr(s.rms_disturbance) for s in r.segments])
    for r in rows:
        rms = " ".join(f"seg{s.segment}={s.rms_error:.6g}" for s in r.segments)
        state = "stable" if r.stable else f"DIVERGED at t={r.diverged_at * cfg.dt:.6g}"
        print(f"h={r.h:g} {state} {rms}", file=out)
    return EXIT_OK if all(r.stable for r in rows) else EXIT_DIVERGED


def build_parser():
    p = argparse.ArgumentParser(prog="delayeso", description="Extended state observers with an artificial delay.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help=f"scenario YAML file or bundled preset ({', '.join(PRESETS)})")
    common.add_argument("--seed", type=int, default=None, help="override the noise seed")
    common.add_argument("--observer", default=None, help="observer name filter (glob or substring)")
    outp = argparse.ArgumentParser(add_help=False)
    outp.add_argument("--out", default=".", help="output directory for CSV and metric files")
    sub.add_parser("check", parents=[common], help="validate a scenario and its observability")
    sub.add_parser("design", parents=[common], help="print gains, poles and stability constants")
    sub.add_parser("run", parents=[common, outp], help="simulate and write the trace CSV and metrics")
    sw = sub.add_parser("sweep", parents=[common, outp], help="run one delay observer over several delays")
    sw.add_argument("--h", type=_parse_h, default=None, help="comma-separated delays in seconds")
    return p


COMMANDS = {"check": cmd_check, "design": cmd_design, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args, out)
    except (ScenarioError, DesignError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
