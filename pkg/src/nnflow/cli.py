"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 physics-level failure
(certification failure, non-convergence, watchdog trigger).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import constitutive as cst
from .config import ConfigError, load_config, parse_config
from .elliptic import ConvergenceError, solve, verify_h2_estimate
from .fieldio import save_field
from .lame import LameParameter, riesz_constants
from .monitors import blowup_watchdog
from .scheme import CheckpointStore, PicardError, continuation_in_delta, twin_run
from .torus import TorusGrid, random_field

OK, USAGE, PHYSICS = 0, 1, 2

log = logging.getLogger("nnflow")


class UsageError(Exception):
    pass


def _kv(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"parameter {k} needs a number, got {v!r}") from None
    return out


def _config(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return parse_config("")


def _outdir(args, cfg):
    path = getattr(args, "output", None) or cfg.output_dir
    os.makedirs(path, exist_ok=True)
    return path


def cmd_certify(args, out):
    if args.config:
        law = _config(args).law()
    else:
        try:
            law = cst.make_law(args.law, **_kv(args.param))
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    try:
        eps = cst.certify(law)
    except cst.CertificationError as exc:
        print(f"law {law.name}: NOT certified", file=out)
        for ineq, value, witness in exc.violations:
            print(f"  violated {ineq}: value {value:.6g} at {witness}", file=out)
        return PHYSICS
    print(f"law {law.name}: certified", file=out)
    for name in ("eps_mu_1", "eps_mu_2", "eps_lambda_1", "eps_lambda_2"):
        print(f"  {name} = {getattr(eps, name):.10g}", file=out)
    for ineq, margin in eps.margins().items():
        print(f"  margin {ineq}: {margin:.6g}", file=out)
    return OK


def cmd_lame(args, out):
    try:
        c = riesz_constants(args.p, args.d, LameParameter(args.lambda_bar))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{c.C_total:g}", file=out)
    if args.verbose:
        print(f"C1 = {c.C1:g}\nC2 = {c.C2:g}", file=out)
    return OK


def cmd_elliptic(args, out):
    cfg = _config(args)
    law = cfg.law()
    grid = cfg.grid() if args.config else TorusGrid(args.d, args.n)
    f = random_field(grid, 1, args.band, seed=cfg["seed"] if args.config else args.seed,
                     amplitude=args.amplitude, zero_mean=True)
    try:
        rep = solve(law, f, tol=args.tol, raise_on_failure=True)
    except cst.CertificationError as exc:
        print(f"law not certified: {exc}", file=out)
        return PHYSICS
    except ConvergenceError as exc:
        print(f"elliptic solve failed: {exc}", file=out)
        return PHYSICS
    chk = verify_h2_estimate(law, f, rep)
    print(f"iterations {rep.iterations} residual {rep.residual_l2:.3e}", file=out)
    ratios = rep.contraction_ratios()
    if len(ratios):
        print(f"contraction ratio (last) {ratios[-1]:.4g}", file=out)
    print(f"H2 estimate: lhs {chk.lhs:.6g} rhs {chk.rhs:.6g} satisfied {chk.satisfied}", file=out)
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        save_field(os.path.join(args.output, "u.nnf"), rep.u)
    return OK


def _write_monitors(path, record):
    with open(path, "w", newline="") as fh:
        record.to_csv(fh)


def cmd_run(args, out):
    cfg = _config(args)
    outdir = _outdir(args, cfg)
    law, pressure, data = cfg.law(), cfg.pressure(), cfg.data()
    store = CheckpointStore(os.path.join(outdir, "checkpoints"))
    try:
        cont = continuation_in_delta(data, law, pressure, cfg.delta_schedule(), cfg.scheme(),
                                     checkpoint=store, resume=args.resume)
    except PicardError as exc:
        print(f"run failed: {exc}", file=out)
        return PHYSICS
    except (ConvergenceError, cst.CertificationError) as exc:
        print(f"run failed: {exc}", file=out)
        return PHYSICS
    final = cont.final
    _write_monitors(os.path.join(outdir, "monitors.csv"), final.monitors)
    with open(os.path.join(outdir, "trace.json"), "w") as fh:
        json.dump([json.loads(r.trace.to_json()) for r in cont.results], fh, sort_keys=True,
                  indent=1)
    save_field(os.path.join(outdir, "rho_final.nnf"), final.rho.field(-1),
               float(final.rho.times[-1]), cont.deltas[-1])
    save_field(os.path.join(outdir, "u_final.nnf"), final.u.field(-1),
               float(final.u.times[-1]), cont.deltas[-1])
    verdict = blowup_watchdog(final.monitors, cfg.threshold(), final.T_star, cfg["monitor.factor"])
    triggered = any(r.trace.trigger_time is not None for r in cont.results)
    lines = [cont.report(), f"T_star {final.T_star:.6g}",
             f"converged {[r.converged for r in cont.results]}",
             f"watchdog {'triggered' if triggered or verdict.triggered else 'healthy'}"]
    for r in cont.results:
        if r.trace.trigger_time is not None:
            lines.append(f"  delta {r.trace.delta:.3e}: trigger at t={r.trace.trigger_time:.6g}")
    text = "\n".join(lines)
    with open(os.path.join(outdir, "report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text, file=out)
    if triggered or verdict.triggered or not all(r.converged for r in cont.results):
        return PHYSICS
    return OK


def cmd_twin(args, out):
    cfg = _config(args)
    outdir = _outdir(args, cfg)
    law, pressure = cfg.law(), cfg.pressure()
    base = cfg.data()
    grid = cfg.grid()
    shift = None
    if args.perturb_rho:
        shift = args.perturb_rho * np.cos(grid.x[0])
    if args.perturb_f and base.f is None:
        raise UsageError("--perturb-f needs a configured forcing (data.f.kind, data.f.amplitude)")
    other = cfg.data(f_scale=1.0 + args.perturb_f, rho_shift=shift)
    delta = cfg.delta_schedule()[-1]
    try:
        rep = twin_run(base, other, delta, law, pressure, cfg.scheme())
    except PicardError as exc:
        print(f"twin run failed: {exc}", file=out)
        return PHYSICS
    with open(os.path.join(outdir, "twin.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u_divergence", "rho_divergence"])
        for row in zip(rep.times, rep.u_divergence, rep.rho_divergence):
            w.writerow([repr(float(v)) for v in row])
    print(f"identical {rep.identical}", file=out)
    print(f"data difference {rep.data_difference:.6g}", file=out)
    print(f"max divergence {rep.max_divergence:.6g}", file=out)
    print(f"ratio {rep.ratio:.6g}", file=out)
    return OK


def cmd_report(args, out):
    path = args.output or _config(args).output_dir
    rep = os.path.join(path, "report.txt")
    mon = os.path.join(path, "monitors.csv")
    if not os.path.exists(rep):
        raise UsageError(f"no run report in {path}")
    with open(rep) as fh:
        print(fh.read().rstrip(), file=out)
    if os.path.exists(mon):
        with open(mon) as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            keys = [k for k in rows[0] if k != "t"]
            print("monitor sup over time:", file=out)
            for k in keys:
                print(f"  {k:16s} {max(float(r[k]) for r in rows):.6g}", file=out)
    return OK


def build_parser():
    ap = argparse.ArgumentParser(prog="nnflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="ellipticity constants of a constitutive law")
    p.add_argument("--law", default="newtonian")
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--config")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("lame-constants", help="Riesz-multiplier constants of the Lame operator")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--lambda-bar", type=float, default=0.0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_lame)

    p = sub.add_parser("elliptic", help="solve -div S u = f for a random band-limited f")
    p.add_argument("--config")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--band", type=int, default=4)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--output")
    p.set_defaults(func=cmd_elliptic)

    p = sub.add_parser("run", help="full pipeline: Picard iteration along the delta schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("twin", help="continuous-dependence experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--perturb-f", type=float, default=0.0)
    p.add_argument("--perturb-rho", type=float, default=0.0)
    p.set_defaults(func=cmd_twin)

    p = sub.add_parser("report", help="summarise a finished run directory")
    p.add_argument("--config")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        return args.func(args, out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return USAGE
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
