"""Command line entry point: run presets or config files, check parameters, sweep momentum."""

from __future__ import annotations

import argparse
import io
import sys

from . import harness, theory
from .potentials import InvalidParameterError
from .samplers import SamplerConfig, validate_config


def _csv_list(text, cast=str):
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


def _emit(rows, out):
    """Write (iteration, scheme, metric, value) rows as CSV to ``out`` or stdout."""
    rec = harness.RunRecord(rows=list(rows))
    if out:
        harness.export_csv(rec, out, write_batches=False)
    else:
        buf = io.StringIO()
        buf.write(",".join(harness.CSV_HEADER) + "\n")
        for it, s, m, v in sorted(rec.rows, key=lambda r: (r[1], r[0], r[2])):
            buf.write(f"{it},{s},{m},{format(v, '.17g')}\n")
        sys.stdout.write(buf.getvalue())


def cmd_run(args):
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        schemes = _csv_list(args.sampler) if args.sampler else list(harness.ALL_SCHEMES)
        cfg = harness.preset(args.preset, schemes=schemes)
    if args.sampler and args.config:
        schemes = _csv_list(args.sampler)
        missing = [s for s in schemes if s not in cfg.samplers]
        cfg.samplers.update(harness.recommended_samplers(missing, cfg.potential.lipschitz))
        cfg.schemes = tuple(schemes)
    for flag, attr in (("chains", "n_chains"), ("steps", "n_steps"), ("seed", "seed"),
                       ("metric_stride", "metric_stride"), ("out", "out")):
        val = getattr(args, flag)
        if val is not None:
            setattr(cfg, attr, val)
    cfg.force = cfg.force or args.force
    if not args.no_reference:
        harness.attach_reference(cfg)
    rec = harness.run_ensemble(cfg, workers=args.workers)
    if cfg.out:
        harness.export_csv(rec, cfg.out)
        for s, t in rec.wall_clock.items():
            print(f"{s:<10} {t:8.2f} s", file=sys.stderr)
    else:
        _emit(rec.rows, None)
    return 0


def cmd_validate(args):
    cfg = SamplerConfig(args.dt, args.eps, 1.0)
    rep = validate_config(cfg, args.kappa)
    print(rep.summary())
    return 0 if rep.passed else 1


def cmd_theory(args):
    cfg = SamplerConfig(args.dt, args.eps, 1.0)
    rows = []
    print("== step-size bound")
    print(validate_config(cfg, args.kappa).summary())
    print("== continuous contraction")
    try:
        cont = theory.continuous_contraction_check(args.eps, args.kappa, args.grid)
        print(cont.summary())
        rows += [(0, "continuous", "min_tile_a", cont.min_tile_a),
                 (0, "continuous", "min_determinant", cont.min_determinant)]
    except theory.DomainError as exc:
        print(f"skipped: {exc}")
    print("== discrete contraction")
    disc = theory.discrete_contraction_check(cfg, args.kappa, args.grid)
    print(disc.summary())
    rows += [(0, "discrete", "min_tile_a", disc.min_tile_a),
             (0, "discrete", "min_determinant", disc.min_determinant),
             (0, "discrete", "decay_factor", disc.decay_factor),
             (0, "discrete", "target_factor", disc.target_factor),
             (0, "discrete", "passed", float(disc.passed))]
    print("== bias constants")
    try:
        lip = 1.0 / cfg.inv_mass
        moments = (args.dim * cfg.inv_mass, args.dim * args.kappa / lip)
        bb = theory.bias_constants(args.eps, cfg.inv_mass, args.dt, args.dim, args.kappa,
                                   moments, delta=args.delta, w2_init=args.w2_init)
        for k, v in bb.rows():
            print(f"{k:<20} {v}")
            if v is not None:
                rows.append((0, "bias", k, float(v)))
    except theory.DomainError as exc:
        print(f"skipped: {exc}")
    if args.out:
        _emit(rows, args.out)
    return 0 if disc.passed else 1


def cmd_sweep(args):
    pts = harness.sweep_beta(_csv_list(args.betas, float), dt=args.dt, chains=args.chains,
                             steps=args.steps, seed=args.seed)
    rows = []
    for i, p in enumerate(pts):
        label = f"beta={p.beta:g}"
        print(f"{label:<10} friction {p.friction:8.4g}  acf[10] {p.acf_lag10:.4f}  ess {p.ess:10.1f}")
        rows += [(i, label, "acf_lag10", p.acf_lag10), (i, label, "ess", p.ess)]
        rows += [(lag, label, "acf", float(a)) for lag, a in enumerate(p.acf)]
    if args.out:
        _emit(rows, args.out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="inertial-langevin", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or config file and write metric CSV")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=harness.PRESETS)
    src.add_argument("--config", help="key = value config file")
    run.add_argument("--sampler", help="comma list of schemes (ila, ula, em, oba, baoab, ses, sor-gibbs)")
    run.add_argument("--chains", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="CSV path; final batches go next to it")
    run.add_argument("--metric-stride", type=int, dest="metric_stride")
    run.add_argument("--force", action="store_true", help="run even if parameter checks fail")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--no-reference", action="store_true",
                     help="skip the long reference run (laplace2d, tv_denoise)")
    run.set_defaults(func=cmd_run)

    for name, fn, hlp in (("validate", cmd_validate, "check ILA step-size and friction constraints"),
                          ("theory", cmd_theory, "contraction checks and bias constants")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--dt", type=float, required=True)
        p.add_argument("--kappa", type=float, default=1.0)
        if name == "theory":
            p.add_argument("--grid", type=int, default=1024)
            p.add_argument("--dim", type=int, default=1)
            p.add_argument("--delta", type=float)
            p.add_argument("--w2-init", type=float, dest="w2_init")
            p.add_argument("--out")
        p.set_defaults(func=fn)

    sw = sub.add_parser("sweep-beta", help="autocorrelation and ESS across momentum values")
    sw.add_argument("--betas", default="0,0.5,0.9")
    sw.add_argument("--dt", type=float, default=0.1)
    sw.add_argument("--chains", type=int, default=100)
    sw.add_argument("--steps", type=int, default=20_000)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, InvalidParameterError, theory.DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
