"""Command line entry point ``zvonkin-em``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
import argparse
import logging
import sys
from dataclasses import replace

from . import problems
from .errors import RuntimeFailure, ValidationError, ZvonkinError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

log = logging.getLogger("zvonkin_em")


def _cmd_run(args):
    from .harness import emit_report, load_config, run_experiment

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    result = run_experiment(cfg)
    paths = emit_report(result, cfg.out_dir)
    for r in result.rows:
        print(f"{r.problem:24s} eta={r.eta:<10.6g} w1={r.w1:<12.5g} floor={r.floor:.5g}")
    for key, fit in result.fits.items():
        if fit is None:
            print(f"fit {key}: skipped")
        else:
            print(f"fit {key}: p={fit.exponent:.4f} ci=[{fit.ci[0]:.4f}, {fit.ci[1]:.4f}] "
                  f"rms={fit.residual_rms:.3g} used={len(fit.points_used)}")
    for w in result.warnings:
        print(f"warning: {w}")
    for name, p in paths.items():
        print(f"wrote {name}: {p}")
    return EXIT_OK


def _cmd_solve_corrector(args):
    from .corrector import default_grid, save_field, select_lambda
    from .harness import load_config

    cfg = load_config(args.config)
    problem = cfg.problem
    grid = default_grid(problem.dim, cfg.grid_radius, cfg.grid_n)
    lam, fld = select_lambda(problem, grid, target=cfg.lambda_target)
    save_field(fld, args.cache)
    print(f"lambda={lam:g} sup_u={fld.sup_u:.6g} sup_grad_u={fld.sup_grad_u:.6g} "
          f"grid={grid.n_per_axis}^{grid.dim} -> {args.cache}")
    return EXIT_OK


def _cmd_check(args):
    from .harness import assumption_reports, load_config

    cfg = load_config(args.config)
    reports = assumption_reports(cfg.problem)
    ok = True
    for name, rep in reports.items():
        ok &= rep["passed"]
        detail = ", ".join(f"{k}={v:.6g}" for k, v in rep.items()
                           if isinstance(v, float))
        print(f"{'PASS' if rep['passed'] else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_VALIDATION


def _cmd_list(args):
    for name, desc in problems.list_problems():
        print(f"{name:16s} {desc}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="zvonkin-em",
                                 description="Zvonkin-transformed Euler-Maruyama sampling")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full experiment: CSV, plot, summary")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.set_defaults(func=_cmd_run)

    sc = sub.add_parser("solve-corrector", help="solve the corrector and cache it")
    sc.add_argument("--config", required=True)
    sc.add_argument("--cache", required=True)
    sc.set_defaults(func=_cmd_solve_corrector)

    ck = sub.add_parser("check", help="sampled assumption checks only")
    ck.add_argument("--config", required=True)
    ck.set_defaults(func=_cmd_check)

    ls = sub.add_parser("list-problems", help="registered problem presets")
    ls.set_defaults(func=_cmd_list)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeFailure, ZvonkinError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything unexpected is still a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
