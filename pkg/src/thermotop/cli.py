"""Command line: ``thermotop run | verify | bench``.

Exit codes: 0 when a run ends by reaching the target volume or by an active
constraint, 1 on bad input, 2 when an analysis fails, 3 when ``verify``
finds a sensitivity outside tolerance.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checks import fd_sensitivity_suite
from .driver import run
from .export import export_vtk, write_run_log
from .fea import load_ratio
from .problem import PRESETS, ProblemError, generate_benchmark, load_problem, serialize_problem

EXIT_OK, EXIT_INPUT, EXIT_FEA, EXIT_VERIFY = 0, 1, 2, 3


def _progress(row: dict, design) -> None:
    print(
        f"step {row['step']:3d}  vf {row['vf']:.4f}  J/J0 {row['J_ratio']:.3f}  "
        f"sigma/sigma0 {row['sigma_ratio']:.3f}  FEA {row['fea_count']}",
        flush=True,
    )


def cmd_run(args) -> int:
    defn = load_problem(args.problem, args.override)
    problem = defn.build()
    design, record = run(problem, defn.optimizer_config(), callback=None if args.quiet else _progress)
    if not record.rows:
        print(f"termination: {record.termination}  ({record.message})")
        return EXIT_OK
    final = record.final
    print(
        f"termination: {record.termination}  vf {final['vf']:.4f}  J/J0 {final['J_ratio']:.4f}  "
        f"sigma/sigma0 {final['sigma_ratio']:.4f}  FEAs {record.fea_count}"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_run_log(record, out / "run.csv")
        export_vtk(problem.model.grid, design, record.final_fields, out / "result.vtk")
        (out / "problem.txt").write_text(serialize_problem(defn))
        print(f"wrote {out / 'run.csv'}, {out / 'result.vtk'}, {out / 'problem.txt'}")
    if record.termination == "fea_failure":
        print(f"analysis failed: {record.message}", file=sys.stderr)
        return EXIT_FEA
    return EXIT_OK


def cmd_verify(args) -> int:
    results = fd_sensitivity_suite(n_elements=args.elements, seed=args.seed, tolerance=args.tolerance)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.mode:9s} {r.qoi:12s} {r.n_elements} elements  max rel err {r.max_relative:.2e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_bench(args) -> int:
    dts = args.dt if args.dt else [None]
    print(f"{'dt':>6} {'vf':>7} {'J/J0':>7} {'s/s0':>7} {'|fth|/|fst|':>12} {'FEAs':>6}  termination")
    code = EXIT_OK
    for dt in dts:
        overrides = list(args.override or [])
        if dt is not None:
            overrides.append(f"thermal=uniform {dt}")
        defn = generate_benchmark(args.preset, overrides)
        problem = defn.build()
        _, record = run(problem, defn.optimizer_config())
        f = record.final
        ratio = load_ratio(record.final_fields)
        label = "" if dt is None else f"{dt:g}"
        print(
            f"{label:>6} {f['vf']:7.4f} {f['J_ratio']:7.3f} {f['sigma_ratio']:7.3f} {ratio:12.3f} "
            f"{record.fea_count:6d}  {record.termination}",
            flush=True,
        )
        if record.termination == "fea_failure":
            code = EXIT_FEA
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermotop", description="Thermo-elastic voxel topology optimization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver and driver details")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize a problem file or preset")
    p.add_argument("problem", help=f"problem file or preset ({', '.join(PRESETS)})")
    p.add_argument("--out", help="directory for run.csv, result.vtk and problem.txt")
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="replace a problem entry")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress per-step progress")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check adjoint sensitivities against finite differences")
    p.add_argument("--elements", type=int, default=30, help="elements sampled per case")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.02, help="max relative error")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a benchmark preset and print the ratio table")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--dt", type=float, nargs="+", help="uniform temperature changes to sweep")
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="replace a problem entry")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
