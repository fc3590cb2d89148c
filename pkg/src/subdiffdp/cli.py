"""Command-line front end: run, list, validate, serve.

`run` takes a scenario file, a builtin name, or the token 'builtins' and
executes the suite in process, printing one line per check and writing
report.json / metadata.json / tables/*.csv when --out is given. Exit codes:
0 all checks pass (expected hypothesis violations included), 1 check
failure, 2 parse or validation error, 3 capacity overrun.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .scenarios import (available_builtins, load_scenarios, run_suite,
                        write_outputs)


def _load_target(target: str):
    path = Path(target)
    if path.exists():
        with open(path) as fh:
            return load_scenarios(json.load(fh))
    return load_scenarios(target)


def _cmd_run(args) -> int:
    try:
        scenarios = _load_target(args.target)
    except (ValueError, json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    result = run_suite(scenarios, jobs=args.jobs, strict=args.strict,
                       tol_scale=args.tol_scale, seed=args.seed)
    if not args.quiet:
        for rep in result.reports:
            for c in rep.checks:
                if c["pass"]:
                    flag = "PASS"
                elif c["classification"] == "hypothesis-violation":
                    flag = "FAIL (hypothesis)"
                else:
                    flag = "FAIL"
                res = "-" if c["residual"] is None else f"{c['residual']:.3e}"
                print(f"[{flag:17s}] {rep.scenario} :: {c['name']}  residual={res}")
        for msg in result.capacity_errors:
            print(f"[CAPACITY         ] {msg}")
        s = result.summary()
        print(f"{s['scenarios']} scenarios, {s['checks']} checks: "
              f"{s['pass']} passed, {s['hypothesis-violation']} hypothesis "
              f"violations, {s['theorem-violation']} theorem violations")
    if args.out:
        paths = write_outputs(result, args.out, run_info={
            "target": args.target, "seed_override": args.seed,
            "tol_scale": args.tol_scale, "strict": args.strict,
            "jobs": args.jobs})
        if not args.quiet:
            print(f"report written to {paths['report']}")
    return result.exit_code


def _cmd_list(args) -> int:
    for s in sorted(available_builtins().values(), key=lambda s: s.name):
        print(f"{s.name:30s} [{s.kind}] {s.description}")
    return 0


def _cmd_validate(args) -> int:
    try:
        scenarios = _load_target(args.target)
    except (ValueError, json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    names = ", ".join(s.name for s in scenarios)
    print(f"ok: {len(scenarios)} scenario(s): {names}" if scenarios
          else "ok: 0 scenarios")
    return 0


def _cmd_serve(args) -> int:
    try:
        import uvicorn
    except ImportError:
        print("error: serving needs uvicorn (install the 'service' extra)",
              file=sys.stderr)
        return 2
    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subdiffdp",
        description="Run verification scenarios for set-valued calculus "
                    "and stochastic control")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario file or builtins")
    run_p.add_argument("target",
                       help="scenario JSON file, builtin name, or 'builtins'")
    run_p.add_argument("--out", help="directory for report.json and tables")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override every scenario seed")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="scenarios to run concurrently")
    run_p.add_argument("--strict", action="store_true",
                       help="hypothesis-violation failures fail the run")
    run_p.add_argument("--tol-scale", type=float, default=1.0,
                       help="multiply all tolerances")
    run_p.add_argument("--quiet", action="store_true",
                       help="suppress per-check lines")
    run_p.set_defaults(fn=_cmd_run)

    list_p = sub.add_parser("list", help="show the builtin catalogue")
    list_p.set_defaults(fn=_cmd_list)

    val_p = sub.add_parser("validate", help="parse and validate a target")
    val_p.add_argument("target")
    val_p.set_defaults(fn=_cmd_validate)

    serve_p = sub.add_parser("serve", help="start the HTTP service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
