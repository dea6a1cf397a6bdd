"""Command line entry point: ``idms generate|run|eval|cost|report``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
failures while running.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import costmodel
from .delayspace import MatrixFormatError, load_matrix
from .experiment import ExperimentError, cmd_run, load_experiment, render_report
from .metrics import matrix_similarity
from .protocols import ConstructionAborted
from .workload import ConfigError, WorkloadConfig, generate, parse_config, save_workload

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_kv(path) -> dict:
    raw = {}
    if path is None:
        return raw
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(s.split()[0], f"line {ln}: expected 'key = value'")
        key, _, value = s.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def cmd_generate(args) -> int:
    raw = _read_kv(args.config)
    raw.pop("out_dir", None)
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    known = {f.name for f in dataclasses.fields(WorkloadConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown workload key")
    w = generate(parse_config(WorkloadConfig, raw))
    out = save_workload(w, args.out)
    print(f"wrote {len(w.series)} matrices, {len(w.hosts)} hosts to {out}")
    return EXIT_OK


def cmd_run_cli(args) -> int:
    cfg = load_experiment(args.config, seed=args.seed)
    out = cmd_run(cfg, args.out)
    sys.stdout.write((out / "report.txt").read_text())
    return EXIT_OK


def cmd_eval(args) -> int:
    a, b = load_matrix(args.matrix_a), load_matrix(args.matrix_b)
    if a.labels != b.labels:
        raise ValueError(f"label sets differ ({a.n} vs {b.n} ASes)")
    rep = matrix_similarity(a, b, args.threshold)
    lines = ["measure,threshold,fraction_below"]
    lines += [f"{kind},{t:g},{frac:.6f}" for kind, t, frac in rep.cdf_rows()]
    lines.append(f"# fraction of AE under {args.threshold:g} ms: {rep.fraction_under:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_cost(args) -> int:
    params = costmodel.CostParams(N=args.N, p=args.p, m=args.m, b=args.b, q=args.q)
    rows = costmodel.figure_table(tuple(args.L), args.N, params)
    text = costmodel.cost_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    sys.stdout.write(render_report(args.dir))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="idms", description="AS-level delay matrix service simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic workload directory")
    g.add_argument("--config", type=Path)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="run the full evaluation and write a report directory")
    r.add_argument("--config", type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", type=Path)
    r.set_defaults(fn=cmd_run_cli)

    e = sub.add_parser("eval", help="compare two matrices")
    e.add_argument("matrix_a", type=Path)
    e.add_argument("matrix_b", type=Path)
    e.add_argument("--threshold", type=float, default=20.0)
    e.add_argument("--out", type=Path)
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("cost", help="closed-form cost table")
    c.add_argument("--L", type=int, nargs="+", default=list(costmodel.FIGURE_LS))
    c.add_argument("--N", type=int, default=costmodel.FIGURE_N)
    c.add_argument("--p", type=float, default=0.01)
    c.add_argument("--m", type=int, default=20)
    c.add_argument("--b", type=int, default=40)
    c.add_argument("--q", type=float, default=0.1)
    c.add_argument("--out", type=Path)
    c.set_defaults(fn=cmd_cost)

    rp = sub.add_parser("report", help="render a run directory as text")
    rp.add_argument("dir", type=Path)
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"idms: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.fn(args)
    except (ConfigError, MatrixFormatError, FileNotFoundError, ValueError) as exc:
        print(f"idms: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConstructionAborted, ExperimentError, RuntimeError) as exc:
        print(f"idms: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
