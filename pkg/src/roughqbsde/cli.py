"""Command line front end.

    roughqbsde run CONFIG [--seed N] [--out DIR] [--threads N] [--dump-flow] [--dump-zvonkin]
    roughqbsde run --all-acceptance
    roughqbsde study CONFIG --levels K
    roughqbsde list

CONFIG is JSON: either a list of scenarios or ``{"scenarios": [...]}``.  An
entry may reference the built-in library with ``{"builtin": "cole_hopf"}``.
Exit status is 1 if any declared oracle fails and 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from . import scenarios as S

OUT_ENV = "ROUGHQBSDE_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunReport:
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    def write(self, filename) -> None:
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "check", "value", "reference", "tolerance", "passed", "detail"])
            for c in self.checks:
                w.writerow([c.scenario, c.check, repr(c.value), repr(c.reference), repr(c.tolerance),
                            int(c.passed), c.detail])


def load_config(path: str) -> list[dict]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    entries = data.get("scenarios", []) if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: expected a list of scenarios")
    try:
        return [S.resolve(e) for e in entries]
    except S.ScenarioError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def run_scenarios(scenarios: list[dict], opts: S.Options, echo=print) -> RunReport:
    report = RunReport()
    names = [sc.get("name") for sc in scenarios]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        report.errors.append(f"duplicate scenario names: {', '.join(sorted(dup))}")
    for sc in scenarios:
        report.errors += S.validate(sc)
    if report.errors:
        for e in report.errors:
            echo(f"ERROR {e}")
        return report
    os.makedirs(opts.out, exist_ok=True)
    for sc in scenarios:
        try:
            checks = S.run_scenario(sc, opts)
        except Exception as exc:  # report and continue with the next scenario
            checks = [S.Check(sc["name"], "run", float("nan"), 0.0, 0.0, False, f"{type(exc).__name__}: {exc}")]
        for c in checks:
            echo(c.line())
        report.checks += checks
    report.write(os.path.join(opts.out, "report.csv"))
    return report


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughqbsde", description="Quadratic BSDEs with rough drivers.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q):
        q.add_argument("--seed", type=int, default=None, help="override every scenario seed")
        q.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")
        q.add_argument("--threads", type=int, default=1, help="worker threads")
        q.add_argument("-v", "--verbose", action="store_true")

    r = sub.add_parser("run", help="run scenarios and check their oracles")
    r.add_argument("config", nargs="?")
    r.add_argument("--all-acceptance", action="store_true", help="run the built-in acceptance scenarios")
    r.add_argument("--dump-flow", action="store_true", help="write flow trajectories (t, phi, dphi, d2phi)")
    r.add_argument("--dump-zvonkin", action="store_true", help="write the Zvonkin map (x, F, u, uprime)")
    common(r)
    s = sub.add_parser("study", help="convergence study under geometric refinement")
    s.add_argument("config")
    s.add_argument("--levels", type=int, default=3)
    common(s)
    sub.add_parser("list", help="list built-in scenarios")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name in S.BUILTINS:
            tag = " (acceptance)" if name in S.ACCEPTANCE else ""
            print(f"{name}{tag}")
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("ERROR --threads must be at least 1", file=sys.stderr)
        return 2
    out = args.out or os.environ.get(OUT_ENV) or "out"
    opts = S.Options(out, args.seed, args.threads, getattr(args, "dump_flow", False),
                     getattr(args, "dump_zvonkin", False))
    try:
        if args.command == "run":
            if args.all_acceptance == bool(args.config):
                print("ERROR give either a config file or --all-acceptance", file=sys.stderr)
                return 2
            scenarios = [S.builtin(n) for n in S.ACCEPTANCE] if args.all_acceptance else load_config(args.config)
        else:
            scenarios = load_config(args.config)
    except ConfigError as exc:
        print(f"ERROR {exc}", file=sys.stderr)
        return 2
    if args.command == "study":
        return _study(scenarios, args.levels, opts)
    report = run_scenarios(scenarios, opts)
    if report.errors:
        return 2
    n_fail = sum(not c.passed for c in report.checks)
    print(f"{len(report.checks) - n_fail}/{len(report.checks)} checks passed")
    return 0 if report.passed else 1


def _study(scenarios, levels: int, opts: S.Options) -> int:
    if levels < 1:
        print("ERROR --levels must be at least 1", file=sys.stderr)
        return 2
    errors = [e for sc in scenarios for e in S.validate(sc)]
    if errors:
        for e in errors:
            print(f"ERROR {e}", file=sys.stderr)
        return 2
    os.makedirs(opts.out, exist_ok=True)
    for sc in scenarios:
        try:
            rows = S.study(sc, levels, opts)
        except S.ScenarioError as exc:
            print(f"ERROR {exc}", file=sys.stderr)
            return 2
        out = os.path.join(opts.out, f"study_{sc['name']}.csv")
        S.write_study_csv(rows, out)
        for r in rows:
            print(f"{sc['name']} level={r[0]} n_steps={r[1]} n_paths={r[2]} value={r[4]:.6g} error={r[6]:.3g}")
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
