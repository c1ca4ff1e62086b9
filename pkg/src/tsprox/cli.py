"""``tsprox`` command-line runner.

Exit codes: 0 success, 1 a bound or claim failed, 2 invalid configuration,
3 an inner loop hit its safety cap, 4 I/O or schema error, 64 bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import plotting
from .errors import CappedRunError, ConfigError, ParameterError, SchemaError
from .experiments import (PRESETS, ExperimentConfig, ExperimentResult, load_config, preset,
                          report_dict, run_experiment, verify_bounds, write_csv)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CAPPED, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3, 4, 64
OUT_ENV = "TSPROX_OUT"

log = logging.getLogger("tsprox")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tsprox", description="Run time-smoothed prox-grad experiments and check their bounds.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", metavar="PATH", help="JSON experiment config")
    src.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS), help="built-in experiment")
    src.add_argument("--verify", metavar="PATH", nargs="+",
                     help="trace files or directories to re-check offline")
    src.add_argument("--list-presets", action="store_true")
    p.add_argument("--seed", type=_u64, help="base seed (replication r uses seed + r)")
    p.add_argument("--replications", type=_positive, help="override the replication count")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default: ${OUT_ENV} or ./tsprox-out)")
    p.add_argument("--jobs", type=_positive, default=1, help="worker processes for replications")
    p.add_argument("--replay", action="store_true", help="with --verify, also re-run each solver")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "tsprox-out")


def _dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1))


def write_artifacts(result: ExperimentResult, out: Path, figures: bool = True) -> dict:
    """Trace JSON per replication, ``summary.csv``, ``report.json`` and figures under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    tdir = out / "traces"
    for rep in result.replications:
        tag = "" if rep.arm == "main" else f"{rep.arm}-"
        _dump(rep.to_json(), tdir / f"trace-{tag}w{rep.w}-seed{rep.seed}.json")
    write_csv(result, out / "summary.csv")
    report = report_dict(result)
    if figures:
        report["figures"] = [str(p.relative_to(out)) for p in render_figures(result, out / "figures")]
    _dump(report, out / "report.json")
    return report


def render_figures(result: ExperimentResult, fdir: Path) -> list:
    reps = [r for r in result.replications if not r.capped and r.arm == "main"]
    if not reps:
        return []
    paths = []
    kind = result.config.kind
    if kind == "games":
        rep = reps[0]
        paths.append(plotting.equilibrium_residuals(rep.extra["residuals"], rep.echo["epsilon"],
                                                    fdir / "equilibrium.png", w=rep.w))
    groups, tau, cum = {}, {}, {}
    for r in reps:
        name = "regret_det" if r.echo["solver"] == "alg1" else "regret_stoch"
        for p, rep in enumerate(r.reports):
            label = f"w={r.w}" if len(r.reports) == 1 else f"player {p}"
            b = rep.bound(name)
            groups.setdefault(label, ([], []))
            groups[label][0].append(b.measured)
            groups[label][1].append(b.bound)
            if label not in tau:
                tau[label] = r.traces[p].tau[: r.traces[p].rounds]
        if "regret_terms" in r.extra and f"w={r.w}" not in cum:
            cum[f"w={r.w}"] = r.extra["regret_terms"]
    paths.append(plotting.regret_vs_bound(groups, fdir / "regret_vs_bound.png"))
    paths.append(plotting.inner_iterations(tau, fdir / "inner_iterations.png"))
    if cum:
        paths.append(plotting.cumulative_regret(cum, fdir / "cumulative_regret.png"))
    if kind == "offline":
        vals = [r.extra["stationarity"] for r in reps]
        paths.append(plotting.stationarity_histogram(vals, float(result.config.params["epsilon"]),
                                                     fdir / "stationarity.png"))
    return paths


def _print_summary(report: dict):
    print(f"experiment {report['experiment']}: {report['runs']} run(s), capped {report['capped']}")
    for g in report["groups"]:
        viol = ", ".join(f"{k}={v}" for k, v in g["violations"].items()) or "none"
        print(f"  arm={g['arm']} w={g['w']}: runs={g['runs']} mean Reg_w={g['mean_local_regret']:.6g} "
              f"mean V={g['mean_trajectory_variation']:.6g} violations: {viol}")
        if g["advisory_violations"]:
            adv = ", ".join(f"{k}={v}" for k, v in g["advisory_violations"].items())
            print(f"    advisory (reported, not enforced): {adv}")
    for c in report["claims"]:
        print(f"  [{c['status']}] {c['name']}: measured {c['measured']:.6g} vs {c['bound']:.6g}")
    print("PASS" if report["passed"] else "FAIL")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.list_presets:
        for name, d in PRESETS.items():
            print(f"{name:14s} kind={d.get('kind', 'online')} solver={d['solver']}")
        return EXIT_OK
    try:
        if args.verify is not None:
            report = verify_bounds(args.verify, replay=args.replay)
            text = json.dumps(report, indent=1)
            if args.out:
                _dump(report, Path(args.out) / "verify.json")
            print(text if args.verbose else
                  f"verified {report['files']} file(s): {'PASS' if report['passed'] else 'FAIL'}")
            return EXIT_OK if report["passed"] else EXIT_FAILED
        cfg = load_config(args.config) if args.config else preset(args.preset)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.replications is not None:
            cfg.replications = args.replications
        cfg.check()
        log.info("running %s with %d replication(s)", cfg.name, cfg.replications)
        result = run_experiment(cfg, jobs=args.jobs)
        out = _out_dir(args)
        report = write_artifacts(result, out, figures=not args.no_figures)
        _print_summary(report)
        print(f"artifacts in {out}")
        if result.capped:
            return EXIT_CAPPED
        return EXIT_OK if result.passed else EXIT_FAILED
    except (ConfigError, ParameterError) as err:
        print(f"tsprox: invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CappedRunError as err:
        print(f"tsprox: capped run: {err}", file=sys.stderr)
        return EXIT_CAPPED
    except (OSError, SchemaError) as err:
        print(f"tsprox: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
