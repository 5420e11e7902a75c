"""``linkflow`` command line: scenario generation, estimation and evaluation.

Exit codes are 0 on success, 2 for usage or input validation problems and 3
when training fails (IRL-F divergence or CRL-F infeasibility).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .estimate import EvaluationReport, FlowEstimate, wape
from .estimators import CrlfFlowEstimator, IrlfFlowEstimator, ProblemInfeasible
from .irlf import TrainingAborted
from .network import (
    NetworkFormatError, format_number, load_detector_list, load_network, load_od,
    load_trajectories, load_volumes,
)
from .plot import write_flow_plot
from .scenario import SCENARIO_FILES, generate_scenario, load_link_flows, load_scenario, write_json

log = logging.getLogger("linkflow")

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

FLOWS_FILE = "flows.csv"
TRACE_FILE = "trace.csv"
RUN_FILE = "run.json"
CONFIG_FILE = "effective_config.json"
REPORT_FILE = "report.csv"
PLOT_FILE = "plot.svg"
COMPARISON_FILE = "comparison.csv"


class UsageError(Exception):
    pass


def _rates(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not 0 <= lo < hi <= 1:
        raise argparse.ArgumentTypeError("rates need 0 <= lo < hi <= 1")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linkflow", description="Link flow estimation from trajectories and detector volumes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenario", help="generate a UE ground truth and sampled observations")
    s.add_argument("--network", required=True)
    s.add_argument("--od", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--detectors", help="file with one detector link id per line")
    g.add_argument("--detector-fraction", type=float)
    s.add_argument("--rates", type=_rates, default=(0.25, 0.35), help="sampling rate interval lo:hi")
    s.add_argument("--zero-fraction", type=float, default=0.05, help="share of paths with no trajectories")
    s.add_argument("--k-paths", type=int, default=5)
    s.add_argument("--max-iters", type=int, default=2000)
    s.add_argument("--rel-gap", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    e = sub.add_parser("estimate", help="learn a policy and estimate link flows")
    e.add_argument("--method", required=True, choices=("irlf", "crlf"))
    e.add_argument("--scenario", help="scenario directory")
    e.add_argument("--network")
    e.add_argument("--trajectories")
    e.add_argument("--volumes")
    e.add_argument("--config", help="JSON run configuration")
    e.add_argument("--feature-mode", choices=("unique-id", "road-characteristics"))
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)

    v = sub.add_parser("evaluate", help="score estimates against ground truth")
    v.add_argument("--estimate", help="output directory of an estimate run")
    v.add_argument("--truth", help="ground-truth link flow CSV (default: from the run's scenario)")
    v.add_argument("--compare", nargs="+", metavar="RUN", help="several estimate directories to tabulate")
    v.add_argument("--out", required=True)
    return p


def cmd_scenario(args) -> int:
    net = load_network(args.network)
    od = load_od(args.od)
    dets = load_detector_list(args.detectors, net) if args.detectors else None
    if not 0 <= args.zero_fraction < 1:
        raise UsageError("--zero-fraction must lie in [0, 1)")
    sc, gt = generate_scenario(
        net, od, detectors=dets, detector_fraction=args.detector_fraction, rates=args.rates,
        zero_path_fraction=args.zero_fraction, seed=args.seed, k_paths=args.k_paths,
        max_iters=args.max_iters, rel_gap_tol=args.rel_gap, out_dir=args.out)
    print(f"scenario: {len(sc.trajectories)} trajectories, {len(sc.detectors)} detectors, "
          f"UE relative gap {gt.rel_gap:.2e} -> {args.out}")
    return EXIT_OK


def _load_inputs(args):
    if args.scenario:
        if args.network or args.trajectories or args.volumes:
            raise UsageError("give either --scenario or --network/--trajectories/--volumes, not both")
        sc = load_scenario(args.scenario)
        return sc.network, sc.trajectories, sc.volumes, sc.manifest, str(Path(args.scenario))
    if not (args.network and args.trajectories and args.volumes):
        raise UsageError("estimate needs --scenario or all of --network, --trajectories, --volumes")
    net = load_network(args.network)
    return net, load_trajectories(args.trajectories, net), load_volumes(args.volumes, net), {}, None


def make_estimator(method: str, net, cfg: RunConfig):
    common = dict(feature_mode=cfg.feature_mode, gamma=cfg.gamma, horizon=cfg.horizon,
                  gamma_c=cfg.gamma_c, random_state=cfg.seed)
    if method == "irlf":
        return IrlfFlowEstimator(net, **common, **vars(cfg.irlf))
    return CrlfFlowEstimator(net, **common, **vars(cfg.crlf))


def cmd_estimate(args) -> int:
    cfg = load_config(args.config).with_seed(args.seed)
    if args.feature_mode:
        cfg = RunConfig.from_dict(dict(cfg.to_dict(), feature_mode=args.feature_mode))
    net, trajectories, volumes, manifest, scenario_dir = _load_inputs(args)
    est = make_estimator(args.method, net, cfg)
    est.fit(trajectories, volumes)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.to_dict(), out / CONFIG_FILE)
    est.flow_estimate_.write_csv(out / FLOWS_FILE)
    est.result_.write_trace(out / TRACE_FILE)
    run = {
        "method": args.method,
        "feature_mode": cfg.feature_mode,
        "seed": cfg.seed,
        "scenario": scenario_dir,
        "rates": _rate_interval(manifest),
        "detectors": list(volumes.entries),
        "m_hat": est.m_hat_,
        "beta_star": est.beta_star_,
        "excluded_detectors": est.flow_estimate_.excluded_detectors,
        "version": __version__,
    }
    if args.method == "irlf":
        run.update(converged=est.result_.converged, iterations=len(est.result_.grad_norms),
                   final_feature_gap=est.result_.final_feature_gap)
    else:
        run.update(final_distance=est.result_.final_distance, iterations=len(est.result_.trace))
    write_json(run, out / RUN_FILE)
    print(f"{args.method}: M_hat {est.m_hat_:.6g} beta_star {est.beta_star_:.6g} -> {args.out}")
    return EXIT_OK


def _rate_interval(manifest: dict) -> str | None:
    sampling = manifest.get("sampling")
    if not sampling:
        return None
    return f"{format_number(sampling['rate_lo'])}:{format_number(sampling['rate_hi'])}"


def _read_run(run_dir):
    root = Path(run_dir)
    try:
        run = json.loads((root / RUN_FILE).read_text(encoding="utf-8"))
        rows = list(csv.DictReader(io.StringIO((root / FLOWS_FILE).read_text(encoding="utf-8"))))
        flows = {r["link_id"]: float(r["estimated_flow"]) for r in rows}
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"{run_dir}: not a readable estimate directory ({exc})") from None
    return run, FlowEstimate(flows, run.get("beta_star", 1.0), run.get("method", ""),
                             run.get("excluded_detectors", []))


def _truth_for(run: dict, explicit=None) -> dict[str, float]:
    if explicit:
        path = Path(explicit)
    elif run.get("scenario"):
        path = Path(run["scenario"]) / SCENARIO_FILES["truth_links"]
    else:
        raise UsageError("no ground truth: pass --truth or estimate from a scenario directory")
    if not path.exists():
        raise UsageError(f"missing ground truth file {path}")
    return load_link_flows(path)


def cmd_evaluate(args) -> int:
    if bool(args.estimate) == bool(args.compare):
        raise UsageError("evaluate needs exactly one of --estimate or --compare")
    out = Path(args.out)
    if args.compare:
        return _compare(args.compare, args.truth, out)
    run, est = _read_run(args.estimate)
    report = wape(est, _truth_for(run, args.truth), run.get("detectors", ()))
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / REPORT_FILE)
    write_flow_plot(report.per_link, out / PLOT_FILE,
                    f"{run.get('method', '').upper()} ({run.get('feature_mode', '')}): WAPE {report.wape:.4f}")
    print(report.summary())
    return EXIT_OK


def _compare(run_dirs, truth, out: Path) -> int:
    groups: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    for run_dir in run_dirs:
        run, est = _read_run(run_dir)
        report: EvaluationReport = wape(est, _truth_for(run, truth), run.get("detectors", ()))
        groups[(run.get("method", ""), run.get("feature_mode", ""), run.get("rates") or "")].append(report.wape)
    out.mkdir(parents=True, exist_ok=True)
    header = ["method", "feature_mode", "rate_interval", "runs", "wape_mean", "wape_min", "wape_max"]
    lines = [",".join(header)]
    for key in sorted(groups):
        w = groups[key]
        lines.append(",".join([*key, str(len(w)), f"{np.mean(w):.6f}", f"{min(w):.6f}", f"{max(w):.6f}"]))
    (out / COMPARISON_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {"scenario": cmd_scenario, "estimate": cmd_estimate, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    level = os.environ.get("LINKFLOW_LOG", "warning").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ProblemInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (UsageError, ConfigError, NetworkFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
