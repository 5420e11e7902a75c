"""Synthetic ground truth and observed datasets.

Ground truth is a path-based user equilibrium over the k shortest free-flow
paths of each OD pair. Observed data are exact detector volumes plus
trajectories sampled per path at a random rate, with a fraction of the used
paths left unobserved.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from . import __version__
from .network import (
    NetworkFormatError, OdDemand, RoadNetwork, Trajectory, VolumeObservations, format_number,
    load_detector_list, load_network, load_od, load_trajectories, load_volumes, save_network,
    save_od, save_trajectories, save_volumes,
)

log = logging.getLogger(__name__)

SCENARIO_FILES = {
    "network": "network.csv",
    "od": "od.csv",
    "volumes": "volumes.csv",
    "trajectories": "trajectories.txt",
    "detectors": "detectors.txt",
    "truth_paths": "truth_paths.csv",
    "truth_links": "truth_links.csv",
}
MANIFEST = "manifest.json"


@dataclass
class GroundTruth:
    path_set: list[tuple[tuple[str, str], tuple[str, ...], float]]
    link_flows: dict[str, float]
    od: OdDemand
    beckmann_trace: list[float] = field(default_factory=list)
    rel_gap: float = 0.0
    iterations: int = 0


@dataclass
class SamplingSpec:
    rate_lo: float
    rate_hi: float
    zero_path_fraction: float = 0.05
    seed: int | None = None

    def __post_init__(self):
        if not 0 <= self.rate_lo <= self.rate_hi <= 1:
            raise ValueError("sampling rates need 0 <= lo <= hi <= 1")
        if not 0 <= self.zero_path_fraction < 1:
            raise ValueError("zero_path_fraction must lie in [0, 1)")


def k_shortest_paths(net: RoadNetwork, origin: str, destination: str, k: int) -> list[tuple[str, ...]]:
    """Up to ``k`` node-simple paths by free-flow time, as link sequences."""
    # each link gets its own midpoint node so parallel links stay distinct
    g = nx.DiGraph()
    for l in net.links:
        mid = ("link", l.id)
        g.add_edge(l.tail, mid, weight=l.free_flow_time)
        g.add_edge(mid, l.head, weight=0.0)
    if origin not in g or destination not in g or not nx.has_path(g, origin, destination):
        raise ValueError(f"OD pair ({origin!r}, {destination!r}) is not connected")
    out = []
    for nodes in itertools.islice(nx.shortest_simple_paths(g, origin, destination, weight="weight"), k):
        out.append(tuple(n[1] for n in nodes if isinstance(n, tuple)))
    return out


def _bpr(net: RoadNetwork):
    t0 = np.array([l.free_flow_time for l in net.links])
    cap = np.array([l.capacity for l in net.links])
    alpha = np.array([l.bpr_alpha for l in net.links])
    beta = np.array([l.bpr_beta for l in net.links])

    def cost(x):
        return t0 * (1 + alpha * (x / cap) ** beta)

    def dcost(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = t0 * alpha * beta * (x / cap) ** np.maximum(beta - 1, 0) / cap
        return np.where(beta > 0, d, 0.0)

    def beckmann(x):
        return float((t0 * (x + alpha * cap / (beta + 1) * (x / cap) ** (beta + 1))).sum())

    return cost, dcost, beckmann


def ue_assignment(net: RoadNetwork, od: OdDemand, k_paths: int = 5, max_iters: int = 2000,
                  rel_gap_tol: float = 1e-4) -> GroundTruth:
    """Path-based user equilibrium by gradient projection with backtracking.

    Each OD update moves flow from costlier paths to the current cheapest one
    using a Newton step, halved until the Beckmann objective does not rise.
    """
    cost, dcost, beckmann = _bpr(net)
    L = len(net)
    ods, paths, demand = [], [], []
    for o, d, q in od:
        ods.append((o, d))
        paths.append(k_shortest_paths(net, o, d, k_paths))
        demand.append(q)
    incidence = []
    for plist in paths:
        m = np.zeros((len(plist), L))
        for i, p in enumerate(plist):
            for l in p:
                m[i, net.index[l]] += 1
        incidence.append(m)
    flows = [np.eye(len(plist))[0] * q for plist, q in zip(paths, demand)]

    def link_flows():
        return sum((f @ m for f, m in zip(flows, incidence)), np.zeros(L))

    def gap(x):
        c = cost(x)
        total = sum(f @ (m @ c) for f, m in zip(flows, incidence))
        best = sum(q * (m @ c).min() for q, m in zip(demand, incidence))
        return (total - best) / best if best > 0 else 0.0

    x = link_flows()
    trace = [beckmann(x)]
    rel_gap = gap(x)
    it = 0
    while rel_gap > rel_gap_tol and it < max_iters:
        it += 1
        for w, (m, q) in enumerate(zip(incidence, demand)):
            if q == 0 or len(m) == 1:
                continue
            c, dc = cost(x), dcost(x)
            pc = m @ c
            s = int(np.argmin(pc))
            differs = (m != m[s]).astype(float)
            denom = differs @ dc
            shift = np.where(np.arange(len(m)) == s, 0.0,
                             np.minimum(flows[w], (pc - pc[s]) / np.maximum(denom, 1e-12)))
            old = flows[w]
            base = beckmann(x)
            step = 1.0
            for _ in range(60):
                trial = old - step * shift
                trial[s] = q - (trial.sum() - trial[s])
                x_trial = x + (trial - old) @ m
                if beckmann(x_trial) <= base:
                    flows[w], x = trial, x_trial
                    break
                step *= 0.5
        x = link_flows()
        trace.append(beckmann(x))
        rel_gap = gap(x)
    if rel_gap > rel_gap_tol:
        log.warning("UE stopped at max_iters with relative gap %.3g", rel_gap)
    path_set = [(ods[w], p, float(f)) for w in range(len(ods)) for p, f in zip(paths[w], flows[w])]
    totals = {l.id: 0.0 for l in net.links}
    for _, p, f in path_set:
        for l in p:
            totals[l] += f
    return GroundTruth(path_set, totals, od, trace, float(rel_gap), it)


def place_detectors(net: RoadNetwork, explicit=None, fraction: float | None = None, seed=None) -> list[str]:
    if explicit is not None:
        out = list(explicit)
        unknown = [l for l in out if l not in net.index]
        if unknown:
            raise ValueError(f"unknown detector links: {unknown}")
    else:
        if fraction is None or not 0 < fraction <= 1:
            raise ValueError("detector fraction must lie in (0, 1]")
        n = int(math.floor(fraction * len(net) + 0.5))
        chosen = np.random.default_rng(seed).choice(len(net), size=n, replace=False)
        out = [net.links[i].id for i in sorted(chosen)]
    if not out:
        raise ValueError("no detector links selected")
    return out


def sample_observations(gt: GroundTruth, detectors, spec: SamplingSpec):
    """Detector volumes (exact) and trajectories sampled per path.

    A path with flow ``f`` and rate ``q ~ U[lo, hi)`` contributes
    ``floor(f * q)`` copies of its link sequence, except the randomly chosen
    zeroed paths, which contribute none.
    """
    rng = np.random.default_rng(spec.seed)
    volumes = VolumeObservations({l: gt.link_flows[l] for l in detectors})
    used = [i for i, (_, _, f) in enumerate(gt.path_set) if f > 1e-9]
    n_zero = int(math.floor(spec.zero_path_fraction * len(used) + 0.5))
    zeroed = {used[i] for i in rng.choice(len(used), size=n_zero, replace=False)} if n_zero else set()
    rates = rng.uniform(spec.rate_lo, spec.rate_hi, size=len(used))
    trajectories = []
    for i, q in zip(used, rates):
        if i in zeroed:
            continue
        _, links, f = gt.path_set[i]
        for _ in range(int(math.floor(f * q))):
            trajectories.append(Trajectory(f"t{len(trajectories) + 1}", links))
    return volumes, trajectories, sorted(zeroed)


def seed_streams(seed: int) -> dict[str, int]:
    """Counter-based split of one command seed into named sub-seeds."""
    names = ("detectors", "sampling", "estimation")
    return {name: int(np.random.SeedSequence([seed, i]).generate_state(1)[0]) for i, name in enumerate(names)}


def save_truth_paths(gt: GroundTruth, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["od_origin", "od_destination", "path_links", "flow"])
    for (o, d), links, f in gt.path_set:
        w.writerow([o, d, ";".join(links), format_number(f)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_truth_paths(path):
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    return [((r["od_origin"], r["od_destination"]), tuple(r["path_links"].split(";")), float(r["flow"]))
            for r in rows]


def save_link_flows(flows: dict[str, float], path) -> None:
    lines = ["link_id,flow"] + [f"{k},{format_number(v)}" for k, v in flows.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_link_flows(path) -> dict[str, float]:
    rows = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    try:
        return {r["link_id"]: float(r["flow"]) for r in rows}
    except (KeyError, TypeError, ValueError):
        raise NetworkFormatError(f"{path}: expected link_id,flow rows") from None


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_scenario(out_dir, net: RoadNetwork, gt: GroundTruth, volumes: VolumeObservations,
                  trajectories, detectors, manifest: dict) -> dict:
    """Write every scenario file plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_network(net, out / SCENARIO_FILES["network"])
        save_od(gt.od, out / SCENARIO_FILES["od"])
        save_volumes(volumes, out / SCENARIO_FILES["volumes"])
        save_trajectories(trajectories, out / SCENARIO_FILES["trajectories"])
        (out / SCENARIO_FILES["detectors"]).write_text("".join(f"{d}\n" for d in detectors), encoding="utf-8")
        save_truth_paths(gt, out / SCENARIO_FILES["truth_paths"])
        save_link_flows(gt.link_flows, out / SCENARIO_FILES["truth_links"])
        manifest = dict(manifest, files=dict(SCENARIO_FILES), generator_version=__version__,
                        detectors=list(detectors))
        write_json(manifest, out / MANIFEST)
    except OSError as exc:
        raise OSError(f"writing scenario to {out}: {exc}") from exc
    return manifest


@dataclass
class Scenario:
    network: RoadNetwork
    od: OdDemand | None
    volumes: VolumeObservations
    trajectories: list[Trajectory]
    truth_links: dict[str, float] | None = None
    truth_paths: list | None = None
    manifest: dict = field(default_factory=dict)

    @property
    def detectors(self) -> list[str]:
        return list(self.volumes.entries)


def load_scenario(path) -> Scenario:
    root = Path(path)
    manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8")) if (root / MANIFEST).exists() else {}
    files = dict(SCENARIO_FILES, **manifest.get("files", {}))
    net = load_network(root / files["network"])
    od = load_od(root / files["od"]) if (root / files["od"]).exists() else None
    truth_links = load_link_flows(root / files["truth_links"]) if (root / files["truth_links"]).exists() else None
    truth_paths = load_truth_paths(root / files["truth_paths"]) if (root / files["truth_paths"]).exists() else None
    return Scenario(net, od, load_volumes(root / files["volumes"], net),
                    load_trajectories(root / files["trajectories"], net), truth_links, truth_paths, manifest)


def generate_scenario(net: RoadNetwork, od: OdDemand, *, detectors=None, detector_fraction=None,
                      rates=(0.25, 0.35), zero_path_fraction=0.05, seed: int = 0, k_paths: int = 5,
                      max_iters: int = 2000, rel_gap_tol: float = 1e-4, out_dir=None):
    """Full ground-truth plus observation pipeline; optionally written to ``out_dir``."""
    streams = seed_streams(seed)
    gt = ue_assignment(net, od, k_paths, max_iters, rel_gap_tol)
    dets = place_detectors(net, detectors, detector_fraction, streams["detectors"])
    spec = SamplingSpec(rates[0], rates[1], zero_path_fraction, streams["sampling"])
    volumes, trajectories, zeroed = sample_observations(gt, dets, spec)
    manifest = {
        "seed": seed,
        "seed_streams": streams,
        "sampling": asdict(spec),
        "zeroed_paths": zeroed,
        "ue": {"k_paths": k_paths, "max_iters": max_iters, "rel_gap_tol": rel_gap_tol,
               "iterations": gt.iterations, "rel_gap": gt.rel_gap},
        "detector_source": "explicit" if detectors is not None else f"fraction {detector_fraction}",
    }
    if out_dir is not None:
        manifest = emit_scenario(out_dir, net, gt, volumes, trajectories, dets, manifest)
    scenario = Scenario(net, od, volumes, trajectories, gt.link_flows, gt.path_set, manifest)
    return scenario, gt


def load_detectors_arg(path, net: RoadNetwork) -> list[str]:
    return load_detector_list(path, net)
