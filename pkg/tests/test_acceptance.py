"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import statistics
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    DATA, DIAMOND_ROWS, make_network, maxent_path_distribution, policy_path_distribution, random_features,
    random_mdp, trajectories_from_paths,
)
from linkflow.cli import main
from linkflow.clad import solve_clad
from linkflow.crlf import INFEASIBLE_MESSAGE, CrlfConfig, TargetSet, exact_measurement, train_crlf
from linkflow.estimate import FlowEstimate, estimate_flows, naive_baseline, scaling_factor, wape
from linkflow.estimators import CrlfFlowEstimator, IrlfFlowEstimator
from linkflow.features import ExpertExpectation, FeatureSet
from linkflow.irlf import gradient, policy_expectation
from linkflow.mdp import (
    Policy, build_mdp, count_visits, from_successor_lists, maxent_policy, sample_paths, state_rewards,
)
from linkflow.network import OdDemand, VolumeObservations, load_detector_list, load_network, load_od
from linkflow.scenario import generate_scenario, ue_assignment
from test_clad import grid_oracle, random_problem
from test_irlf import five_state_mdp, log_likelihood

ND_SEEDS = (1, 2, 3)


def verdict(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


def test_criterion_1_maxent_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        mdp = random_mdp(rng, max_states=6, max_horizon=5)
        fs = random_features(rng, mdp)
        theta = rng.normal(scale=2.0, size=fs.k1 + fs.k2)
        want = maxent_path_distribution(mdp, state_rewards(fs, theta))
        got = policy_path_distribution(mdp, maxent_policy(mdp, theta, fs))
        worst = max(worst, 0.5 * sum(abs(got[p] - want[p]) for p in want))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-9 and elapsed < 5, f"max TV {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    mdp = five_state_mdp()
    fs = random_features(rng, mdp)
    truth = Policy.random(mdp, rng)
    e1, e2 = policy_expectation(mdp, fs, truth)
    expert = ExpertExpectation(e1, e2)
    law = policy_path_distribution(mdp, truth)
    h, worst = 1e-5, 0.0
    for _ in range(5):
        theta = rng.normal(size=fs.k1 + fs.k2)
        analytic = gradient(expert, policy_expectation(mdp, fs, maxent_policy(mdp, theta, fs)))
        numeric = np.array([(log_likelihood(mdp, fs, theta + h * e, law)
                             - log_likelihood(mdp, fs, theta - h * e, law)) / (2 * h) for e in np.eye(len(theta))])
        worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-4 and elapsed < 5, f"max relative error {worst:.2e}, {elapsed:.2f}s")


@pytest.mark.filterwarnings("ignore:no OD pair crosses")
def test_criterion_3_clad_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_x = worst_f = 0.0
    for _ in range(10):
        p, r = random_problem(rng, max_od=2)
        sol = solve_clad(p, r)
        x_grid, f_grid = grid_oracle(p, r, max(1.0 / r, np.abs(sol.x).max() + 0.05))
        worst_x = max(worst_x, float(np.abs(sol.x - x_grid).max()))
        worst_f = max(worst_f, sol.objective_value - f_grid)
    elapsed = time.perf_counter() - start
    ok = worst_x <= 1e-3 + 1e-12 and worst_f <= 1e-6 and elapsed < 10
    verdict(3, ok, f"max coordinate error {worst_x:.2e}, objective excess {worst_f:.2e}, {elapsed:.2f}s")


def test_criterion_4_closed_loop_irlf():
    start = time.perf_counter()
    net = make_network(DIAMOND_ROWS)
    rng = np.random.default_rng(4)
    # generating world: start on a or b, dead ends absorb
    mu0 = np.zeros(len(net))
    mu0[[net.index["a"], net.index["b"]]] = [0.6, 0.4]
    gen = build_mdp(net, [], horizon=4, mu0=mu0)
    paths = sample_paths(gen, Policy.random(gen, rng), 2000, seed=4)
    trajs = trajectories_from_paths(paths, gen)
    tally = count_visits(paths, gen)
    truth = {l: float(tally[gen.index[l]]) for l in net.link_ids}
    est = IrlfFlowEstimator(net, random_state=4).fit(trajs, VolumeObservations(truth))
    gap = est.result_.final_grad_norm
    # every link carries a detector, so the error is measured over all links
    err = wape(est.flow_estimate_, truth, detectors=()).wape
    elapsed = time.perf_counter() - start
    ok = abs(est.m_hat_ - len(paths)) <= 1e-9 * len(paths) and gap <= 1e-2 and err <= 0.05 and elapsed < 30
    verdict(4, ok, f"M_hat {est.m_hat_:.6g} of {len(paths)}, gap {gap:.2e}, WAPE {err:.4f}, {elapsed:.2f}s")


def test_criterion_5_crlf_approachability():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    mdp = five_state_mdp()
    f2 = np.zeros((5, 2))
    f2[[1, 3], [0, 1]] = 1
    fs = FeatureSet(np.eye(5), f2)
    z = exact_measurement(mdp, fs, Policy.random(mdp, rng))
    target = TargetSet.around(z[:5], z[5:], rel=0.1)
    res = train_crlf(mdp, fs, target, CrlfConfig(iterations=300, oracle="exact"), seed=5)
    c1 = np.zeros(5)
    c1[0] = mdp.horizon + 2
    bad = train_crlf(mdp, fs, TargetSet(c1, np.zeros(2), 0.1, 0.1), CrlfConfig(iterations=300), seed=5)
    elapsed = time.perf_counter() - start
    ok = (res.feasible and res.final_distance <= 0.05 and not bad.feasible
          and bad.message == INFEASIBLE_MESSAGE and elapsed < 120)
    verdict(5, ok, f"distance {res.final_distance:.2e} after {len(res.trace)} rounds, "
                   f"unreachable target: {bad.message or 'feasible'}, {elapsed:.2f}s")


@pytest.fixture(scope="module")
def nguyen_dupuis_runs():
    start = time.perf_counter()
    net = load_network(DATA / "nguyen_dupuis.csv")
    od = load_od(DATA / "nguyen_dupuis_od.csv")
    dets = load_detector_list(DATA / "nguyen_dupuis_detectors.txt", net)
    runs = {}
    for seed in ND_SEEDS:
        sc, gt = generate_scenario(net, od, detectors=dets, rates=(0.25, 0.35), zero_path_fraction=0.05, seed=seed)
        row = {"naive": wape(naive_baseline(sc.volumes, net.link_ids), gt.link_flows, dets).wape}
        for name, cls in (("irlf", IrlfFlowEstimator), ("crlf", CrlfFlowEstimator)):
            for mode in ("unique-id", "road-characteristics"):
                fitted = cls(net, feature_mode=mode, random_state=seed).fit(sc.trajectories, sc.volumes)
                row[name, mode] = fitted.evaluate(gt.link_flows).wape
        runs[seed] = row
    return runs, time.perf_counter() - start


def test_criterion_6_nguyen_dupuis_end_to_end(nguyen_dupuis_runs):
    runs, elapsed = nguyen_dupuis_runs
    lines, ok = [], elapsed < 600
    for method in ("irlf", "crlf"):
        w = [runs[s][method, "unique-id"] for s in ND_SEEDS]
        beats = all(runs[s][method, "unique-id"] < runs[s]["naive"] for s in ND_SEEDS)
        ok &= beats and statistics.median(w) <= 0.30
        lines.append(f"{method} " + "/".join(f"{x:.3f}" for x in w))
    lines.append("naive " + "/".join(f"{runs[s]['naive']:.3f}" for s in ND_SEEDS))
    verdict(6, ok, "; ".join(lines) + f"; {elapsed:.0f}s")


def test_criterion_7_feature_mode_ordering(nguyen_dupuis_runs):
    runs, _ = nguyen_dupuis_runs
    pairs = [(runs[s]["irlf", "unique-id"], runs[s]["irlf", "road-characteristics"]) for s in ND_SEEDS]
    ok = all(u < r for u, r in pairs)
    verdict(7, ok, "unique-id vs road-characteristics " + ", ".join(
        f"seed {s}: {u:.3f} vs {r:.3f}" for s, (u, r) in zip(ND_SEEDS, pairs)))


def test_criterion_8_ue_properties():
    net = load_network(DATA / "nguyen_dupuis.csv")
    od = load_od(DATA / "nguyen_dupuis_od.csv")
    gt = ue_assignment(net, od)
    monotone = all(b <= a + 1e-9 * abs(a) for a, b in zip(gt.beckmann_trace, gt.beckmann_trace[1:]))
    ends = {n for o, d, _ in od for n in (o, d)}
    imbalance = max(abs(sum(gt.link_flows[l.id] for l in net.links if l.head == n)
                        - sum(gt.link_flows[l.id] for l in net.links if l.tail == n)) for n in net.nodes - ends)
    par = make_network([("a", 1, 2), ("b", 1, 2)])
    split = ue_assignment(par, OdDemand([("1", "2", 100.0)]), rel_gap_tol=1e-12, max_iters=200).link_flows
    dev = max(abs(split["a"] - 50), abs(split["b"] - 50))
    ok = monotone and gt.rel_gap <= 1e-4 and imbalance <= 1e-6 and dev <= 1e-6
    verdict(8, ok, f"monotone {monotone}, gap {gt.rel_gap:.2e}, imbalance {imbalance:.1e}, split error {dev:.1e}")


def test_criterion_9_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"irlf": {"max_iterations": 200}, "crlf": {"iterations": 100, "n_report": 1000}}))
    base = ["--network", str(DATA / "nguyen_dupuis.csv"), "--od", str(DATA / "nguyen_dupuis_od.csv"),
            "--detector-fraction", "0.3", "--seed", "2"]
    mismatched = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        assert main(["scenario", *base, "--out", str(d / "sc")]) == 0
        for method in ("irlf", "crlf"):
            assert main(["estimate", "--method", method, "--scenario", str(d / "sc"), "--config", str(cfg),
                         "--seed", "2", "--out", str(d / method)]) == 0
            assert main(["evaluate", "--estimate", str(d / method), "--out", str(d / f"ev_{method}")]) == 0
        assert main(["evaluate", "--compare", str(d / "irlf"), str(d / "crlf"), "--out", str(d / "cmp")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        if (tmp_path / "a" / rel).read_bytes() != (tmp_path / "b" / rel).read_bytes():
            mismatched.append(str(rel))
    # run.json records the scenario directory, which differs between the two replays by construction
    mismatched = [m for m in mismatched if not m.endswith("run.json")]
    for method in ("irlf", "crlf"):
        a = json.loads((tmp_path / "a" / method / "run.json").read_text())
        b = json.loads((tmp_path / "b" / method / "run.json").read_text())
        a.pop("scenario"), b.pop("scenario")
        if a != b:
            mismatched.append(f"{method}/run.json")
    verdict(9, not mismatched, f"{len(files)} files compared, mismatches: {mismatched or 'none'}")


positive = st.floats(0.01, 1e4, allow_nan=False)
_identity_failures = []


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(st.tuples(positive, positive, positive), min_size=2, max_size=8), positive)
def _identity_case(rows, scale):
    S = len(rows)
    mdp = from_successor_lists([[s + 1] for s in range(S)] + [[]], np.eye(S + 1)[0], horizon=S, n_real=S)
    ids = mdp.state_ids[:S]
    d = np.array([r[0] for r in rows] + [0.0])
    vols = VolumeObservations({ids[0]: rows[0][1], ids[-1]: rows[-1][1]})
    base = estimate_flows(d, scaling_factor(d, vols, mdp), mdp)
    scaled = estimate_flows(d * scale, scaling_factor(d * scale, vols, mdp), mdp)
    rescale_err = max(abs(scaled.flows[l] - base.flows[l]) / base.flows[l] for l in ids)
    truth = {l: r[2] for l, r in zip(ids, rows)}
    w1 = wape(base, truth, detectors=[ids[0]]).wape
    w2 = wape(FlowEstimate({l: scale * v for l, v in base.flows.items()}, 1.0),
              {l: scale * v for l, v in truth.items()}, detectors=[ids[0]]).wape
    wape_err = abs(w2 - w1) / max(w1, 1.0)
    if rescale_err > 1e-12 or wape_err > 1e-12:
        _identity_failures.append((rescale_err, wape_err))
    assert rescale_err <= 1e-12 and wape_err <= 1e-12


def test_criterion_10_estimator_identities():
    _identity_failures.clear()
    try:
        _identity_case()
        ok = True
    except AssertionError:
        ok = False
    verdict(10, ok and not _identity_failures, f"100 cases, failures {len(_identity_failures)}")
