"""Shared fixtures and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import pytest

from linkflow.features import FeatureSet
from linkflow.mdp import from_successor_lists
from linkflow.network import Link, RoadNetwork, Trajectory

DATA = Path(__file__).resolve().parents[1] / "src" / "linkflow" / "data"


def make_link(link_id, tail, head, **kw):
    attrs = dict(capacity=100.0, free_flow_time=1.0, bpr_alpha=0.15, bpr_beta=4.0, length_m=300.0,
                 road_type="arterial road", max_speed_kmh=50.0)
    attrs.update(kw)
    return Link(str(link_id), str(tail), str(head), **attrs)


def make_network(rows) -> RoadNetwork:
    """``rows`` of ``(id, tail, head)`` or ``(id, tail, head, {attrs})``."""
    return RoadNetwork([make_link(*r[:3], **(r[3] if len(r) > 3 else {})) for r in rows])


DIAMOND_ROWS = [
    ("a", 1, 2, {"road_type": "freeway", "length_m": 80.0, "max_speed_kmh": 80.0}),
    ("b", 1, 3, {"road_type": "arterial road", "length_m": 450.0, "max_speed_kmh": 60.0}),
    ("c", 2, 3, {"road_type": "local road", "length_m": 120.0, "max_speed_kmh": 30.0}),
    ("d", 2, 4, {"road_type": "collector", "length_m": 700.0, "max_speed_kmh": 50.0}),
    ("e", 3, 4, {"road_type": "arterial road", "length_m": 900.0, "max_speed_kmh": 60.0}),
    ("f", 4, 5, {"road_type": "freeway", "length_m": 1500.0, "max_speed_kmh": 100.0}),
    ("g", 3, 5, {"road_type": "collector", "length_m": 650.0, "max_speed_kmh": 40.0}),
    ("h", 2, 5, {"road_type": "local road", "length_m": 300.0, "max_speed_kmh": 50.0}),
]


@pytest.fixture
def diamond() -> RoadNetwork:
    return make_network(DIAMOND_ROWS)


def random_mdp(rng: np.random.Generator, max_states: int = 6, max_horizon: int = 5, cyclic: bool = True):
    """Small MDP: real states first, then 1-2 absorbing states; cycles allowed."""
    S = int(rng.integers(3, max_states + 1))
    n_abs = int(rng.integers(1, min(2, S - 2) + 1))
    n_real = S - n_abs
    succ = []
    for s in range(n_real):
        pool = [t for t in range(S) if t != s and (cyclic or t > s)]
        k = int(rng.integers(1, min(3, len(pool)) + 1))
        succ.append(sorted(int(t) for t in rng.choice(pool, size=k, replace=False)))
    succ += [[] for _ in range(n_abs)]
    mu0 = np.zeros(S)
    starts = rng.choice(n_real, size=int(rng.integers(1, n_real + 1)), replace=False)
    mu0[starts] = rng.dirichlet(np.ones(len(starts)))
    H = int(rng.integers(1, max_horizon + 1))
    return from_successor_lists(succ, mu0, H, n_real=n_real)


def random_features(rng: np.random.Generator, mdp, k1: int = 3, k2: int = 2) -> FeatureSet:
    return FeatureSet(rng.normal(size=(mdp.n_states, k1)), rng.normal(size=(mdp.n_states, k2)), "random")


def enumerate_paths(mdp):
    """Every complete path per start state: absorbed, or cut after ``H`` moves."""
    out = []

    def extend(path):
        s = path[-1]
        if mdp.absorbing[s] or len(path) == mdp.horizon + 1:
            out.append(tuple(path))
            return
        for nxt in mdp.successors[s]:
            if nxt >= 0:
                extend(path + [int(nxt)])

    for s0 in np.flatnonzero(mdp.mu0 > 0):
        extend([int(s0)])
    return out


def maxent_path_distribution(mdp, rewards) -> dict[tuple, float]:
    """Start-conditioned MaxEnt path law, by brute force."""
    paths = enumerate_paths(mdp)
    dist = {}
    for s0, group in itertools.groupby(paths, key=lambda p: p[0]):
        group = list(group)
        r = np.array([rewards[list(p)].sum() for p in group])
        w = np.exp(r - r.max())
        for p, wi in zip(group, w / w.sum()):
            dist[p] = mdp.mu0[s0] * wi
    return dist


def policy_path_probability(mdp, policy, path) -> float:
    prob = mdp.mu0[path[0]]
    for t, (s, nxt) in enumerate(zip(path, path[1:])):
        k = int(np.flatnonzero(mdp.successors[s] == nxt)[0])
        prob *= policy.probs[t, s, k]
    return float(prob)


def policy_path_distribution(mdp, policy) -> dict[tuple, float]:
    return {p: policy_path_probability(mdp, policy, p) for p in enumerate_paths(mdp)}


def trajectories_from_paths(paths, mdp) -> list[Trajectory]:
    """Drop virtual states and wrap the real-link prefix as observed trajectories."""
    out = []
    for i, p in enumerate(paths):
        links = tuple(mdp.state_ids[s] for s in p if s < mdp.n_real)
        out.append(Trajectory(f"t{i + 1}", links))
    return out
