"""CRL-F: approachability-based constrained RL for link flow estimation.

A lambda-player runs projected online gradient descent on the unit ball; a
mu-player answers each lambda with a single policy maximizing the episode
return under per-state reward ``-lambda . f_s``, taken from a policy cache
when a cached policy is good enough. The uniform mixture of the answers
approaches the target set, a product of two Euclidean balls around the
expert feature expectations.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSet
from .mdp import Policy, RoadNetworkMdp, _rollout, count_visits, sample_paths, visitation_frequencies

log = logging.getLogger(__name__)

INFEASIBLE_MESSAGE = "problem is not feasible"
# default ball radii as fractions of |c1| and |c2|; c2 inherits the error of M_hat
DEFAULT_TARGET_REL = (0.02, 0.1)


@dataclass(frozen=True)
class TargetSet:
    c1: np.ndarray
    c2: np.ndarray
    eps1: float
    eps2: float

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("target radii must be positive")
        if not (np.isfinite(self.c1).all() and np.isfinite(self.c2).all()):
            raise ValueError("target centres must be finite")

    @classmethod
    def around(cls, c1, c2, eps1=None, eps2=None, rel=DEFAULT_TARGET_REL) -> "TargetSet":
        """Balls of radius ``rel_i * |c_i|`` unless radii are given.

        ``rel`` is a single fraction or a pair ``(rel1, rel2)``.
        """
        rel1, rel2 = (rel, rel) if np.isscalar(rel) else rel
        c1, c2 = np.asarray(c1, dtype=float), np.asarray(c2, dtype=float)
        tiny = 1e-9
        eps1 = eps1 if eps1 is not None else max(rel1 * np.linalg.norm(c1), tiny)
        eps2 = eps2 if eps2 is not None else max(rel2 * np.linalg.norm(c2), tiny)
        return cls(c1, c2, float(eps1), float(eps2))

    @property
    def k1(self) -> int:
        return len(self.c1)

    @property
    def centre(self) -> np.ndarray:
        return np.concatenate([self.c1, self.c2])


@dataclass
class CrlfConfig:
    iterations: int = 1000
    step_size: float = 0.2          # eta_t = step_size / sqrt(t)
    cache_size: int = 20
    reward_tolerance: float = 0.005  # eps0
    estimation_tolerance: float = 0.05
    n_meas: int = 200
    oracle: str = "exact"
    measurement: str = "exact"      # exact forward pass or "sampled" (n_meas rollouts)
    q_episodes: int = 3000

    def __post_init__(self):
        for name in ("iterations", "cache_size", "n_meas", "q_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("step_size", "reward_tolerance", "estimation_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.oracle not in ("exact", "q-learning"):
            raise ValueError(f"unknown oracle {self.oracle!r}")
        if self.measurement not in ("exact", "sampled"):
            raise ValueError(f"unknown measurement estimator {self.measurement!r}")


@dataclass
class CacheEntry:
    policy: Policy
    z: np.ndarray
    exact: bool


@dataclass
class MixedPolicy:
    """Uniform mixture over per-iteration policies (repeats allowed)."""

    components: list[Policy]
    measurements: list[np.ndarray] = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.components), 1.0 / len(self.components))

    @property
    def measurement(self) -> np.ndarray:
        return np.mean(self.measurements, axis=0)


@dataclass
class CrlfResult:
    mixed: MixedPolicy | None
    trace: list[dict]
    feasible: bool = True
    message: str = ""
    cache: list[CacheEntry] = field(default_factory=list)

    @property
    def final_distance(self) -> float:
        return self.trace[-1]["dist_to_target"] if self.trace else float("nan")

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "dist_to_target", "lambda_norm", "used_cache"])
            for row in self.trace:
                w.writerow([row["iteration"], repr(row["dist_to_target"]), repr(row["lambda_norm"]),
                            str(row["used_cache"]).lower()])


def measure_policy(mdp: RoadNetworkMdp, fs: FeatureSet, policy: Policy, n_meas: int, seed=None) -> np.ndarray:
    """Sampled long-term measurement ``[D f1; D f2]`` with ``D`` = mean visit counts."""
    if n_meas < 1:
        raise ValueError("n_meas must be at least 1")
    d = count_visits(sample_paths(mdp, policy, n_meas, seed), mdp) / n_meas
    return np.concatenate([d @ fs.f1, d @ fs.f2])


def exact_measurement(mdp: RoadNetworkMdp, fs: FeatureSet, policy: Policy) -> np.ndarray:
    d = visitation_frequencies(mdp, policy)
    return np.concatenate([d @ fs.f1, d @ fs.f2])


def dist_to_target(z, target: TargetSet) -> float:
    z1, z2 = np.asarray(z[: target.k1]), np.asarray(z[target.k1:])
    a = max(0.0, np.linalg.norm(z1 - target.c1) - target.eps1)
    b = max(0.0, np.linalg.norm(z2 - target.c2) - target.eps2)
    return float(np.hypot(a, b))


def support(lam, target: TargetSet) -> float:
    """Support function of the target set: max over its points of ``lam . x``."""
    l1, l2 = lam[: target.k1], lam[target.k1:]
    return float(l1 @ target.c1 + target.eps1 * np.linalg.norm(l1)
                 + l2 @ target.c2 + target.eps2 * np.linalg.norm(l2))


def support_gradient(lam, target: TargetSet) -> np.ndarray:
    out = []
    for part, c, eps in ((lam[: target.k1], target.c1, target.eps1),
                         (lam[target.k1:], target.c2, target.eps2)):
        norm = np.linalg.norm(part)
        out.append(c + (eps * part / norm if norm > 0 else 0.0))
    return np.concatenate(out)


def project_unit_ball(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x)
    return x / norm if norm > 1.0 else x


def _exact_best_response(mdp: RoadNetworkMdp, rewards: np.ndarray) -> Policy:
    H, mask = mdp.horizon, mdp.action_mask
    succ = np.where(mask, mdp.successors, 0)
    V = rewards.copy()
    probs = np.zeros((H,) + succ.shape)
    rows = np.arange(mdp.n_states)
    for t in range(H - 1, -1, -1):
        q = np.where(mask, V[succ], -np.inf)
        best = np.argmax(q, axis=1)  # first maximum: lowest action index wins ties
        live = ~mdp.absorbing
        probs[t, rows[live], best[live]] = 1.0
        V = rewards + np.where(mdp.absorbing, 0.0, q[rows, best])
    return Policy(probs)


def _q_learning_response(mdp: RoadNetworkMdp, rewards: np.ndarray, episodes: int,
                         rng: np.random.Generator, warm: Policy | None = None,
                         explore: float = 0.2) -> Policy:
    """Tabular finite-horizon Q-learning; returns the greedy policy."""
    H, mask = mdp.horizon, mdp.action_mask
    Q = np.zeros((H,) + mask.shape)
    if warm is not None:
        Q += 1e-6 * warm.probs  # break ties toward the warm start
    visits = np.zeros_like(Q)
    for _ in range(episodes):
        s = rng.choice(mdp.n_states, p=mdp.mu0)
        for t in range(H):
            if mdp.absorbing[s]:
                break
            valid = np.flatnonzero(mask[s])
            if rng.random() < explore:
                k = int(rng.choice(valid))
            else:
                k = int(valid[np.argmax(Q[t, s, valid])])
            nxt = mdp.successors[s, k]
            target = rewards[nxt]
            if t + 1 < H and not mdp.absorbing[nxt]:
                target += Q[t + 1, nxt][mask[nxt]].max()
            visits[t, s, k] += 1
            Q[t, s, k] += (target - Q[t, s, k]) / visits[t, s, k]
            s = nxt
    probs = np.zeros_like(Q)
    for t in range(H):
        q = np.where(mask, Q[t], -np.inf)
        best = np.argmax(q, axis=1)
        live = np.flatnonzero(~mdp.absorbing)
        probs[t, live, best[live]] = 1.0
    return Policy(probs)


def best_response(mdp: RoadNetworkMdp, fs: FeatureSet, lam, eps0: float = 0.05, oracle: str = "exact",
                  seed=None, *, warm: Policy | None = None, episodes: int = 3000, threshold=None):
    """Policy maximizing the expected return with per-state reward ``-lam . f_s``.

    Returns ``(policy, exact measurement, ok)``; ``ok`` is False only when the
    Q-learning oracle misses ``-lam . z >= threshold`` (default ``-eps0``).
    """
    lam = np.asarray(lam, dtype=float)
    if np.linalg.norm(lam) > 1 + 1e-9:
        raise ValueError("lambda must lie in the unit ball")
    if not lam.any():
        policy = Policy.uniform(mdp)
        return policy, exact_measurement(mdp, fs, policy), True
    rewards = -(fs.matrix @ lam)
    if oracle == "exact":
        policy = _exact_best_response(mdp, rewards)
    elif oracle == "q-learning":
        policy = _q_learning_response(mdp, rewards, episodes, np.random.default_rng(seed), warm)
    else:
        raise ValueError(f"unknown oracle {oracle!r}")
    z = exact_measurement(mdp, fs, policy)
    limit = -eps0 if threshold is None else threshold
    ok = oracle == "exact" or -lam @ z >= limit
    if not ok:
        log.warning("Q-learning oracle stayed below the reward tolerance (%.4g < %.4g)", -lam @ z, limit)
    return policy, z, ok


def train_crlf(mdp: RoadNetworkMdp, fs: FeatureSet, target: TargetSet, cfg: CrlfConfig | None = None,
               seed=None) -> CrlfResult:
    cfg = cfg or CrlfConfig()
    streams = np.random.SeedSequence(seed).spawn(3)
    cache_rng = np.random.default_rng(streams[0])
    meas_seeds = np.random.default_rng(streams[1])
    oracle_rng = np.random.default_rng(streams[2])

    def measure(policy):
        if cfg.measurement == "exact":
            return exact_measurement(mdp, fs, policy), True
        return measure_policy(mdp, fs, policy, cfg.n_meas, int(meas_seeds.integers(2**63))), False

    cache = []
    for _ in range(cfg.cache_size):
        policy = Policy.random(mdp, cache_rng)
        cache.append(CacheEntry(policy, *measure(policy)))

    lam = np.zeros(fs.k1 + fs.k2)
    components, measurements, trace = [], [], []
    z_sum = np.zeros_like(lam)
    for t in range(1, cfg.iterations + 1):
        h = support(lam, target)
        values = np.array([-lam @ e.z for e in cache])
        k = int(np.argmax(values))
        used_cache = values[k] + h >= -cfg.reward_tolerance
        if used_cache:
            entry = cache[k]
        else:
            policy, z_exact, _ = best_response(
                mdp, fs, lam, cfg.reward_tolerance, cfg.oracle, int(oracle_rng.integers(2**63)),
                warm=cache[k].policy, episodes=cfg.q_episodes, threshold=-h - cfg.reward_tolerance)
            entry = CacheEntry(policy, z_exact, True) if cfg.measurement == "exact" else CacheEntry(policy, *measure(policy))
            cache.append(entry)
        components.append(entry.policy)
        measurements.append(entry.z)
        z_sum += entry.z
        loss = -(lam @ entry.z - h)
        trace.append({
            "iteration": t,
            "dist_to_target": dist_to_target(z_sum / t, target),
            "lambda_norm": float(np.linalg.norm(lam)),
            "used_cache": bool(used_cache),
        })
        if loss < -(cfg.reward_tolerance + cfg.estimation_tolerance):
            log.info("CRL-F: %s at iteration %d (loss %.4g)", INFEASIBLE_MESSAGE, t, loss)
            return CrlfResult(None, trace, feasible=False, message=INFEASIBLE_MESSAGE, cache=cache)
        eta = cfg.step_size / np.sqrt(t)
        lam = project_unit_ball(lam + eta * (entry.z - support_gradient(lam, target)))
    return CrlfResult(MixedPolicy(components, measurements), trace, cache=cache)


def sample_mixed(mdp: RoadNetworkMdp, mixed: MixedPolicy, n: int, seed=None, *, return_components=False):
    """Per episode: draw a component uniformly, then roll it out.

    Rollouts consume the same stream as :func:`mdp.sample_paths` with the same
    seed; component draws use a separate stream.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    unique: dict[int, int] = {}
    for p in mixed.components:
        unique.setdefault(id(p), len(unique))
    stack = np.empty((len(unique),) + mixed.components[0].probs.shape)
    for p in mixed.components:
        stack[unique[id(p)]] = p.probs
    lookup = np.array([unique[id(p)] for p in mixed.components])
    if len(mixed.components) == 1:
        drawn = np.zeros(n, dtype=int)
    else:
        comp_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        drawn = comp_rng.integers(len(mixed.components), size=n)
    paths = _rollout(mdp, stack, lookup[drawn], np.random.default_rng(seed))
    return (paths, drawn) if return_components else paths
