"""Finite-horizon road-network MDP: soft-optimal policies, visitation, rollouts.

States are the real links in network order followed by virtual absorbing
links. Transitions are deterministic, so an action is identified with its
successor state. Successor lists are stored left-packed in a padded
``(S, K)`` integer array with ``-1`` for missing slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .network import RoadNetwork, Trajectory, VolumeObservations, check_trajectory

DEFAULT_GAMMA = 0.99
VIRTUAL_PREFIX = "virtual:"


class MdpConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RoadNetworkMdp:
    state_ids: tuple[str, ...]
    n_real: int
    successors: np.ndarray
    absorbing: np.ndarray
    mu0: np.ndarray
    horizon: int
    gamma: float = DEFAULT_GAMMA
    detector_states: np.ndarray = None

    def __post_init__(self):
        S = len(self.state_ids)
        if self.successors.shape[0] != S or self.mu0.shape != (S,):
            raise MdpConfigurationError("state arrays have inconsistent shapes")
        if self.horizon < 1:
            raise MdpConfigurationError("horizon must be a positive integer")
        if not 0.0 <= self.gamma <= 1.0:
            raise MdpConfigurationError("gamma must lie in [0, 1]")
        if abs(self.mu0.sum() - 1.0) > 1e-12 or (self.mu0 < 0).any():
            raise MdpConfigurationError("mu0 must be a probability vector")
        has_action = (self.successors >= 0).any(axis=1)
        if (has_action & self.absorbing).any():
            raise MdpConfigurationError("absorbing states cannot have actions")
        if (~has_action & ~self.absorbing).any():
            raise MdpConfigurationError("every non-absorbing state needs an action")
        if (self.mu0[self.n_real:] != 0).any():
            raise MdpConfigurationError("mu0 must vanish on virtual states")
        if self.detector_states is None:
            object.__setattr__(self, "detector_states", np.zeros(0, dtype=int))

    @property
    def n_states(self) -> int:
        return len(self.state_ids)

    @property
    def action_mask(self) -> np.ndarray:
        return self.successors >= 0

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.state_ids)}

    def virtual_of(self, state: int) -> int | None:
        """Virtual successor of a real state, if it has one."""
        for nxt in self.successors[state]:
            if nxt >= self.n_real:
                return int(nxt)
        return None

    def trajectory_to_path(self, traj: Trajectory) -> np.ndarray:
        """State sequence of an observed trajectory, closed by its virtual link."""
        index = self.index
        states = [index[l] for l in traj.links]
        v = self.virtual_of(states[-1])
        if v is not None:
            states.append(v)
        return np.asarray(states, dtype=int)


def from_successor_lists(successors, mu0, horizon, *, n_real=None, gamma=DEFAULT_GAMMA,
                         state_ids=None, detector_states=()) -> RoadNetworkMdp:
    """Build an MDP directly from per-state successor lists.

    States with an empty successor list are absorbing.
    """
    S = len(successors)
    K = max(1, max((len(s) for s in successors), default=1))
    succ = np.full((S, K), -1, dtype=int)
    for i, row in enumerate(successors):
        succ[i, : len(row)] = row
    absorbing = np.array([len(row) == 0 for row in successors])
    return RoadNetworkMdp(
        state_ids=tuple(state_ids or (f"s{i}" for i in range(S))),
        n_real=S if n_real is None else n_real,
        successors=succ,
        absorbing=absorbing,
        mu0=np.asarray(mu0, dtype=float),
        horizon=int(horizon),
        gamma=gamma,
        detector_states=np.asarray(detector_states, dtype=int),
    )


def build_mdp(net: RoadNetwork, observed: list[Trajectory], volumes: VolumeObservations | None = None,
              gamma: float = DEFAULT_GAMMA, *, horizon: int | None = None, mu0=None) -> RoadNetworkMdp:
    """Road-network MDP from observed trajectories and detector volumes.

    One virtual absorbing link is appended per distinct terminal link of the
    observed trajectories (and per dead-end link, to keep every real state
    actionable). ``mu0`` defaults to the empirical first-link distribution and
    the horizon to the longest observed trajectory plus one absorbing step.
    """
    for traj in observed:
        check_trajectory(traj, net)
    if not observed and (horizon is None or mu0 is None):
        raise MdpConfigurationError("no observed trajectories: horizon and mu0 must be given explicitly")
    n = len(net)
    terminal = {net.index[t.links[-1]] for t in observed}
    dead_ends = {net.index[l] for l, down in net.adjacency.items() if not down}
    with_virtual = sorted(terminal | dead_ends)

    state_ids = list(net.link_ids) + [VIRTUAL_PREFIX + net.links[i].id for i in with_virtual]
    successors = [[net.index[d] for d in net.adjacency[l.id]] for l in net.links]
    for k, i in enumerate(with_virtual):
        successors[i].append(n + k)
    successors += [[] for _ in with_virtual]

    if mu0 is None:
        start = np.bincount([net.index[t.links[0]] for t in observed], minlength=len(state_ids))
        mu0 = start / start.sum()
    else:
        mu0 = np.asarray(mu0, dtype=float)
        if mu0.shape == (n,):
            mu0 = np.concatenate([mu0, np.zeros(len(with_virtual))])
    if horizon is None:
        horizon = max(len(t) for t in observed) + 1

    detectors = [net.index[l] for l in volumes.entries] if volumes is not None else []
    return from_successor_lists(successors, mu0, horizon, n_real=n, gamma=gamma,
                                state_ids=state_ids, detector_states=detectors)


@dataclass(frozen=True, eq=False)
class Policy:
    """Horizon-indexed action probabilities, shape ``(H, S, K)``.

    ``probs[t, s, k]`` is the probability of moving from ``s`` to
    ``successors[s, k]`` at step ``t``. Rows of absorbing states are zero.
    """

    probs: np.ndarray

    @classmethod
    def stationary(cls, mdp: RoadNetworkMdp, table: np.ndarray) -> "Policy":
        table = np.where(mdp.action_mask, table, 0.0)
        return cls(np.broadcast_to(table, (mdp.horizon,) + table.shape).copy())

    @classmethod
    def uniform(cls, mdp: RoadNetworkMdp) -> "Policy":
        mask = mdp.action_mask.astype(float)
        counts = mask.sum(axis=1, keepdims=True)
        return cls.stationary(mdp, np.divide(mask, counts, out=np.zeros_like(mask), where=counts > 0))

    @classmethod
    def random(cls, mdp: RoadNetworkMdp, rng: np.random.Generator) -> "Policy":
        """Stationary policy with Dirichlet(1) action rows."""
        w = rng.exponential(size=mdp.successors.shape) * mdp.action_mask
        total = w.sum(axis=1, keepdims=True)
        return cls.stationary(mdp, np.divide(w, total, out=np.zeros_like(w), where=total > 0))

    def check(self, mdp: RoadNetworkMdp, atol: float = 1e-12) -> None:
        if self.probs.shape != (mdp.horizon,) + mdp.successors.shape:
            raise ValueError("policy shape does not match the MDP")
        if (self.probs[:, ~mdp.action_mask] != 0).any():
            raise ValueError("policy puts mass on non-existent actions")
        rows = self.probs[:, ~mdp.absorbing].sum(axis=-1)
        if np.abs(rows - 1.0).max(initial=0.0) > atol:
            raise ValueError("policy rows must sum to one")


def state_rewards(features, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.isfinite(theta).all():
        raise ValueError("reward weights must be finite")
    matrix = features.matrix if hasattr(features, "matrix") else np.asarray(features)
    if matrix.shape[1] != theta.shape[0]:
        raise ValueError(f"theta has dimension {theta.shape[0]}, features have {matrix.shape[1]}")
    return matrix @ theta


def soft_values(mdp: RoadNetworkMdp, rewards: np.ndarray) -> np.ndarray:
    """Log partition function of paths from each state at each step, ``(H+1, S)``."""
    H, mask = mdp.horizon, mdp.action_mask
    succ = np.where(mask, mdp.successors, 0)
    V = np.empty((H + 1, mdp.n_states))
    V[H] = rewards
    for t in range(H - 1, -1, -1):
        nxt = np.where(mask, V[t + 1][succ], -np.inf)
        lse = logsumexp(nxt, axis=1)
        V[t] = rewards + np.where(mdp.absorbing, 0.0, lse)
    return V


def maxent_policy(mdp: RoadNetworkMdp, theta, features) -> Policy:
    """Soft-optimal policy for state rewards ``features @ theta``.

    Conditional on its start state, every complete path (absorbed, or cut at
    the horizon) gets probability proportional to ``exp(total reward)``.
    Computed in the log domain.
    """
    rewards = state_rewards(features, theta)
    V = soft_values(mdp, rewards)
    mask = mdp.action_mask
    succ = np.where(mask, mdp.successors, 0)
    probs = np.zeros((mdp.horizon,) + succ.shape)
    for t in range(mdp.horizon):
        cont = V[t] - rewards
        logits = V[t + 1][succ] - cont[:, None]
        p = np.where(mask, np.exp(np.where(mask, logits, -np.inf)), 0.0)
        p[mdp.absorbing] = 0.0
        # renormalize away the last ulp of rounding
        total = p.sum(axis=1, keepdims=True)
        probs[t] = np.divide(p, total, out=np.zeros_like(p), where=total > 0)
    return Policy(probs)


def visitation_frequencies(mdp: RoadNetworkMdp, policy: Policy) -> np.ndarray:
    """Expected number of visits to each state per episode (undiscounted)."""
    S, mask = mdp.n_states, mdp.action_mask
    succ = mdp.successors[mask]
    if policy.probs.shape != (mdp.horizon,) + mdp.successors.shape:
        raise ValueError("policy shape does not match the MDP")
    d = mdp.mu0.copy()
    total = d.copy()
    live = ~mdp.absorbing
    for t in range(mdp.horizon):
        flow = (d * live)[:, None] * policy.probs[t]
        d = np.bincount(succ, weights=flow[mask], minlength=S)
        total += d
    return total


def _rollout(mdp: RoadNetworkMdp, prob_stack: np.ndarray, component: np.ndarray,
             rng: np.random.Generator) -> list[np.ndarray]:
    n = len(component)
    if n == 0:
        return []
    H = mdp.horizon
    states = np.full((n, H + 1), -1, dtype=int)
    cur = rng.choice(mdp.n_states, size=n, p=mdp.mu0)
    states[:, 0] = cur
    length = np.ones(n, dtype=int)
    alive = ~mdp.absorbing[cur]
    for t in range(H):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        s = cur[idx]
        cdf = np.cumsum(prob_stack[component[idx], t, s], axis=1)
        cdf /= cdf[:, -1:]
        u = rng.random(idx.size)
        k = (u[:, None] >= cdf).sum(axis=1)
        nxt = mdp.successors[s, k]
        cur[idx] = nxt
        states[idx, t + 1] = nxt
        length[idx] += 1
        alive[idx] = ~mdp.absorbing[nxt]
    return [states[i, : length[i]].copy() for i in range(n)]


def sample_paths(mdp: RoadNetworkMdp, policy: Policy, n: int, seed=None) -> list[np.ndarray]:
    """Roll out ``n`` episodes; each ends on absorption or after ``H`` steps."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    return _rollout(mdp, policy.probs[None], np.zeros(n, dtype=int), rng)


def count_visits(paths, mdp: RoadNetworkMdp) -> np.ndarray:
    if not len(paths):
        return np.zeros(mdp.n_states)
    return np.bincount(np.concatenate(paths), minlength=mdp.n_states).astype(float)
