"""Controlled least-absolute-deviation scaling of observed trajectories.

Per OD pair ``p`` the observed trajectories are scaled by ``1/r + x_p`` where
``r`` is the system capture rate (median of the per-detector ratios of
observed trajectories to counted volume). The adjustments ``x`` minimize

    sum_s |sum_p t_sp (1/r + x_p) - v_s| + gamma_c * sum_p x_p**2

and the scaled trajectory total is the population size estimate.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .network import RoadNetwork, Trajectory, VolumeObservations

log = logging.getLogger(__name__)

DEFAULT_GAMMA_C = 100.0


@dataclass
class CaptureRates:
    local: dict[str, float]
    system_rate: float


@dataclass
class CladProblem:
    od_pairs: list[tuple[str, str]]
    t_p: np.ndarray          # (P,) observed trajectories per OD
    t_sp: np.ndarray         # (S_v, P) observed trajectories of OD p crossing detector s
    v: np.ndarray            # (S_v,) detector volumes
    detectors: list[str] = field(default_factory=list)
    gamma_c: float = DEFAULT_GAMMA_C

    def __post_init__(self):
        self.t_p = np.asarray(self.t_p, dtype=float)
        self.t_sp = np.asarray(self.t_sp, dtype=float).reshape(len(self.v), len(self.t_p))
        self.v = np.asarray(self.v, dtype=float)
        if self.gamma_c < 0:
            raise ValueError("gamma_c must be non-negative")
        if (self.t_sp > self.t_p[None, :] + 1e-12).any():
            raise ValueError("t_sp cannot exceed t_p")


@dataclass
class CladSolution:
    x: np.ndarray
    alpha: np.ndarray
    t_p: np.ndarray
    rate: float
    objective_value: float
    od_pairs: list = field(default_factory=list)
    clamped: list = field(default_factory=list)
    degenerate: bool = False
    duality_gap: float = 0.0

    @property
    def m_hat(self) -> float:
        return estimate_population_size(self)


def od_pair(traj: Trajectory, net: RoadNetwork) -> tuple[str, str]:
    return net.link(traj.links[0]).tail, net.link(traj.links[-1]).head


def _median(values) -> float:
    values = sorted(values)
    n = len(values)
    mid = n // 2
    return values[mid] if n % 2 else 0.5 * (values[mid - 1] + values[mid])


def capture_rates(trajectories, volumes: VolumeObservations) -> CaptureRates:
    """Local rates ``t_s / v_s`` and their median; zero-volume detectors are skipped."""
    crossing = {s: 0 for s in volumes.entries}
    for traj in trajectories:
        for s in set(traj.links) & crossing.keys():
            crossing[s] += 1
    local = {s: crossing[s] / v for s, v in volumes.entries.items() if v > 0}
    if not local:
        raise ValueError("every detector reports zero volume; the system capture rate is undefined")
    return CaptureRates(local, _median(local.values()))


def build_clad_problem(trajectories, volumes: VolumeObservations, net: RoadNetwork,
                       gamma_c: float = DEFAULT_GAMMA_C) -> CladProblem:
    """Tally per-OD trajectory counts and detector crossings.

    ODs without observed trajectories never appear, so they are excluded.
    """
    detectors = list(volumes.entries)
    row = {s: i for i, s in enumerate(detectors)}
    od_index: dict[tuple[str, str], int] = {}
    t_p: list[int] = []
    crossings: list[tuple[int, int]] = []
    for traj in trajectories:
        p = od_index.setdefault(od_pair(traj, net), len(od_index))
        if p == len(t_p):
            t_p.append(0)
        t_p[p] += 1
        crossings.extend((row[s], p) for s in set(traj.links) if s in row)
    t_sp = np.zeros((len(detectors), len(t_p)))
    for s, p in crossings:
        t_sp[s, p] += 1
    return CladProblem(list(od_index), np.array(t_p, dtype=float), t_sp,
                       np.array([volumes.entries[s] for s in detectors], dtype=float),
                       detectors, gamma_c)


def objective(problem: CladProblem, rate: float, x) -> float:
    x = np.asarray(x, dtype=float)
    e = problem.t_sp @ (1.0 / rate + x)
    return float(np.abs(e - problem.v).sum() + problem.gamma_c * (x ** 2).sum())


def _solve_dual(A, c, gamma, tol=1e-14, max_sweeps=200_000):
    """Coordinate ascent on the box-constrained dual.

    max_{|y|<=1} -y.c - |A^T y|^2 / (4 gamma); the primal minimizer is
    x = -A^T y / (2 gamma). Each coordinate step is an exact maximization.
    """
    m = A.shape[0]
    y = np.zeros(m)
    w = np.zeros(A.shape[1])
    sq = (A ** 2).sum(axis=1)
    for sweep in range(max_sweeps):
        biggest = 0.0
        for i in range(m):
            if sq[i] == 0.0:
                new = -np.sign(c[i])
            else:
                grad = -c[i] - A[i] @ w / (2 * gamma)
                new = min(1.0, max(-1.0, y[i] + grad * 2 * gamma / sq[i]))
            delta = new - y[i]
            if delta:
                w += delta * A[i]
                y[i] = new
                biggest = max(biggest, abs(delta))
        if biggest < tol:
            break
    else:
        log.warning("cLAD dual ascent hit the sweep cap")
    dual = float(-y @ c - w @ w / (4 * gamma))
    return -w / (2 * gamma), dual


def _solve_lp(A, c):
    m, P = A.shape
    cost = np.concatenate([np.zeros(P), np.ones(m)])
    eye = np.eye(m)
    A_ub = np.block([[A, -eye], [-A, -eye]])
    b_ub = np.concatenate([c, -c])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * P + [(0, None)] * m,
                  method="highs")
    if not res.success:
        raise RuntimeError(f"cLAD linear program failed: {res.message}")
    return res.x[:P]


def solve_clad(problem: CladProblem, rate: float) -> CladSolution:
    if not rate > 0:
        raise ValueError("system capture rate must be positive")
    A, P = problem.t_sp, len(problem.t_p)
    c = problem.v - A @ np.full(P, 1.0 / rate)
    gap = 0.0
    degenerate = not A.any()
    if degenerate:
        warnings.warn("no OD pair crosses any detector; cLAD adjustments left at zero", RuntimeWarning)
        x = np.zeros(P)
    elif problem.gamma_c > 0:
        x, dual = _solve_dual(A, c, problem.gamma_c)
        gap = objective(problem, rate, x) - dual
    else:
        x = _solve_lp(A, c)
    alpha = 1.0 / rate + x
    clamped = [problem.od_pairs[p] if problem.od_pairs else p for p in np.flatnonzero(alpha < 0)]
    alpha = np.maximum(alpha, 0.0)
    return CladSolution(x=x, alpha=alpha, t_p=problem.t_p.copy(), rate=rate,
                        objective_value=objective(problem, rate, x), od_pairs=list(problem.od_pairs),
                        clamped=clamped, degenerate=degenerate, duality_gap=gap)


def estimate_population_size(sol: CladSolution) -> float:
    """Sum over ODs of the (non-negative) scaling factor times observed trajectories."""
    alpha = np.maximum(1.0 / sol.rate + np.asarray(sol.x), 0.0)
    return float(alpha @ sol.t_p)


def estimate_m_hat(trajectories, volumes: VolumeObservations, net: RoadNetwork,
                   gamma_c: float = DEFAULT_GAMMA_C) -> tuple[float, CladSolution]:
    rates = capture_rates(trajectories, volumes)
    sol = solve_clad(build_clad_problem(trajectories, volumes, net, gamma_c), rates.system_rate)
    return sol.m_hat, sol
