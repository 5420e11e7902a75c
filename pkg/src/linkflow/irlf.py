"""IRL-F: feature-expectation matching with a MaxEnt path model.

The trajectory-side expert expectation is the mean path feature over the
observed trajectories; the detector-side one is the detector volumes over an
estimated population size. Reward weights follow plain gradient ascent on
the path log-likelihood, whose gradient is the expert minus policy feature
expectation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .features import ExpertExpectation, FeatureSet
from .mdp import Policy, RoadNetworkMdp, maxent_policy, visitation_frequencies

log = logging.getLogger(__name__)

DIVERGENCE_PATIENCE = 25
MIN_LEARNING_RATE = 1e-12


class TrainingAborted(RuntimeError):
    pass


@dataclass
class IrlfConfig:
    learning_rate: float = 1.0
    max_iterations: int = 3000
    tolerance: float = 1e-3
    lr_decay: float = 0.999
    init_scale: float = 0.01

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")


@dataclass
class IrlfResult:
    theta: np.ndarray
    policy: Policy
    visitation: np.ndarray
    converged: bool
    grad_norms: list[float] = field(default_factory=list)
    feature_gaps: list[float] = field(default_factory=list)
    best_iteration: int = 0

    final_grad_norm: float = float("nan")
    final_feature_gap: float = float("nan")

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "grad_norm", "feature_gap"])
            for i, (g, f) in enumerate(zip(self.grad_norms, self.feature_gaps), start=1):
                w.writerow([i, repr(g), repr(f)])


def policy_expectation(mdp: RoadNetworkMdp, fs: FeatureSet, policy: Policy, visitation=None):
    d = visitation_frequencies(mdp, policy) if visitation is None else visitation
    return d @ fs.f1, d @ fs.f2


def gradient(expert: ExpertExpectation, pol_exp) -> np.ndarray:
    p1, p2 = pol_exp
    if np.shape(p1) != np.shape(expert.e1) or np.shape(p2) != np.shape(expert.e2):
        raise ValueError("expert and policy expectations have different shapes")
    return np.concatenate([expert.e1 - p1, expert.e2 - p2])


def train_irlf(mdp: RoadNetworkMdp, fs: FeatureSet, expert: ExpertExpectation,
               cfg: IrlfConfig | None = None, seed=None) -> IrlfResult:
    """Gradient ascent on the reward weights; returns the best iterate.

    "Best" is the smallest feature gap ``|f_expert - f_policy|_2`` seen.
    Stops once the gradient's max-norm drops below ``cfg.tolerance``.
    """
    cfg = cfg or IrlfConfig()
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-cfg.init_scale, cfg.init_scale, fs.k1 + fs.k2)
    lr = cfg.learning_rate
    zero = maxent_policy(mdp, np.zeros_like(theta), fs)
    d0 = visitation_frequencies(mdp, zero)
    # theta = 0 is a fallback candidate, not an iteration
    g0 = gradient(expert, policy_expectation(mdp, fs, zero, d0))
    best = (float(np.linalg.norm(g0)), -1, np.zeros_like(theta), zero, d0, float(np.abs(g0).max(initial=0.0)))
    grad_norms, gaps = [], []
    worse_streak = 0
    converged = False
    for it in range(cfg.max_iterations):
        policy = maxent_policy(mdp, theta, fs)
        d = visitation_frequencies(mdp, policy)
        grad = gradient(expert, policy_expectation(mdp, fs, policy, d))
        gap = float(np.linalg.norm(grad))
        grad_norms.append(float(np.abs(grad).max(initial=0.0)))
        gaps.append(gap)
        if gap < best[0]:
            best = (gap, it, theta.copy(), policy, d, grad_norms[-1])
        if grad_norms[-1] < cfg.tolerance:
            converged = True
            best = (gap, it, theta.copy(), policy, d, grad_norms[-1])
            break
        if it and gap > gaps[-2]:
            worse_streak += 1
            if worse_streak >= DIVERGENCE_PATIENCE:
                lr *= 0.5
                worse_streak = 0
                log.info("IRL-F: feature gap grew %d times in a row, learning rate -> %g",
                         DIVERGENCE_PATIENCE, lr)
                if lr < MIN_LEARNING_RATE:
                    raise TrainingAborted(
                        f"IRL-F diverged: learning rate fell below {MIN_LEARNING_RATE} "
                        f"at iteration {it + 1} (feature gap {gap:.4g})")
        else:
            worse_streak = 0
        theta = theta + lr * grad
        lr *= cfg.lr_decay
    gap, best_it, theta, policy, d, grad_norm = best
    log.debug("IRL-F finished after %d iterations, best gap %.4g at %d", len(gaps), gap, best_it + 1)
    return IrlfResult(theta=theta, policy=policy, visitation=d, converged=converged,
                      grad_norms=grad_norms, feature_gaps=gaps, best_iteration=best_it,
                      final_grad_norm=grad_norm, final_feature_gap=gap)
