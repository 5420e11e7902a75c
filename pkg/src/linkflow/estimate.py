"""Visitation frequencies to absolute link flows, and WAPE scoring."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .network import VolumeObservations, format_number

log = logging.getLogger(__name__)


@dataclass
class ScalingFactor:
    value: float
    excluded: list[str] = field(default_factory=list)

    def __float__(self) -> float:
        return self.value


@dataclass
class FlowEstimate:
    flows: dict[str, float]
    beta_star: float
    source: str = ""
    excluded_detectors: list[str] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", "estimated_flow"])
            for link_id, v in self.flows.items():
                w.writerow([link_id, format_number(v)])


@dataclass
class EvaluationReport:
    wape: float
    per_link: list[tuple[str, float, float, bool]]
    beta_star: float | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", "true_flow", "estimated_flow", "is_detector"])
            for link_id, true, est, det in self.per_link:
                w.writerow([link_id, format_number(true), format_number(est), str(det).lower()])

    def summary(self) -> str:
        line = f"WAPE {self.wape:.4f}"
        if self.beta_star is not None:
            line += f" beta_star {self.beta_star:.6g}"
        return line


def scaling_factor(d_tilde, volumes: VolumeObservations, mdp) -> ScalingFactor:
    """Mean of ``v_s / D_s`` over detectors; detectors with ``D_s = 0`` are skipped and listed."""
    index = mdp.index
    ratios, excluded = [], []
    for link_id, v in volumes.entries.items():
        d = d_tilde[index[link_id]]
        if d > 0:
            ratios.append(v / d)
        else:
            excluded.append(link_id)
    if excluded:
        log.warning("detectors with zero visitation excluded from the scaling factor: %s", excluded)
    if not ratios:
        raise ValueError("every detector has zero visitation; the scaling factor is undefined")
    return ScalingFactor(float(np.mean(ratios)), excluded)


def estimate_flows(d_tilde, beta_star, mdp, source: str = "") -> FlowEstimate:
    """``beta_star * D`` on every real link; virtual states are dropped."""
    beta = float(beta_star)
    if not beta > 0:
        raise ValueError("scaling factor must be positive")
    d = np.asarray(d_tilde, dtype=float)
    flows = {mdp.state_ids[i]: beta * float(d[i]) for i in range(mdp.n_real)}
    excluded = list(getattr(beta_star, "excluded", []))
    return FlowEstimate(flows, beta, source, excluded)


def crlf_visitation(paths, mdp) -> np.ndarray:
    """Visit shares over all states from a set of generated paths."""
    if not len(paths):
        raise ValueError("need at least one path")
    counts = np.bincount(np.concatenate(paths), minlength=mdp.n_states).astype(float)
    return counts / counts.sum()


def wape(est: FlowEstimate, truth: dict[str, float], detectors=()) -> EvaluationReport:
    """Weighted absolute percentage error over the links without detectors."""
    detectors = set(detectors)
    missing = [l for l in est.flows if l not in truth]
    if missing:
        raise ValueError(f"ground truth is missing links: {missing[:5]}")
    per_link = [(l, float(truth[l]), float(v), l in detectors) for l, v in est.flows.items()]
    err = sum(abs(e - t) for _, t, e, det in per_link if not det)
    denom = sum(t for _, t, _, det in per_link if not det)
    if denom <= 0:
        raise ValueError("true flows on the unobserved links sum to zero; WAPE is undefined")
    return EvaluationReport(err / denom, per_link, est.beta_star)


def naive_baseline(volumes: VolumeObservations, link_ids) -> FlowEstimate:
    """Every link gets the mean detector volume."""
    mean = float(np.mean(list(volumes.entries.values())))
    return FlowEstimate({l: mean for l in link_ids}, 1.0, "naive")
