"""State feature vectors and feature expectations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ROAD_TYPES, RoadNetwork, VolumeObservations

UNIQUE_ID = "unique-id"
ROAD_CHARACTERISTICS = "road-characteristics"
FEATURE_MODES = (UNIQUE_ID, ROAD_CHARACTERISTICS)

# [lo, hi) metres
LENGTH_EDGES = (0.0, 100.0, 500.0, 1000.0, np.inf)
# (lo, hi] km/h, so that 40/50/60 land in their own categories
SPEED_EDGES = (0.0, 40.0, 50.0, 60.0, np.inf)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Per-state features: trajectory side ``f1`` (S x k1), detector side ``f2`` (S x k2)."""

    f1: np.ndarray
    f2: np.ndarray
    mode1: str = UNIQUE_ID

    @property
    def k1(self) -> int:
        return self.f1.shape[1]

    @property
    def k2(self) -> int:
        return self.f2.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.f1, self.f2])

    def split(self, vector):
        vector = np.asarray(vector)
        return vector[: self.k1], vector[self.k1:]


@dataclass(frozen=True)
class ExpertExpectation:
    e1: np.ndarray
    e2: np.ndarray
    m_hat: float | None = None

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.e1, self.e2])


def _bin(value: float, edges, *, right_closed: bool) -> int:
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        inside = (lo < value <= hi) if right_closed else (lo <= value < hi)
        if inside:
            return i
    raise ValueError(f"value {value} falls outside every feature bin")


def road_characteristics(link) -> np.ndarray:
    """12-dim one-hot concatenation: road type, length bin, speed bin."""
    if link.road_type not in ROAD_TYPES:
        raise ValueError(f"unknown road type {link.road_type!r}")
    out = np.zeros(12)
    out[ROAD_TYPES.index(link.road_type)] = 1
    out[4 + _bin(link.length_m, LENGTH_EDGES, right_closed=False)] = 1
    out[8 + _bin(link.max_speed_kmh, SPEED_EDGES, right_closed=True)] = 1
    return out


def build_features(mdp, net: RoadNetwork | None = None, mode1: str = UNIQUE_ID) -> FeatureSet:
    S = mdp.n_states
    if mode1 == UNIQUE_ID:
        f1 = np.eye(S)
    elif mode1 == ROAD_CHARACTERISTICS:
        if net is None:
            raise ValueError("road-characteristics features need the network attributes")
        f1 = np.zeros((S, 12))
        for i in range(mdp.n_real):
            f1[i] = road_characteristics(net.link(mdp.state_ids[i]))
    else:
        raise ValueError(f"unknown feature mode {mode1!r}; expected one of {FEATURE_MODES}")
    f2 = np.zeros((S, len(mdp.detector_states)))
    f2[mdp.detector_states, np.arange(len(mdp.detector_states))] = 1
    return FeatureSet(f1, f2, mode1)


def path_features(path, fs: FeatureSet):
    path = np.asarray(path, dtype=int)
    return fs.f1[path].sum(axis=0), fs.f2[path].sum(axis=0)


def expert_expectation_trajectories(paths, fs: FeatureSet) -> np.ndarray:
    """Mean path feature vector ``f1`` over observed state paths."""
    if not len(paths):
        raise ValueError("need at least one observed path")
    return sum(path_features(p, fs)[0] for p in paths) / len(paths)


def expert_expectation_volumes(volumes: VolumeObservations, fs: FeatureSet, m_hat: float) -> np.ndarray:
    """Detector volumes in detector column order, divided by the population size."""
    if not m_hat > 0:
        raise ValueError("estimated population size must be positive")
    v = np.fromiter(volumes.entries.values(), dtype=float, count=len(volumes))
    if v.shape[0] != fs.k2:
        raise ValueError("volume count does not match the detector features")
    return v / m_hat
