"""scikit-learn style front ends for the IRL-F and CRL-F pipelines.

Both estimators take the road network at construction, ``fit`` on observed
trajectories plus detector volumes, and ``predict`` link flows::

    est = IrlfFlowEstimator(net, random_state=0).fit(trajectories, volumes)
    flows = est.predict()                 # one value per network link
    report = est.evaluate(truth_links)    # WAPE on links without detectors
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .clad import DEFAULT_GAMMA_C, estimate_m_hat
from .crlf import INFEASIBLE_MESSAGE, CrlfConfig, TargetSet, sample_mixed, train_crlf
from .estimate import crlf_visitation, estimate_flows, scaling_factor, wape
from .features import (
    UNIQUE_ID, ExpertExpectation, build_features, expert_expectation_trajectories,
    expert_expectation_volumes,
)
from .irlf import IrlfConfig, TrainingAborted, train_irlf
from .mdp import DEFAULT_GAMMA, build_mdp
from .network import NetworkFormatError, RoadNetwork, Trajectory, VolumeObservations, check_trajectory, check_volumes


class ProblemInfeasible(TrainingAborted):
    """CRL-F found a lambda certifying that the target set is unreachable."""


def check_observations(net: RoadNetwork, trajectories, volumes):
    """Validate and normalize fit inputs.

    ``trajectories`` may hold :class:`Trajectory` objects or plain link-id
    sequences; ``volumes`` may be a :class:`VolumeObservations` or a mapping.
    """
    if not isinstance(net, RoadNetwork):
        raise TypeError("network must be a RoadNetwork")
    trajs = []
    for i, t in enumerate(trajectories):
        if not isinstance(t, Trajectory):
            t = Trajectory(f"t{i + 1}", tuple(t))
        check_trajectory(t, net)
        trajs.append(t)
    if not trajs:
        raise NetworkFormatError("at least one observed trajectory is required")
    if not isinstance(volumes, VolumeObservations):
        volumes = VolumeObservations({str(k): float(v) for k, v in dict(volumes).items()})
    if not len(volumes):
        raise NetworkFormatError("at least one detector volume is required")
    check_volumes(volumes, net)
    return trajs, volumes


class _FlowEstimatorBase(BaseEstimator):
    source = ""

    def _prepare(self, trajectories, volumes):
        trajs, volumes = check_observations(self.network, trajectories, volumes)
        self.mdp_ = build_mdp(self.network, trajs, volumes, self.gamma, horizon=self.horizon)
        self.features_ = build_features(self.mdp_, self.network, self.feature_mode)
        paths = [self.mdp_.trajectory_to_path(t) for t in trajs]
        e1 = expert_expectation_trajectories(paths, self.features_)
        self.m_hat_, self.clad_ = estimate_m_hat(trajs, volumes, self.network, self.gamma_c)
        e2 = expert_expectation_volumes(volumes, self.features_, self.m_hat_)
        self.expert_ = ExpertExpectation(e1, e2, self.m_hat_)
        self.volumes_ = volumes
        return trajs, volumes

    def _finish(self, d_tilde):
        self.visitation_ = d_tilde
        beta = scaling_factor(d_tilde, self.volumes_, self.mdp_)
        self.beta_star_ = beta.value
        self.flow_estimate_ = estimate_flows(d_tilde, beta, self.mdp_, self.source)
        return self

    def predict(self, link_ids=None) -> np.ndarray:
        """Estimated flow per link, in network order unless ``link_ids`` is given."""
        check_is_fitted(self, "flow_estimate_")
        flows = self.flow_estimate_.flows
        ids = self.network.link_ids if link_ids is None else list(link_ids)
        return np.array([flows[i] for i in ids])

    def evaluate(self, truth, detectors=None):
        check_is_fitted(self, "flow_estimate_")
        dets = self.volumes_.detector_links if detectors is None else detectors
        return wape(self.flow_estimate_, truth, dets)

    def score(self, truth, detectors=None) -> float:
        """Negative WAPE, so that larger is better."""
        return -self.evaluate(truth, detectors).wape


class IrlfFlowEstimator(_FlowEstimatorBase):
    source = "irlf"

    def __init__(self, network=None, feature_mode=UNIQUE_ID, gamma=DEFAULT_GAMMA, horizon=None,
                 gamma_c=DEFAULT_GAMMA_C, learning_rate=1.0, max_iterations=3000, tolerance=1e-3,
                 lr_decay=0.999, random_state=None):
        self.network = network
        self.feature_mode = feature_mode
        self.gamma = gamma
        self.horizon = horizon
        self.gamma_c = gamma_c
        self.learning_rate = learning_rate
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.lr_decay = lr_decay
        self.random_state = random_state

    def fit(self, trajectories, volumes):
        self._prepare(trajectories, volumes)
        cfg = IrlfConfig(self.learning_rate, self.max_iterations, self.tolerance, self.lr_decay)
        self.result_ = train_irlf(self.mdp_, self.features_, self.expert_, cfg, self.random_state)
        self.theta_ = self.result_.theta
        self.policy_ = self.result_.policy
        return self._finish(self.result_.visitation)


class CrlfFlowEstimator(_FlowEstimatorBase):
    source = "crlf"

    def __init__(self, network=None, feature_mode=UNIQUE_ID, gamma=DEFAULT_GAMMA, horizon=None,
                 gamma_c=DEFAULT_GAMMA_C, iterations=1000, step_size=0.2, cache_size=20,
                 reward_tolerance=0.005, estimation_tolerance=0.05, eps1=None, eps2=None, n_meas=200,
                 n_report=5000, oracle="exact", measurement="exact", target=None, random_state=None):
        self.network = network
        self.feature_mode = feature_mode
        self.gamma = gamma
        self.horizon = horizon
        self.gamma_c = gamma_c
        self.iterations = iterations
        self.step_size = step_size
        self.cache_size = cache_size
        self.reward_tolerance = reward_tolerance
        self.estimation_tolerance = estimation_tolerance
        self.eps1 = eps1
        self.eps2 = eps2
        self.n_meas = n_meas
        self.n_report = n_report
        self.oracle = oracle
        self.measurement = measurement
        self.target = target
        self.random_state = random_state

    def fit(self, trajectories, volumes):
        self._prepare(trajectories, volumes)
        c1, c2 = self.expert_.e1, self.expert_.e2
        if self.target is not None:
            # hand-made target in place of the expert expectations
            c1, c2 = (np.asarray(self.target[k], dtype=float) for k in ("c1", "c2"))
            if c1.shape != self.expert_.e1.shape or c2.shape != self.expert_.e2.shape:
                raise ValueError(f"target must have {self.expert_.e1.size} + {self.expert_.e2.size} "
                                 f"components, got {c1.size} + {c2.size}")
        self.target_ = TargetSet.around(c1, c2, self.eps1, self.eps2)
        cfg = CrlfConfig(self.iterations, self.step_size, self.cache_size, self.reward_tolerance,
                         self.estimation_tolerance, self.n_meas, self.oracle, self.measurement)
        train_seed, report_seed = np.random.SeedSequence(self.random_state).spawn(2)
        train_seed = int(train_seed.generate_state(1)[0])
        self.result_ = train_crlf(self.mdp_, self.features_, self.target_, cfg, train_seed)
        if not self.result_.feasible:
            raise ProblemInfeasible(INFEASIBLE_MESSAGE)
        self.mixed_policy_ = self.result_.mixed
        report_seed = int(report_seed.generate_state(1)[0])
        paths = sample_mixed(self.mdp_, self.mixed_policy_, self.n_report, report_seed)
        return self._finish(crlf_visitation(paths, self.mdp_))
