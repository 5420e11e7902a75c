import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import DIAMOND_ROWS, make_network
from linkflow.estimators import CrlfFlowEstimator, IrlfFlowEstimator, ProblemInfeasible
from linkflow.network import NetworkFormatError, Trajectory, VolumeObservations

ROUTES = {("a", "d", "f"): 40, ("a", "c", "e", "f"): 10, ("b", "g"): 30, ("a", "h"): 20}


@pytest.fixture
def observations():
    trajs = [route for route, n in ROUTES.items() for _ in range(n)]
    flows = {l: 0.0 for l in "abcdefgh"}
    for route, n in ROUTES.items():
        for l in route:
            flows[l] += n
    return trajs, flows


@pytest.mark.parametrize("cls", [IrlfFlowEstimator, CrlfFlowEstimator])
def test_sklearn_protocol(cls):
    net = make_network(DIAMOND_ROWS)
    est = cls(net, random_state=3)
    params = est.get_params()
    assert params["random_state"] == 3 and params["network"] is net
    twin = clone(est)
    assert twin.get_params()["random_state"] == 3
    est.set_params(feature_mode="road-characteristics")
    assert est.feature_mode == "road-characteristics"
    with pytest.raises(NotFittedError):
        est.predict()


def test_irlf_fit_predict(observations):
    trajs, flows = observations
    net = make_network(DIAMOND_ROWS)
    vols = {"a": flows["a"], "f": flows["f"]}
    est = IrlfFlowEstimator(net, random_state=0).fit(trajs, vols)
    pred = est.predict()
    assert pred.shape == (8,) and (pred >= 0).all()
    assert est.m_hat_ > 0 and est.beta_star_ > 0
    # every trajectory observed: unique-id IRL-F reproduces the flows closely
    assert est.evaluate(flows).wape < 0.05
    assert est.score(flows) == pytest.approx(-est.evaluate(flows).wape)
    np.testing.assert_array_equal(est.predict(["f", "a"]), pred[[5, 0]])


def test_crlf_fit_is_reproducible(observations):
    trajs, flows = observations
    net = make_network(DIAMOND_ROWS)
    vols = VolumeObservations({"a": flows["a"], "g": flows["g"]})
    a = CrlfFlowEstimator(net, iterations=200, n_report=2000, random_state=5).fit(trajs, vols)
    b = CrlfFlowEstimator(net, iterations=200, n_report=2000, random_state=5).fit(trajs, vols)
    np.testing.assert_array_equal(a.predict(), b.predict())
    assert a.result_.feasible and a.evaluate(flows).wape < 0.5


def test_crlf_infeasible_target_raises(observations):
    trajs, flows = observations
    net = make_network(DIAMOND_ROWS)
    est = CrlfFlowEstimator(net, iterations=300, random_state=0, eps1=0.1, eps2=0.1)
    n_states = 11
    target = {"c1": [50.0] * n_states, "c2": [0.0]}
    with pytest.raises(ProblemInfeasible, match="not feasible"):
        est.set_params(target=target).fit(trajs, {"a": flows["a"]})
    with pytest.raises(ValueError, match="components"):
        est.set_params(target={"c1": [1.0], "c2": [0.0]}).fit(trajs, {"a": flows["a"]})


def test_input_validation(observations):
    trajs, flows = observations
    net = make_network(DIAMOND_ROWS)
    est = IrlfFlowEstimator(net)
    with pytest.raises(NetworkFormatError):
        est.fit([], {"a": 1.0})
    with pytest.raises(NetworkFormatError):
        est.fit(trajs, {})
    with pytest.raises(NetworkFormatError):
        est.fit([("a", "g")], {"a": 1.0})
    with pytest.raises(NetworkFormatError):
        est.fit(trajs, {"zz": 1.0})
    with pytest.raises(TypeError):
        IrlfFlowEstimator("not a network").fit(trajs, {"a": 1.0})
    # plain sequences and Trajectory objects are equivalent
    a = IrlfFlowEstimator(net, max_iterations=20, random_state=1).fit(trajs, {"a": 50.0})
    b = IrlfFlowEstimator(net, max_iterations=20, random_state=1).fit(
        [Trajectory(f"t{i + 1}", t) for i, t in enumerate(trajs)], VolumeObservations({"a": 50.0}))
    np.testing.assert_array_equal(a.predict(), b.predict())
