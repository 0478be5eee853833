import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bingham_control import OptimizerConfig, solve_flow
from bingham_control.estimators import ControlEstimator, FlowTransformer
from bingham_control.problems import channel_problem, twin_experiment


@pytest.fixture(scope="module")
def small_twin():
    # a weak yield stress keeps the target flow well away from blocking
    return twin_experiment(cells=6, size=2, g=0.1, lambda1=1.0, lambda2=1.0)


def test_params_and_clone():
    problem = channel_problem(ny=16)
    est = FlowTransformer(problem, basis_size=3)
    assert est.get_params()["basis_size"] == 3
    copy = clone(est)
    assert copy.basis_size == 3 and copy.problem.grid == problem.grid
    est.set_params(basis_size=5)
    assert est.basis_size == 5
    assert ControlEstimator().get_params()["radius"] == 10.0


def test_transformer_requires_fit():
    with pytest.raises(NotFittedError):
        FlowTransformer(channel_problem(ny=16)).transform(np.zeros((1, 4)))


def test_transformer_rejects_non_problem():
    with pytest.raises(TypeError, match="FlowProblem"):
        FlowTransformer("channel").fit()


def test_transformer_matches_direct_solve(small_twin):
    t = small_twin
    est = FlowTransformer(t.problem, basis_size=2).fit()
    X = np.array([[0.0, 0.0], t.c_star])
    Y = est.transform(X)
    assert Y.shape == (2, t.problem.grid.dofs.size)
    assert np.all(est.converged_)
    assert np.all(Y[0] == 0.0)
    direct = solve_flow(t.problem.with_control(est.basis_.field(t.c_star))).velocity.dof_values
    assert np.array_equal(Y[1], direct)
    assert est.embedding_constant_ > 0
    with pytest.raises(ValueError, match="features"):
        est.transform(np.zeros((1, 3)))


def test_control_estimator_recovers_twin(small_twin):
    t = small_twin
    target = t.target_report.velocity.dof_values[None, :]
    # zero lies on the plateau where the yield stress blocks small controls; start on the ball surface
    est = ControlEstimator(t.problem, basis_size=2, lambda1=100.0, lambda2=0.0, radius=20.0,
                           optimizer=OptimizerConfig(starts=("random",)))
    with pytest.raises(NotFittedError):
        est.predict()
    est.fit(target)
    assert est.pair_.admissible and est.pair_.status == "gradient"
    assert -1e-8 <= est.score(target) <= 0.0
    assert np.max(np.abs(est.predict() - target)) <= 1e-3 * np.max(np.abs(target))
    np.testing.assert_allclose(est.coef_, t.c_star, rtol=1e-3)


def test_control_estimator_validates_target(small_twin):
    est = ControlEstimator(small_twin.problem, basis_size=2)
    with pytest.raises(ValueError, match="one target row"):
        est.fit(np.zeros((2, small_twin.problem.grid.dofs.size)))
