import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bingham_control import (AdmissibleSet, ControlBasis, CostFunctional, FlowProblem, FluidModel, Grid,
                             OptimizerConfig, VelocityField, evaluate_J, norm_L2, norm_V, optimize,
                             project_admissible, random_field)
from bingham_control.control import ReducedObjective, enumerate_candidates, nelder_mead_fallback, reduced_gradient
from bingham_control.exceptions import NoDescentFound
from bingham_control.problems import twin_experiment
from bingham_control.viflow import energy_identity_residual

SQUARE = Grid((1.0, 1.0), (8, 8), ("wall", "wall"))

vectors = st.lists(st.floats(-50, 50), min_size=4, max_size=4).map(np.array)


@pytest.fixture(scope="module")
def twin():
    return twin_experiment()


@pytest.fixture(scope="module")
def twin_pair(twin):
    return optimize(twin.problem, twin.cost, twin.admissible, twin.basis, OptimizerConfig(starts=("zero",)))


def tracking_problem(c_target, size=4):
    """lambda1 = 0: the cost ignores the flow and only tracks the control."""
    basis = ControlBasis.smooth(SQUARE, size)
    problem = FlowProblem(FluidModel.bingham(SQUARE, 1.0, 1.0), VelocityField.zeros(SQUARE))
    cost = CostFunctional(0.0, 1.0, VelocityField.zeros(SQUARE), basis.field(c_target))
    return problem, cost, basis


# -- admissible sets ----------------------------------------------------------------------------------


def test_projection_examples():
    ball = AdmissibleSet.ball(1.0)
    u = np.array([0.3, -0.2, 0.1])
    assert ball.project(u) is u
    p = ball.project(np.array([2.0, 0.0, 0.0]))
    assert np.array_equal(p, [1.0, 0.0, 0.0]) and np.linalg.norm(p) == 1.0
    box = AdmissibleSet.box(-1.0, 1.0)
    assert np.array_equal(box.project(np.array([3.0, 0.5, -4.0])), [1.0, 0.5, -1.0])
    lst = AdmissibleSet.finite([np.zeros(2), np.ones(2)])
    assert np.array_equal(lst.project(np.array([0.9, 0.7])), np.ones(2))
    assert project_admissible(ball, np.array([0.0, 3.0, 4.0])) == pytest.approx([0.0, 0.6, 0.8])


@pytest.mark.parametrize("make, match", [
    (lambda: AdmissibleSet.finite([]), "nonempty"),
    (lambda: AdmissibleSet.ball(-1.0), "radius"),
    (lambda: AdmissibleSet.ball(np.inf), "radius"),
    (lambda: AdmissibleSet.box(1.0, -1.0), "empty"),
    (lambda: AdmissibleSet("sphere"), "unknown"),
])
def test_admissible_set_validation(make, match):
    with pytest.raises(ValueError, match=match):
        make()


def test_zero_radius_ball_is_valid():
    s = AdmissibleSet.ball(0.0)
    assert np.array_equal(s.project(np.array([1.0, 2.0])), [0.0, 0.0])


def test_list_rejects_mixed_types():
    s = AdmissibleSet.finite([VelocityField.zeros(SQUARE)])
    with pytest.raises(TypeError):
        s.project(np.zeros(3))


def test_field_ball_projection(rng):
    u = random_field(SQUARE, rng, False) * 10.0
    p = AdmissibleSet.ball(0.5).project(u)
    assert isinstance(p, VelocityField)
    assert norm_L2(p) <= 0.5 and norm_L2(p) == pytest.approx(0.5, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(u=vectors, r=st.floats(0, 30))
def test_ball_projection_properties(u, r):
    s = AdmissibleSet.ball(r, center=np.array([1.0, -2.0, 0.0, 3.0]))
    p = s.project(u)
    assert s.contains(p)
    assert np.array_equal(s.project(p), p)


@settings(max_examples=60, deadline=None)
@given(u=vectors, lo=st.floats(-20, 0), width=st.floats(0, 20))
def test_box_projection_properties(u, lo, width):
    s = AdmissibleSet.box(lo, lo + width)
    p = s.project(u)
    assert s.contains(p)
    assert np.array_equal(s.project(p), p)


@settings(max_examples=60, deadline=None)
@given(a=vectors, b=vectors, k=st.sampled_from([0, 1]))
def test_projection_nonexpansive(a, b, k):
    s = [AdmissibleSet.ball(5.0), AdmissibleSet.box(np.array([-1.0, -2, -3, -4]), np.array([1.0, 0, 3, 4]))][k]
    assert np.linalg.norm(s.project(a) - s.project(b)) <= np.linalg.norm(a - b) + 1e-12


# -- control basis and cost ------------------------------------------------------------------------------


@pytest.mark.parametrize("size", [1, 4, 8, 16])
def test_basis_orthonormal(size):
    basis = ControlBasis.smooth(SQUARE, size)
    assert np.max(np.abs(basis.gram() - np.eye(size))) <= 1e-12
    c = np.arange(size, dtype=float) - 1.5
    assert np.allclose(basis.coefficients(basis.field(c)), c, atol=1e-12)
    assert norm_L2(basis.field(c)) == pytest.approx(np.linalg.norm(c), rel=1e-12)


def test_basis_validation(rng):
    v = random_field(SQUARE, rng, False)
    with pytest.raises(ValueError, match="linearly dependent"):
        ControlBasis([v, 2.0 * v])
    with pytest.raises(ValueError, match="1..64"):
        ControlBasis([])
    with pytest.raises(ValueError, match="coefficients"):
        ControlBasis.smooth(SQUARE, 2).field(np.zeros(3))


def test_cost_examples(rng):
    vt, ut = random_field(SQUARE, rng), random_field(SQUARE, rng, False)
    cost = CostFunctional(3.0, 2.0, vt, ut)
    assert evaluate_J(cost, vt, ut) == 0.0
    d = random_field(SQUARE, rng, False)
    c0 = CostFunctional(0.0, 1.0, vt, ut)
    assert evaluate_J(c0, d, ut + 2.0 * d) == pytest.approx(4.0 * evaluate_J(c0, d, ut + d), rel=1e-13)
    w = random_field(SQUARE, rng)
    w = w / norm_V(w)
    assert evaluate_J(CostFunctional(1.0, 0.0, vt), vt + w, ut) == pytest.approx(1.0, rel=1e-13)
    with pytest.raises(ValueError, match="nonnegative"):
        CostFunctional(-1.0, 1.0, vt)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), l1=st.floats(0, 10), l2=st.floats(0, 10))
def test_cost_nonnegative(seed, l1, l2):
    rng = np.random.default_rng(seed)
    cost = CostFunctional(l1, l2, random_field(SQUARE, rng), random_field(SQUARE, rng, False))
    assert evaluate_J(cost, random_field(SQUARE, rng), random_field(SQUARE, rng, False)) >= 0.0


# -- gradient --------------------------------------------------------------------------------------------------


def test_gradient_pure_control_tracking():
    problem, cost, basis = tracking_problem(np.zeros(4))
    c = np.array([0.3, -1.2, 0.7, 2.0])
    g = reduced_gradient(problem, cost, basis, c, 1e-3)
    assert np.max(np.abs(g - 2 * c)) <= 1e-9


@pytest.mark.parametrize("step", [1e-3, 1e-4])
def test_gradient_directional_consistency(twin, step):
    obj = ReducedObjective(twin.problem, twin.cost, twin.basis)
    c = 0.5 * twin.c_star
    J0, v0 = obj.evaluate(c)
    g = reduced_gradient(twin.problem, twin.cost, twin.basis, c, step, initial=v0, objective=obj)
    d = np.random.default_rng(5).standard_normal(c.size)
    d /= np.linalg.norm(d)
    fd = (obj.value(c + step * d, v0) - obj.value(c - step * d, v0)) / (2 * step)
    assert abs(fd - g @ d) <= 0.01 * abs(g @ d)


def test_gradient_step_must_be_positive():
    problem, cost, basis = tracking_problem(np.zeros(4))
    with pytest.raises(ValueError, match="positive"):
        reduced_gradient(problem, cost, basis, np.zeros(4), 0.0)


# -- optimizer ----------------------------------------------------------------------------------------------------


def test_twin_experiment(twin, twin_pair):
    pair = twin_pair
    J_start = pair.history[0]
    assert pair.J <= 1e-6 * J_start
    assert pair.admissible and pair.in_set and pair.converged
    assert np.linalg.norm(pair.coefficients - twin.c_star) <= 1e-3 * np.linalg.norm(twin.c_star)


def test_twin_history_nonincreasing(twin_pair):
    assert np.all(np.diff(twin_pair.history) <= 0.0)


def test_twin_final_pair_certified(twin, twin_pair):
    problem = twin.problem.with_control(twin_pair.control)
    reg, exact = energy_identity_residual(twin_pair.report, problem)
    assert reg <= 1e-8
    assert twin_pair.energy_residual == (reg, exact)
    assert twin_pair.vi_residual >= -twin_pair.vi_tolerance
    assert twin.admissible.contains(twin_pair.coefficients)


def test_pure_tracking_outside_ball():
    c_target = np.array([3.0, -4.0, 0.0, 12.0])
    problem, cost, basis = tracking_problem(c_target)
    aset = AdmissibleSet.ball(6.5)
    pair = optimize(problem, cost, aset, basis, OptimizerConfig(starts=("zero",)))
    assert pair.iterations <= 2
    np.testing.assert_allclose(pair.coefficients, aset.project(c_target), atol=1e-10)
    assert pair.n_solves == 1  # only the certifying solve


def test_pure_tracking_inside_ball():
    c_target = np.array([1.0, -0.5, 0.25, 2.0])
    problem, cost, basis = tracking_problem(c_target)
    pair = optimize(problem, cost, AdmissibleSet.ball(10.0), basis, OptimizerConfig(starts=("zero",)))
    assert pair.iterations <= 2
    np.testing.assert_allclose(pair.coefficients, c_target, atol=1e-10)
    assert pair.J <= 1e-20


def test_box_constrained_tracking():
    c_target = np.array([3.0, -4.0, 0.5, 12.0])
    problem, cost, basis = tracking_problem(c_target)
    aset = AdmissibleSet.box(-1.0, 1.0)
    pair = optimize(problem, cost, aset, basis)
    np.testing.assert_allclose(pair.coefficients, [1.0, -1.0, 0.5, 1.0], atol=1e-10)
    assert aset.contains(pair.coefficients)


def test_finite_list_enumeration(twin):
    cands = [np.zeros(4), 0.5 * twin.c_star, twin.c_star, -twin.c_star]
    aset = AdmissibleSet.finite(cands)
    pair = optimize(twin.problem, twin.cost, aset, twin.basis)
    assert pair.status == "enumerated" and len(pair.candidate_J) == 4
    assert pair.J == min(pair.candidate_J)
    assert np.array_equal(pair.coefficients, twin.c_star)
    assert pair.admissible


def test_finite_list_of_fields(twin):
    fields = [twin.basis.field(c) for c in (np.zeros(4), twin.c_star)]
    pair = enumerate_candidates(twin.problem, twin.cost, AdmissibleSet.finite(fields), twin.basis)
    assert pair.control is fields[1]
    assert pair.J == min(pair.candidate_J)


def test_optimizer_deterministic():
    t = twin_experiment(cells=6, size=2, lambda1=1.0, lambda2=0.5)
    cfg = OptimizerConfig(starts=("zero", "random"))
    a = optimize(t.problem, t.cost, t.admissible, t.basis, cfg)
    b = optimize(t.problem, t.cost, t.admissible, t.basis, cfg)
    assert np.array_equal(a.coefficients, b.coefficients)
    assert a.history == b.history and a.J == b.J


def test_strict_mode_flags_stalled_run():
    t = twin_experiment(cells=6, size=2)
    with pytest.raises(NoDescentFound):
        optimize(t.problem, t.cost, t.admissible, t.basis, OptimizerConfig(starts=("zero",), max_iter=1),
                 strict=True)


def test_optimizer_config_validation():
    for kw in (dict(fd_step=0.0), dict(backtrack=1.0), dict(starts=("nowhere",)), dict(starts=())):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)


# -- Nelder-Mead fallback ------------------------------------------------------------------------------------------


def test_nelder_mead_pure_tracking():
    c_target = np.array([3.0, -4.0, 0.0, 12.0])
    problem, cost, basis = tracking_problem(c_target)
    aset = AdmissibleSet.ball(6.5)
    pair = nelder_mead_fallback(problem, cost, aset, basis, OptimizerConfig(nm_max_evals=200))
    assert pair.n_evaluations <= 200
    assert np.linalg.norm(pair.coefficients - aset.project(c_target)) <= 1e-4
    assert aset.contains(pair.coefficients)
    assert np.all(np.diff(pair.history) <= 0.0)


def test_nelder_mead_twin(twin):
    pair = nelder_mead_fallback(twin.problem, twin.cost, twin.admissible, twin.basis,
                                OptimizerConfig(nm_max_evals=120))
    J_start = ReducedObjective(twin.problem, twin.cost, twin.basis).value(np.zeros(4))
    assert pair.J <= 1e-3 * J_start
    assert pair.admissible and pair.method == "nelder-mead"
    assert np.all(np.diff(pair.history) <= 0.0)


def test_nelder_mead_list_shortcut(twin):
    aset = AdmissibleSet.finite([np.zeros(4), twin.c_star])
    pair = nelder_mead_fallback(twin.problem, twin.cost, aset, twin.basis)
    assert pair.status == "enumerated" and np.array_equal(pair.coefficients, twin.c_star)


def test_nelder_mead_size_limit():
    grid = Grid((1.0, 1.0), (16, 16), ("wall", "wall"))
    basis = ControlBasis.smooth(grid, 17)
    problem = FlowProblem(FluidModel.bingham(grid, 1.0, 1.0), VelocityField.zeros(grid))
    cost = CostFunctional(0.0, 1.0, VelocityField.zeros(grid))
    with pytest.raises(ValueError, match="at most 16"):
        nelder_mead_fallback(problem, cost, AdmissibleSet.ball(1.0), basis)

