"""scikit-learn style wrappers around the flow solver and the control optimizer.

Rows of ``X`` are control coefficient vectors (for :class:`FlowTransformer`)
or flattened target velocities on the velocity unknowns (for
:class:`ControlEstimator`).
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .control import AdmissibleSet, ControlBasis, CostFunctional, OptimizerConfig, evaluate_J, optimize
from .fields import VelocityField, estimate_embedding_constant
from .viflow import FlowProblem, SolverConfig, solve_flow


def _check_problem(problem):
    if not isinstance(problem, FlowProblem):
        raise TypeError(f"problem must be a FlowProblem, got {type(problem).__name__}")
    return problem


class FlowTransformer(TransformerMixin, BaseEstimator):
    """Map control coefficients to velocity unknowns by solving the flow.

    Parameters
    ----------
    problem : FlowProblem
        Template problem; its own control is replaced by the basis expansion.
    basis_size : int
        Number of smooth control modes.
    solver : SolverConfig, optional
    """

    def __init__(self, problem=None, basis_size=4, solver=None):
        self.problem = problem
        self.basis_size = basis_size
        self.solver = solver

    def fit(self, X=None, y=None):
        problem = _check_problem(self.problem)
        self.basis_ = ControlBasis.smooth(problem.grid, self.basis_size)
        self.embedding_constant_ = estimate_embedding_constant(problem.grid)
        self.n_features_in_ = self.basis_size
        if X is not None:
            check_array(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        config = SolverConfig(**{**(self.solver or SolverConfig()).__dict__, "compute_diagnostics": False})
        out = np.empty((X.shape[0], self.problem.grid.dofs.size))
        self.converged_ = np.zeros(X.shape[0], bool)
        for n, c in enumerate(X):
            rep = solve_flow(self.problem.with_control(self.basis_.field(c)), config)
            out[n] = rep.velocity.dof_values
            self.converged_[n] = rep.converged
        return out


class ControlEstimator(BaseEstimator):
    """Fit the control whose flow best matches a target velocity.

    ``fit(X)`` takes one target (a single row of velocity unknowns) and
    stores ``coef_`` and the certified ``pair_``; ``predict`` returns the
    velocity unknowns of the fitted control.

    Parameters
    ----------
    problem : FlowProblem
    basis_size : int
    lambda1, lambda2 : float
        Cost weights (tracking and control effort).
    radius : float
        Radius of the admissible coefficient ball.
    optimizer, solver : OptimizerConfig, SolverConfig, optional
    """

    def __init__(self, problem=None, basis_size=4, lambda1=1.0, lambda2=1e-3, radius=10.0, optimizer=None,
                 solver=None):
        self.problem = problem
        self.basis_size = basis_size
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.radius = radius
        self.optimizer = optimizer
        self.solver = solver

    def _target(self, X):
        grid = self.problem.grid
        X = check_array(X)
        if X.shape != (1, grid.dofs.size):
            raise ValueError(f"expected one target row with {grid.dofs.size} velocity unknowns, got {X.shape}")
        return VelocityField.from_dofs(grid, X[0])

    def fit(self, X, y=None):
        problem = _check_problem(self.problem)
        target = self._target(X)
        self.basis_ = ControlBasis.smooth(problem.grid, self.basis_size)
        self.cost_ = CostFunctional(self.lambda1, self.lambda2, target)
        aset = AdmissibleSet.ball(self.radius)
        self.pair_ = optimize(problem, self.cost_, aset, self.basis_, self.optimizer or OptimizerConfig(),
                              self.solver)
        self.coef_ = self.pair_.coefficients
        self.n_features_in_ = X.shape[1] if hasattr(X, "shape") else len(X[0])
        return self

    def predict(self, X=None):
        check_is_fitted(self, "coef_")
        return self.pair_.velocity.dof_values[None, :]

    def score(self, X, y=None):
        """Negative cost of the fitted control against the target ``X``."""
        check_is_fitted(self, "coef_")
        target = self._target(X)
        cost = CostFunctional(self.lambda1, self.lambda2, target)
        return -evaluate_J(cost, self.pair_.velocity, self.pair_.control)
