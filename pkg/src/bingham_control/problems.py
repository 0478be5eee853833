"""Ready-made problems: the plane channel and the cavity twin experiment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import AdmissibleSet, ControlBasis, CostFunctional
from .fields import Grid, VelocityField, forcing_field
from .rheology import FluidModel, simple_shear_to_tensor
from .viflow import FlowProblem, SolveReport, SolverConfig, solve_flow


def channel_grid(h: float = 1.0, ny: int = 64, nx: int = 4) -> Grid:
    """Periodic-in-x channel ``-h <= y <= h`` with square cells."""
    dy = 2.0 * h / ny
    return Grid((nx * dy, 2.0 * h), (nx, ny), ("periodic", "wall"), origin=(0.0, -h))


def channel_problem(g: float = 0.0, mu: float = 1.0, G: float = 1.0, h: float = 1.0, ny: int = 64, nx: int = 4,
                    eps: float = 1e-6, convection: bool = True) -> FlowProblem:
    """Channel driven by a uniform body force ``G`` along x.

    ``g`` and ``mu`` are the simple-shear yield stress and plastic viscosity
    (``tau = mu du/dy + g``) and are converted to tensor-law coefficients.
    """
    grid = channel_grid(h, ny, nx)
    mu_t, g_t = simple_shear_to_tensor(mu, g)
    model = FluidModel.bingham(grid, mu_t, g_t, eps)
    force = forcing_field(grid, [lambda x, y: np.full_like(x, G), lambda x, y: np.zeros_like(x)])
    return FlowProblem(model, force, convection=convection)


def channel_profile(report: SolveReport):
    """``(y, u)``: cell-centre coordinates and the x-velocity averaged along the channel."""
    grid = report.velocity.grid
    u = report.velocity.cell_centered()[0].mean(axis=0)
    return grid.cell_centers(1), u


def plug_extent(report: SolveReport) -> float:
    """Half-width of the rigid band: half the number of rigid rows times the cell height."""
    grid = report.velocity.grid
    rows = np.all(report.rigid_mask, axis=0)
    return 0.5 * rows.sum() * grid.h[1]


@dataclass(eq=False)
class TwinExperiment:
    """Inverse-crime setup with a known optimal control ``c_star``."""

    problem: FlowProblem
    cost: CostFunctional
    admissible: AdmissibleSet
    basis: ControlBasis
    c_star: np.ndarray
    target_report: SolveReport


def twin_experiment(cells: int = 8, size: int = 4, g: float = 1.0, mu: float = 1.0, eps: float = 1e-5,
                    scale: float = 1.25, lambda1: float = 100.0, lambda2: float = 0.1,
                    solver: SolverConfig = None) -> TwinExperiment:
    """Wall-bounded unit square, smooth force basis, ``u*`` in the interior of the ball ``R = 2 |c*|``."""
    grid = Grid((1.0, 1.0), (cells, cells), ("wall", "wall"))
    model = FluidModel.bingham(grid, mu, g, eps)
    problem = FlowProblem(model, VelocityField.zeros(grid))
    basis = ControlBasis.smooth(grid, size)
    pattern = np.array([8.0, -5.0, 3.0, 6.0, -2.0, 4.0, -7.0, 1.0])
    c_star = scale * np.resize(pattern, size)
    u_star = basis.field(c_star)
    target = solve_flow(problem.with_control(u_star), solver)
    cost = CostFunctional(lambda1, lambda2, target.velocity, u_star)
    aset = AdmissibleSet.ball(2.0 * float(np.linalg.norm(c_star)))
    return TwinExperiment(problem, cost, aset, basis, c_star, target)
