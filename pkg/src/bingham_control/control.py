"""Optimal control of the body force over a reduced basis.

The control is ``u = sum_k c_k b_k`` with an L2-orthonormal basis ``b_k``;
the reduced objective ``J_hat(c) = J(v(u(c)), u(c))`` is minimized over an
admissible set by projected gradient descent with finite-difference
gradients, by exhaustive enumeration for finite sets, or by a projected
Nelder-Mead simplex.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .exceptions import InnerSolverFailure, NoDescentFound
from .fields import Grid, VelocityField, inner_L2, inner_V, norm_L2
from .viflow import FlowProblem, SolverConfig, SolveReport, solve_flow

logger = logging.getLogger(__name__)

BALL = "ball"
BOX = "box"
LIST = "list"


class AdmissibleSet:
    """Bounded closed set of controls.

    Parameters
    ----------
    kind : {"ball", "box", "list"}
    radius : float
        Ball radius ``R >= 0`` (L2 norm, equal to the Euclidean norm of the
        coefficients for an orthonormal basis).
    center : array-like or VelocityField, optional
        Ball center, zero by default.
    lower, upper : float or array-like
        Box bounds, applied per coefficient or per face value.
    candidates : list
        Finite list of coefficient vectors or control fields.
    """

    def __init__(self, kind, radius=None, center=None, lower=None, upper=None, candidates=None):
        self.kind = kind
        self.radius = radius
        self.center = center
        self.lower = lower
        self.upper = upper
        self.candidates = candidates
        self._validate()

    @classmethod
    def ball(cls, radius, center=None):
        return cls(BALL, radius=radius, center=center)

    @classmethod
    def box(cls, lower, upper):
        return cls(BOX, lower=lower, upper=upper)

    @classmethod
    def finite(cls, candidates):
        return cls(LIST, candidates=list(candidates))

    def _validate(self):
        if self.kind == BALL:
            if self.radius is None or not (np.isfinite(self.radius) and self.radius >= 0):
                raise ValueError("admissible ball needs a finite radius R >= 0")
        elif self.kind == BOX:
            lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("admissible box needs finite bounds")
            if np.any(lo > hi):
                raise ValueError("admissible box is empty: lower bound exceeds upper bound")
        elif self.kind == LIST:
            if not self.candidates:
                raise ValueError("admissible control set must be nonempty (empty candidate list)")
        else:
            raise ValueError(f"unknown admissible set kind {self.kind!r}")

    # -- helpers on either representation --

    @staticmethod
    def _vec(u):
        return u.flat if isinstance(u, VelocityField) else np.asarray(u, dtype=float)

    @staticmethod
    def _norm(u, x):
        if isinstance(u, VelocityField):
            return float(np.sqrt(u.grid.cell_volume * np.dot(x, x)))
        return float(np.linalg.norm(x))

    @staticmethod
    def _wrap(u, x):
        return VelocityField.from_flat(u.grid, x) if isinstance(u, VelocityField) else x

    def _center_vec(self, u, x):
        if self.center is None:
            return np.zeros_like(x)
        return self._vec(self.center)

    def contains(self, u) -> bool:
        """Exact membership test (no tolerance)."""
        x = self._vec(u)
        if self.kind == BALL:
            return self._norm(u, x - self._center_vec(u, x)) <= self.radius
        if self.kind == BOX:
            return bool(np.all(x >= self.lower) and np.all(x <= self.upper))
        return any(np.array_equal(x, self._vec(c)) for c in self.candidates)

    def project(self, u):
        """Closest admissible point: radial scaling, clamping or nearest candidate."""
        x = self._vec(u)
        if self.kind == BOX:
            return self._wrap(u, np.clip(x, self.lower, self.upper))
        if self.kind == LIST:
            if any(isinstance(c, VelocityField) != isinstance(u, VelocityField) for c in self.candidates):
                raise TypeError("candidates and the projected point must both be fields or coefficients")
            d = [self._norm(u, x - self._vec(c)) for c in self.candidates]
            return self.candidates[int(np.argmin(d))]
        c0 = self._center_vec(u, x)
        d = x - c0
        n = self._norm(u, d)
        if n <= self.radius:
            return u
        y = c0 + d * (self.radius / n)
        # rounding can leave the scaled point a few ulps outside the ball
        shrink = 1.0
        while self._norm(u, y - c0) > self.radius:
            shrink *= 1.0 - 4 * np.finfo(float).eps
            y = c0 + d * (self.radius / n) * shrink
        return self._wrap(u, y)

    def __repr__(self):
        if self.kind == BALL:
            return f"AdmissibleSet.ball({self.radius!r})"
        if self.kind == BOX:
            return f"AdmissibleSet.box({self.lower!r}, {self.upper!r})"
        return f"AdmissibleSet.finite(<{len(self.candidates)} candidates>)"


def project_admissible(aset: AdmissibleSet, u):
    return aset.project(u)


class ControlBasis:
    """L2-orthonormal control fields ``b_k`` (at most 64)."""

    max_size = 64

    def __init__(self, fields):
        fields = list(fields)
        if not 1 <= len(fields) <= self.max_size:
            raise ValueError(f"control basis needs 1..{self.max_size} fields, got {len(fields)}")
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise ValueError("control basis fields live on different grids")
        w = np.sqrt(grid.cell_volume)
        M = np.column_stack([w * f.flat for f in fields])
        Q, R = np.linalg.qr(M)
        d = np.abs(np.diag(R))
        if np.any(d <= 1e-10 * d.max()):
            raise ValueError("control basis fields are linearly dependent")
        Q = Q * np.sign(np.diag(R))
        # the inputs vanish on wall faces; QR leaves roundoff there
        Q[grid.boundary_face_mask] = 0.0
        self.grid = grid
        self.fields = [VelocityField.from_flat(grid, Q[:, k] / w) for k in range(Q.shape[1])]
        self._matrix = np.column_stack([f.flat for f in self.fields])

    @classmethod
    def smooth(cls, grid: Grid, size: int) -> "ControlBasis":
        """Low-frequency force modes, cycling over components and wavenumbers."""
        fields = []
        k = 1
        while len(fields) < size:
            for comp in range(grid.dim):
                def f(*x, comp=comp, k=k):
                    val = np.ones_like(x[0])
                    for a in range(grid.dim):
                        t = (x[a] - grid.origin[a]) / grid.extents[a]
                        freq = k if a == (comp + 1) % grid.dim else 1
                        if grid.is_wall(a):
                            val = val * np.sin(np.pi * freq * t)
                        else:
                            val = val * np.cos(2 * np.pi * (freq - 1) * t)
                    return val
                funcs = [lambda *x: np.zeros_like(x[0])] * grid.dim
                funcs = list(funcs)
                funcs[comp] = f
                fields.append(VelocityField.from_function(grid, funcs))
                if len(fields) == size:
                    break
            k += 1
        return cls(fields)

    @property
    def size(self) -> int:
        return len(self.fields)

    def gram(self) -> np.ndarray:
        return np.array([[inner_L2(a, b) for b in self.fields] for a in self.fields])

    def field(self, c) -> VelocityField:
        c = np.asarray(c, dtype=float)
        if c.shape != (self.size,):
            raise ValueError(f"expected {self.size} coefficients, got shape {c.shape}")
        return VelocityField.from_flat(self.grid, self._matrix @ c)

    def coefficients(self, u: VelocityField) -> np.ndarray:
        """L2 projection coefficients ``(u, b_k)``."""
        return self.grid.cell_volume * (self._matrix.T @ u.flat)


@dataclass(eq=False)
class CostFunctional:
    """``J(v, u) = lambda1 ||v - v_target||_V**2 + lambda2 ||u - u_target||_L2**2``."""

    lambda1: float
    lambda2: float
    v_target: VelocityField
    u_target: VelocityField = None

    def __post_init__(self):
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValueError("cost weights lambda1, lambda2 must be nonnegative")
        if self.u_target is None:
            self.u_target = VelocityField.zeros(self.v_target.grid)
        if self.u_target.grid != self.v_target.grid:
            raise ValueError("targets live on different grids")


def evaluate_J(cost: CostFunctional, v: VelocityField, u: VelocityField) -> float:
    out = 0.0
    if cost.lambda1 != 0.0:
        dv = v - cost.v_target
        out += cost.lambda1 * inner_V(dv, dv)
    if cost.lambda2 != 0.0:
        out += cost.lambda2 * norm_L2(u - cost.u_target) ** 2
    return float(out)


@dataclass
class OptimizerConfig:
    """Projected-gradient and fallback settings (coefficient space)."""

    fd_step: float = 1e-4
    initial_step: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    grad_tol: float = 1e-6
    min_step: float = 1e-12
    max_iter: int = 500
    starts: tuple = ("zero", "target", "random")
    seed: int = 0
    nm_max_evals: int = 2000
    nm_xatol: float = 1e-8
    nm_fatol: float = 1e-14

    def __post_init__(self):
        if not self.fd_step > 0:
            raise ValueError("finite-difference step must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        bad = set(self.starts) - {"zero", "target", "random"}
        if bad or not self.starts:
            raise ValueError(f"starts must be drawn from zero/target/random, got {self.starts!r}")


@dataclass(eq=False)
class OptimalPair:
    """Optimized control, its velocity and the admissibility certificate."""

    control: VelocityField
    coefficients: np.ndarray
    velocity: VelocityField
    J: float
    history: list
    energy_residual: tuple
    vi_residual: float = np.nan
    vi_tolerance: float = np.nan
    admissible: bool = False
    in_set: bool = False
    status: str = ""
    iterations: int = 0
    n_solves: int = 0
    n_evaluations: int = 0
    method: str = "projected-gradient"
    candidate_J: list = field(default_factory=list)
    report: SolveReport = None

    @property
    def converged(self) -> bool:
        return self.status in ("gradient", "enumerated", "simplex")

    def summary(self) -> dict:
        return dict(J=self.J, coefficients=[float(c) for c in self.coefficients], status=self.status,
                    iterations=self.iterations, n_solves=self.n_solves,
                    n_evaluations=self.n_evaluations, method=self.method,
                    energy_residual_regularized=self.energy_residual[0],
                    energy_residual_exact=self.energy_residual[1], vi_residual=self.vi_residual,
                    vi_tolerance=self.vi_tolerance, admissible=self.admissible, in_set=self.in_set,
                    J_history=list(self.history))


class ReducedObjective:
    """``J_hat(c)`` with solve bookkeeping; each solve may be warm-started."""

    def __init__(self, problem: FlowProblem, cost: CostFunctional, basis: ControlBasis,
                 solver: SolverConfig = None):
        if basis.grid != problem.grid or cost.v_target.grid != problem.grid:
            raise ValueError("problem, cost and basis must share one grid")
        self.problem = problem
        self.cost = cost
        self.basis = basis
        base = solver or SolverConfig()
        self.solver = SolverConfig(**{**base.__dict__, "compute_diagnostics": False})
        self.n_solves = 0
        self.n_evaluations = 0

    @property
    def needs_flow(self) -> bool:
        return self.cost.lambda1 != 0.0

    def solve(self, u: VelocityField, initial: VelocityField = None) -> SolveReport:
        self.n_solves += 1
        report = solve_flow(self.problem.with_control(u), self.solver, initial=initial)
        if not report.converged:
            raise InnerSolverFailure(f"inner flow solve failed: {report.message}")
        return report

    def evaluate(self, c, initial: VelocityField = None):
        """Return ``(J, velocity or None)``; velocity is skipped when lambda1 = 0."""
        self.n_evaluations += 1
        u = self.basis.field(c)
        if not self.needs_flow:
            return evaluate_J(self.cost, self.cost.v_target, u), None
        v = self.solve(u, initial).velocity
        return evaluate_J(self.cost, v, u), v

    def value(self, c, initial=None) -> float:
        return self.evaluate(c, initial)[0]


def reduced_gradient(problem: FlowProblem, cost: CostFunctional, basis: ControlBasis, c, step: float = 1e-4,
                     solver: SolverConfig = None, initial: VelocityField = None,
                     objective: ReducedObjective = None) -> np.ndarray:
    """Central-difference gradient of ``J_hat`` in coefficient space.

    Every stencil solve is warm-started from ``initial`` so the result does
    not depend on evaluation order.  Components whose solves fail are NaN.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    obj = objective or ReducedObjective(problem, cost, basis, solver)
    c = np.asarray(c, dtype=float)
    g = np.empty(c.size)
    for k in range(c.size):
        e = np.zeros(c.size)
        e[k] = step
        try:
            g[k] = (obj.value(c + e, initial) - obj.value(c - e, initial)) / (2.0 * step)
        except InnerSolverFailure as exc:
            logger.warning("gradient component %d flagged: %s", k, exc)
            g[k] = np.nan
    return g


def _start_points(aset: AdmissibleSet, basis: ControlBasis, cost: CostFunctional, config: OptimizerConfig):
    rng = np.random.default_rng(config.seed)
    out = []
    for kind in config.starts:
        if kind == "zero":
            c = np.zeros(basis.size)
        elif kind == "target":
            c = basis.coefficients(cost.u_target)
        else:
            c = rng.standard_normal(basis.size)
            if aset.kind == BALL:
                c *= aset.radius / max(np.linalg.norm(c), 1e-300)
        out.append((kind, aset.project(c)))
    return out


def _descend(obj: ReducedObjective, aset: AdmissibleSet, c0, config: OptimizerConfig):
    """One projected-gradient run; returns ``(c, J, v, history, status, iterations)``."""
    c = np.array(c0, dtype=float)
    J, v = obj.evaluate(c)
    history = [J]
    scale = None
    status = "max_iter"
    it = 0
    for it in range(1, config.max_iter + 1):
        g = reduced_gradient(obj.problem, obj.cost, obj.basis, c, config.fd_step, initial=v, objective=obj)
        if not np.all(np.isfinite(g)):
            status = "gradient_failure"
            break
        pg = np.linalg.norm(c - aset.project(c - g))
        if scale is None:
            scale = pg if pg > 0 else 1.0
        if pg <= config.grad_tol * scale:
            status = "gradient"
            break
        t = config.initial_step
        accepted = False
        while t >= config.min_step:
            trial = aset.project(c - t * g)
            try:
                Jt, vt = obj.evaluate(trial, initial=v)
            except InnerSolverFailure:
                Jt = np.inf
            if Jt <= J + config.armijo * float(g @ (trial - c)):
                accepted = True
                break
            t *= config.backtrack
        if not accepted:
            status = "step_collapse"
            break
        if np.array_equal(trial, c):
            status = "stationary"
            break
        c, J, v = trial, Jt, vt
        history.append(J)
    return c, J, v, history, status, it


def _finalize(obj: ReducedObjective, aset: AdmissibleSet, c, history, status, iterations, method,
              solver: SolverConfig, candidate_J=None, u=None) -> OptimalPair:
    """Re-solve the final control with full diagnostics and certify the pair."""
    u = obj.basis.field(c) if u is None else u
    config = SolverConfig(**{**(solver or SolverConfig()).__dict__, "compute_diagnostics": True})
    problem = obj.problem.with_control(u)
    report = solve_flow(problem, config)
    obj.n_solves += 1
    if not report.converged:
        raise InnerSolverFailure(f"final flow solve failed: {report.message}")
    J = evaluate_J(obj.cost, report.velocity, u)
    in_set = aset.contains(c if aset.kind != LIST or not isinstance(aset.candidates[0], VelocityField) else u)
    admissible = bool(in_set and report.vi_residual >= -report.vi_tolerance)
    return OptimalPair(control=u, coefficients=np.asarray(c, float), velocity=report.velocity, J=J,
                       history=history, energy_residual=(report.energy_residual_regularized,
                                                         report.energy_residual_exact),
                       vi_residual=report.vi_residual, vi_tolerance=report.vi_tolerance,
                       admissible=admissible, in_set=in_set, status=status, iterations=iterations,
                       n_solves=obj.n_solves, n_evaluations=obj.n_evaluations, method=method,
                       candidate_J=candidate_J or [], report=report)


def enumerate_candidates(problem: FlowProblem, cost: CostFunctional, aset: AdmissibleSet, basis: ControlBasis,
                         solver: SolverConfig = None) -> OptimalPair:
    """Evaluate every candidate of a finite set and return the best (first on ties)."""
    if aset.kind != LIST:
        raise ValueError("enumeration needs a finite admissible set")
    obj = ReducedObjective(problem, cost, basis, solver)
    table = []
    for cand in aset.candidates:
        u = cand if isinstance(cand, VelocityField) else basis.field(cand)
        v = obj.solve(u).velocity if obj.needs_flow else cost.v_target
        table.append(evaluate_J(cost, v, u))
    best = int(np.argmin(table))
    cand = aset.candidates[best]
    u = cand if isinstance(cand, VelocityField) else basis.field(cand)
    c = basis.coefficients(u) if isinstance(cand, VelocityField) else np.asarray(cand, float)
    pair = _finalize(obj, aset, c, [table[best]], "enumerated", len(table), "enumeration", solver,
                     candidate_J=table, u=u)
    pair.in_set = True
    pair.admissible = bool(pair.vi_residual >= -pair.vi_tolerance)
    return pair


def optimize(problem: FlowProblem, cost: CostFunctional, aset: AdmissibleSet, basis: ControlBasis,
             config: OptimizerConfig = None, solver: SolverConfig = None, strict: bool = False) -> OptimalPair:
    """Projected-gradient minimization of ``J_hat`` with multi-start.

    Each start runs Armijo backtracking from the initial step; the best
    final J over the starts is re-solved with full diagnostics.  Finite
    sets are enumerated.  If a gradient cannot be formed the run switches to
    :func:`nelder_mead_fallback`.  With ``strict`` a run that stalls before
    the gradient test raises :class:`NoDescentFound`.
    """
    config = config or OptimizerConfig()
    if aset.kind == LIST:
        return enumerate_candidates(problem, cost, aset, basis, solver)
    obj = ReducedObjective(problem, cost, basis, solver)
    t0 = time.perf_counter()
    best = None
    for kind, c0 in _start_points(aset, basis, cost, config):
        run = _descend(obj, aset, c0, config)
        logger.info("start %s: J = %.6e after %d iterations (%s)", kind, run[1], run[5], run[4])
        if run[4] == "gradient_failure":
            return nelder_mead_fallback(problem, cost, aset, basis, config, solver, start=run[0])
        if best is None or run[1] < best[1]:
            best = run
    c, J, v, history, status, it = best
    if strict and status not in ("gradient", "stationary"):
        raise NoDescentFound(f"projected gradient stopped with status {status!r} at J = {J:.6e}")
    pair = _finalize(obj, aset, c, history, status, it, "projected-gradient", solver)
    logger.info("optimize: J = %.6e in %.2fs", pair.J, time.perf_counter() - t0)
    return pair


def nelder_mead_fallback(problem: FlowProblem, cost: CostFunctional, aset: AdmissibleSet, basis: ControlBasis,
                         config: OptimizerConfig = None, solver: SolverConfig = None, start=None) -> OptimalPair:
    """Derivative-free simplex search with the projection applied at every evaluation."""
    config = config or OptimizerConfig()
    if basis.size > 16:
        raise ValueError("Nelder-Mead fallback supports at most 16 controls")
    if aset.kind == LIST:
        return enumerate_candidates(problem, cost, aset, basis, solver)
    obj = ReducedObjective(problem, cost, basis, solver)
    x0 = aset.project(np.zeros(basis.size) if start is None else np.asarray(start, float))
    if aset.kind == BALL:
        width = 0.5 * max(aset.radius, 1e-3)
    else:
        width = 0.5 * max(float(np.max(np.asarray(aset.upper) - np.asarray(aset.lower))), 1e-3)
    simplex = np.vstack([x0] + [x0 + width * e for e in np.eye(basis.size)])
    best = [np.inf, x0, None]
    history = []

    def fun(c):
        p = aset.project(c)
        try:
            # warm start from the best vertex so far; the sequence of calls is deterministic
            J, v = obj.evaluate(p, initial=best[2])
        except InnerSolverFailure:
            return np.inf
        if J < best[0]:
            best[0], best[1], best[2] = J, p, v
            history.append(J)
        return J

    res = minimize(fun, x0, method="Nelder-Mead",
                   options=dict(initial_simplex=simplex, maxfev=config.nm_max_evals,
                                xatol=config.nm_xatol, fatol=config.nm_fatol))
    status = "simplex" if res.success else "simplex_stalled"
    return _finalize(obj, aset, best[1], history, status, int(res.nit), "nelder-mead", solver)
