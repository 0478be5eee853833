"""Property and oracle checks behind ``bingham-control verify``.

Each check returns a :class:`CheckResult`; names describe the property
being tested.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .control import AdmissibleSet, ControlBasis, CostFunctional, reduced_gradient
from .fields import (Grid, VelocityField, divergence, estimate_embedding_constant, inner_V,
                     project_divergence_free, random_field, strain_rate)
from .problems import channel_problem, channel_profile, plug_extent
from .rheology import FluidModel, ViscosityModel, monotonicity_check, poiseuille_oracle
from .viflow import (FlowProblem, SolverConfig, _convection_matrix, apriori_bound_check, blocking_test,
                     convection_form, energy_identity_residual, solve_flow)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0


class _Context:
    """Shared solves so the channel cases run once per verify invocation."""

    def __init__(self, seed: int = 0, yield_sign: float = 1.0):
        self.seed = seed
        self.yield_sign = yield_sign
        self._cache = {}

    def channel(self, g, G=1.0):
        key = (g, G)
        if key not in self._cache:
            problem = channel_problem(g=g, G=G)
            self._cache[key] = (problem, solve_flow(problem, SolverConfig(seed=self.seed)))
        return self._cache[key]


def random_symmetric(rng, n, dim=3, low=-10.0, high=10.0):
    A = rng.uniform(low, high, size=(n, dim, dim))
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def check_monotonicity_arctan(ctx):
    rng = np.random.default_rng(ctx.seed)
    X, Y = random_symmetric(rng, 1000), random_symmetric(rng, 1000)
    val = monotonicity_check(ViscosityModel.arctan(1.0), X, Y)
    scale = np.maximum(np.sum(X ** 2, axis=(1, 2)), np.sum(Y ** 2, axis=(1, 2)))
    worst = float(np.min(val / scale))
    return worst >= -1e-12, f"min (LHS / scale) = {worst:.3e} over 1000 pairs"


def check_monotonicity_constant(ctx):
    rng = np.random.default_rng(ctx.seed + 1)
    X, Y = random_symmetric(rng, 1000), random_symmetric(rng, 1000)
    val = monotonicity_check(ViscosityModel.constant(2.0), X, Y)
    ref = 2.0 * np.sum((X - Y) ** 2, axis=(1, 2))
    err = float(np.max(np.abs(val - ref) / ref))
    return err <= 1e-12, f"max relative deviation from mu |X - Y|^2 = {err:.3e}"


def convection_skew_ratio(v: VelocityField, w: VelocityField) -> float:
    """``|c(v, w, w)|`` relative to the sum of absolute values of its terms."""
    C = _convection_matrix(v)
    x = w.flat
    terms = np.abs(C).multiply(np.abs(x)[:, None]) @ np.abs(x)
    scale = 0.5 * v.grid.cell_volume * 2.0 * float(np.sum(terms))
    c = convection_form(v, w, w)
    return abs(c) / scale if scale > 0 else abs(c)


def check_skew_symmetry(ctx):
    rng = np.random.default_rng(ctx.seed + 2)
    grids = [Grid((1.0, 1.0), (8, 8), ("wall", "wall")), Grid((1.0, 2.0), (6, 8), ("periodic", "wall")),
             Grid((1.0, 1.0, 1.0), (4, 4, 4), ("wall", "periodic", "wall"))]
    worst = 0.0
    for n in range(100):
        g = grids[n % len(grids)]
        v, w = random_field(g, rng), random_field(g, rng, solenoidal=False)
        worst = max(worst, convection_skew_ratio(v, w))
    return worst <= 1e-12, f"max |c(v,w,w)| / scale = {worst:.3e} over 100 pairs"


def check_newtonian_oracle(ctx):
    problem, rep = ctx.channel(0.0)
    y, u = channel_profile(rep)
    exact = poiseuille_oracle(0.0, 1.0, 1.0, 1.0, y)
    err = float(np.max(np.abs(u - exact)) / np.max(exact))
    ok = rep.converged and err <= 0.02
    return ok, f"max |u - u_exact| / max u_exact = {err:.3e}, {rep.iterations} iterations"


def check_bingham_oracle(ctx):
    problem, rep = ctx.channel(0.25)
    y, u = channel_profile(rep)
    plug_u = float(u.max())
    rel = abs(plug_u - 0.28125) / 0.28125
    width = plug_extent(rep)
    h = problem.grid.h[1]
    ok = rep.converged and rel <= 0.02 and abs(width - 0.25) <= h * (1 + 1e-12)
    return ok, f"plug velocity {plug_u:.8f} (rel. error {rel:.2e}), plug half-width {width:.5f}"


def check_blocking(ctx):
    problem, rep = ctx.channel(1.0, G=0.5)
    res = blocking_test(problem, SolverConfig(seed=ctx.seed), report=rep)
    ok = res.blocked and res.sampled_criterion <= 0.0
    return ok, (f"max|v| = {res.velocity_max:.3e} <= {res.threshold:.3e}; "
               f"max_w [(f,w) - phi_g(w)] = {res.sampled_criterion:.3e}")


def check_energy_identity(ctx):
    worst_reg = 0.0
    details = []
    for g in (0.0, 0.25):
        problem, rep = ctx.channel(g)
        reg, exact = energy_identity_residual(rep, problem, yield_sign=ctx.yield_sign)
        worst_reg = max(worst_reg, reg)
        details.append(f"g={g}: regularized {reg:.2e}, exact {exact:.2e}")
        if g > 0 and exact > 1e-3:
            return False, "; ".join(details)
    return worst_reg <= 1e-8, "; ".join(details)


def check_vi_residual(ctx):
    problem, rep = ctx.channel(0.25)
    ok = rep.vi_residual >= -rep.vi_tolerance
    return ok, f"min over pool {rep.vi_residual:.3e} >= -delta = {-rep.vi_tolerance:.3e}"


def check_apriori_bound(ctx):
    C = estimate_embedding_constant(ctx.channel(0.0)[0].grid, seed=ctx.seed)
    out = []
    ok = True
    for g, G in ((0.0, 1.0), (0.25, 1.0), (1.0, 0.5)):
        problem, rep = ctx.channel(g, G)
        good = apriori_bound_check(rep, problem, C)
        ok &= good
        out.append(f"g={g}: {'ok' if good else 'violated'}")
    return ok, f"C_h = {C:.6f}; " + ", ".join(out)


def check_korn(ctx):
    rng = np.random.default_rng(ctx.seed + 3)
    grid = Grid((1.0, 1.0), (6, 6), ("wall", "periodic"))
    basis = [random_field(grid, rng, solenoidal=False) for _ in range(12)]
    G = np.array([[inner_V(a, b) for b in basis] for a in basis])
    lam = float(np.linalg.eigvalsh(G).min())
    return lam > 0, f"smallest Gram eigenvalue {lam:.3e}"


def check_projection(ctx):
    rng = np.random.default_rng(ctx.seed + 4)
    ok = True
    worst = 0.0
    sets = [AdmissibleSet.ball(1.0), AdmissibleSet.box(-np.ones(4), np.ones(4))]
    for _ in range(200):
        u = 3.0 * rng.standard_normal(4)
        for s in sets:
            p = s.project(u)
            ok &= s.contains(p) and np.array_equal(s.project(p), p)
            a, b = 3.0 * rng.standard_normal(4), 3.0 * rng.standard_normal(4)
            worst = max(worst, np.linalg.norm(s.project(a) - s.project(b)) - np.linalg.norm(a - b))
    ok &= worst <= 1e-12
    return bool(ok), f"membership and idempotence on 200 points; max expansion {worst:.2e}"


def check_control_gradient(ctx):
    grid = Grid((1.0, 1.0), (6, 6), ("wall", "wall"))
    problem = FlowProblem(FluidModel.bingham(grid, 1.0, 0.0), VelocityField.zeros(grid))
    basis = ControlBasis.smooth(grid, 4)
    cost = CostFunctional(0.0, 1.0, VelocityField.zeros(grid))
    c = np.array([0.3, -1.2, 0.7, 2.0])
    g = reduced_gradient(problem, cost, basis, c, 1e-3)
    err = float(np.max(np.abs(g - 2 * c)))
    gram = float(np.max(np.abs(basis.gram() - np.eye(4))))
    return err <= 1e-9 and gram <= 1e-12, f"|grad - 2c| = {err:.2e}, |Gram - I| = {gram:.2e}"


def check_strain_examples(ctx):
    grid = Grid((1.0, 1.0), (8, 8), ("periodic", "wall"))
    v = VelocityField.from_function(grid, [lambda x, y: y, lambda x, y: 0 * x])
    E = strain_rate(v)
    interior = E.component(0, 1).mean(axis=0)[:, 1:-1]
    err = float(np.max(np.abs(interior - 0.5)))
    w = project_divergence_free(random_field(grid, np.random.default_rng(ctx.seed), solenoidal=False))
    div = float(np.max(np.abs(divergence(w))))
    return err <= 1e-12 and div <= 1e-10, f"shear E12 error {err:.1e}; projected divergence {div:.1e}"


CHECKS = [
    ("strain-rate and projection", check_strain_examples),
    ("monotonicity arctan viscosity", check_monotonicity_arctan),
    ("monotonicity constant viscosity", check_monotonicity_constant),
    ("convection skew-symmetry", check_skew_symmetry),
    ("discrete Korn inequality", check_korn),
    ("newtonian channel oracle", check_newtonian_oracle),
    ("bingham channel oracle", check_bingham_oracle),
    ("blocking by yield stress", check_blocking),
    ("energy identity", check_energy_identity),
    ("variational inequality residual", check_vi_residual),
    ("a-priori velocity bound", check_apriori_bound),
    ("admissible-set projection", check_projection),
    ("control-only gradient", check_control_gradient),
]


def run_checks(name_filter: str = None, seed: int = 0, yield_sign: float = 1.0) -> list:
    """Run every check whose name contains ``name_filter`` (case-insensitive)."""
    ctx = _Context(seed, yield_sign)
    results = []
    for name, fn in CHECKS:
        if name_filter and name_filter.lower() not in name.lower():
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn(ctx)
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return results


def format_table(results) -> str:
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)
