"""Viscosity models, yield-stress fields and the regularized Bingham law.

Constitutive law (rigid-viscoplastic, tensor form)::

    sigma = mu(|E|) E + g E / |E|      where |E| > 0
    |sigma| <= g                       where |E| = 0

is replaced by the smooth effective viscosity
``mu_eff = mu(|E|) + g / sqrt(|E|**2 + eps**2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid, TensorField, second_invariant

RIGID_FACTOR = 10.0


class ViscosityModel:
    """Strain-rate dependent viscosity ``mu(s)`` with bounds ``mu0 <= mu <= mu1``.

    Parameters
    ----------
    kind : {"constant", "arctan", "tabulated"}
    mu : float
        Value of the constant model.
    mu0, scale, s_ref : float
        Arctan model ``mu0 + scale * arctan(s / s_ref)``.
    table_s, table_mu : array-like
        Tabulated model, piecewise linear in s, constant beyond the table.
    s_max : float
        Upper end of the sampling interval used by the construction checks.
    """

    def __init__(self, kind="constant", mu=1.0, mu0=1.0, scale=1.0, s_ref=1.0,
                 table_s=None, table_mu=None, s_max=1e4):
        self.kind = kind
        self.mu = mu
        self.mu0_param = mu0
        self.scale = scale
        self.s_ref = s_ref
        self.table_s = None if table_s is None else np.asarray(table_s, float)
        self.table_mu = None if table_mu is None else np.asarray(table_mu, float)
        self.s_max = s_max
        self._validate()

    @classmethod
    def constant(cls, mu):
        return cls("constant", mu=mu)

    @classmethod
    def arctan(cls, mu0, scale=1.0, s_ref=1.0):
        return cls("arctan", mu0=mu0, scale=scale, s_ref=s_ref)

    @classmethod
    def tabulated(cls, s, mu):
        return cls("tabulated", table_s=s, table_mu=mu)

    @property
    def bounds(self):
        if self.kind == "constant":
            return float(self.mu), float(self.mu)
        if self.kind == "arctan":
            return float(self.mu0_param), float(self.mu0_param + self.scale * np.pi / 2)
        return float(self.table_mu.min()), float(self.table_mu.max())

    @property
    def mu0(self):
        return self.bounds[0]

    @property
    def mu1(self):
        return self.bounds[1]

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.full(s.shape, float(self.mu))
        if self.kind == "arctan":
            return self.mu0_param + self.scale * np.arctan(s / self.s_ref)
        return np.interp(s, self.table_s, self.table_mu)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.zeros(s.shape)
        if self.kind == "arctan":
            return self.scale / self.s_ref / (1.0 + (s / self.s_ref) ** 2)
        slopes = np.diff(self.table_mu) / np.diff(self.table_s)
        k = np.searchsorted(self.table_s, s, side="right") - 1
        inside = (k >= 0) & (k < slopes.size)
        return np.where(inside, slopes[np.clip(k, 0, slopes.size - 1)], 0.0)

    def _validate(self):
        if self.kind not in ("constant", "arctan", "tabulated"):
            raise ValueError(f"unknown viscosity kind {self.kind!r}")
        if self.kind == "arctan" and not (self.scale >= 0 and self.s_ref > 0):
            raise ValueError("arctan viscosity needs scale >= 0 and s_ref > 0")
        if self.kind == "tabulated":
            if self.table_s is None or self.table_mu is None or self.table_s.shape != self.table_mu.shape:
                raise ValueError("tabulated viscosity needs matching table_s and table_mu")
            if self.table_s.size < 2 or np.any(np.diff(self.table_s) <= 0) or self.table_s[0] < 0:
                raise ValueError("table_s must be nonnegative and strictly increasing")
        mu0, mu1 = self.bounds
        if not (np.isfinite(mu0) and mu0 > 0):
            raise ValueError(f"viscosity bounds violated: need 0 < mu0 <= mu(s) <= mu1, got mu0 = {mu0}")
        s = np.concatenate([np.linspace(0.0, 10.0, 2001), np.geomspace(10.0, self.s_max, 2001)])
        m = self(s)
        if np.any(m < mu0) or np.any(m > mu1) or not np.all(np.isfinite(m)):
            raise ValueError("viscosity bounds violated: mu(s) leaves [mu0, mu1] on sampled strain rates")
        if np.any(np.diff(m) < 0):
            raise ValueError("viscosity must be nondecreasing in the strain rate (monotonicity)")

    def get_params(self):
        return dict(kind=self.kind, mu=self.mu, mu0=self.mu0_param, scale=self.scale, s_ref=self.s_ref,
                    table_s=None if self.table_s is None else self.table_s.tolist(),
                    table_mu=None if self.table_mu is None else self.table_mu.tolist())

    def __repr__(self):
        if self.kind == "constant":
            return f"ViscosityModel.constant({self.mu!r})"
        if self.kind == "arctan":
            return f"ViscosityModel.arctan({self.mu0_param!r}, scale={self.scale!r}, s_ref={self.s_ref!r})"
        return f"ViscosityModel.tabulated({self.table_s.tolist()!r}, {self.table_mu.tolist()!r})"


@dataclass(eq=False)
class YieldField:
    """Cellwise yield stress ``g >= 0``; ``strict`` demands ``g > 0`` everywhere."""

    grid: Grid
    values: np.ndarray
    strict: bool = False

    def __post_init__(self):
        v = np.broadcast_to(np.asarray(self.values, dtype=float), self.grid.shape).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("yield stress must be finite")
        if np.any(v < 0):
            raise ValueError("yield stress must be nonnegative")
        if self.strict and np.any(v <= 0):
            raise ValueError("yield stress must be strictly positive almost everywhere")
        self.values = v

    @classmethod
    def constant(cls, grid: Grid, g: float, strict: bool = False) -> "YieldField":
        return cls(grid, np.full(grid.shape, float(g)), strict)

    @classmethod
    def blocks(cls, grid: Grid, background: float, blocks=(), strict: bool = False) -> "YieldField":
        """Piecewise constant field; ``blocks`` is a list of ``(lower, upper, value)`` boxes."""
        vals = np.full(grid.shape, float(background))
        coords = grid.cell_coordinates()
        for lower, upper, value in blocks:
            inside = np.ones(grid.shape, bool)
            for a in range(grid.dim):
                inside &= (coords[a] >= lower[a]) & (coords[a] <= upper[a])
            vals[inside] = value
        return cls(grid, vals, strict)

    def qp(self) -> np.ndarray:
        return self.grid.expand_to_qp(self.values)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values ** 2)))


@dataclass(eq=False)
class FluidModel:
    """Viscosity, yield stress and regularization ``eps`` (strain-rate units)."""

    viscosity: ViscosityModel
    yield_stress: YieldField
    eps: float = 1e-6

    def __post_init__(self):
        if not (self.eps > 0 and np.isfinite(self.eps)):
            raise ValueError(f"regularization eps must be positive, got {self.eps}")

    @property
    def grid(self) -> Grid:
        return self.yield_stress.grid

    @property
    def mu0(self) -> float:
        return self.viscosity.mu0

    @classmethod
    def bingham(cls, grid: Grid, mu: float, g: float, eps: float = 1e-6) -> "FluidModel":
        return cls(ViscosityModel.constant(mu), YieldField.constant(grid, g), eps)

    def with_eps(self, eps: float) -> "FluidModel":
        return FluidModel(self.viscosity, self.yield_stress, eps)


def simple_shear_to_tensor(mu_plastic: float, tau_yield: float) -> tuple:
    """Convert simple-shear Bingham parameters to tensor-law coefficients.

    In simple shear ``u(y)`` the law ``sigma = mu E + g E/|E|`` gives a
    shear stress ``(mu/2) du/dy + (g/sqrt(2)) sign(du/dy)``, so the scalar
    rheometric law ``tau = mu_p du/dy + tau_y`` corresponds to
    ``mu = 2 mu_p`` and ``g = sqrt(2) tau_y``.
    """
    return 2.0 * mu_plastic, np.sqrt(2.0) * tau_yield


def effective_viscosity(model: FluidModel, s, g=None):
    """``mu(s) + g / sqrt(s**2 + eps**2)``; ``g`` defaults to the cellwise field at quadrature points."""
    s = np.asarray(s, dtype=float)
    if g is None:
        g = model.yield_stress.qp().reshape(s.shape)
    return model.viscosity(s) + np.asarray(g, float) / np.sqrt(s ** 2 + model.eps ** 2)


def stress_deviator(model: FluidModel, E: TensorField) -> TensorField:
    """Regularized stress ``mu_eff(|E|) E``."""
    s = second_invariant(E)
    mu = effective_viscosity(model, s, model.yield_stress.qp().reshape(s.shape))
    return TensorField(E.grid, E.data * mu[None])


def rigid_mask(model: FluidModel, E: TensorField, factor: float = RIGID_FACTOR) -> np.ndarray:
    """Cells whose strain rate stays below ``factor * eps`` at every quadrature point."""
    s = second_invariant(E)
    return np.all(s <= factor * model.eps, axis=0)


def _sym_norm(X):
    return np.sqrt(np.sum(np.asarray(X, float) ** 2, axis=(-2, -1)))


def monotonicity_check(model: ViscosityModel, X, Y):
    """``(mu(|X|) X - mu(|Y|) Y) : (X - Y)`` for (stacks of) symmetric matrices."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    mx = model(_sym_norm(X))[..., None, None]
    my = model(_sym_norm(Y))[..., None, None]
    return np.sum((mx * X - my * Y) * (X - Y), axis=(-2, -1))


def poiseuille_oracle(g, mu, G, h, y):
    """Exact Bingham channel profile for the simple-shear law ``tau = mu du/dy + g``.

    Channel ``|y| <= h`` driven by a uniform body force ``G``; ``g`` is the
    shear yield stress and ``mu`` the plastic viscosity (use
    :func:`simple_shear_to_tensor` to build the matching tensor model).
    The plug ``|y| <= min(g/G, h)`` moves rigidly; ``g >= G h`` blocks the flow.
    """
    if not (g >= 0 and mu > 0 and G > 0 and h > 0):
        raise ValueError("poiseuille_oracle needs g >= 0, mu > 0, G > 0, h > 0")
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(y) > h * (1 + 1e-12)):
        raise ValueError("|y| must not exceed the half-width h")
    y0 = min(g / G, h)
    a = np.minimum(np.abs(y), h)
    plug = G / (2.0 * mu) * (h - y0) ** 2
    sheared = (G * (h ** 2 - a ** 2) / 2.0 - g * (h - a)) / mu
    out = np.where(a <= y0, plug, sheared)
    return float(out) if out.ndim == 0 else out


def plug_half_width(g, G, h):
    return min(g / G, h)
