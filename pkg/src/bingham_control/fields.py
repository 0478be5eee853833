"""Staggered-grid geometry, discrete fields and differential operators.

Velocities live on face centers (MAC staggering), pressures at cell
centers.  The strain-rate tensor is evaluated at ``2**dim`` quadrature
points per cell, one per cell corner: diagonal entries are the cellwise
constant face differences, off-diagonal entries are taken from the grid
edge (node in 2D) nearest to the corner.  Averaging the quadrature values
over a cell gives the usual cell-centered tensor with face-to-center
averaged shear entries, while integrals keep the compact edge stencil
(the averaged stencil alone has a checkerboard null space).

No-slip walls: normal velocity components on wall faces are stored and
held at exactly zero; tangential components use the reflection ghost
``v_ghost = -v_interior`` wherever a derivative crosses a wall.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.exceptions import ConvergenceWarning

WALL = "wall"
PERIODIC = "periodic"


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned uniform box grid in 2D or 3D.

    Parameters
    ----------
    extents : sequence of float
        Box length along each axis.
    cells : sequence of int
        Number of cells along each axis.
    boundaries : sequence of {"wall", "periodic"}
        Boundary kind per axis.  At least one axis must be a no-slip wall.
    origin : sequence of float, optional
        Lower corner of the box (defaults to the origin).
    """

    extents: tuple
    cells: tuple
    boundaries: tuple
    origin: tuple = None

    def __post_init__(self):
        extents = tuple(float(e) for e in self.extents)
        cells = tuple(int(n) for n in self.cells)
        boundaries = tuple(str(b).lower() for b in self.boundaries)
        origin = (0.0,) * len(extents) if self.origin is None else tuple(float(o) for o in self.origin)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "boundaries", boundaries)
        object.__setattr__(self, "origin", origin)

        if len(extents) not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {len(extents)}")
        if not (len(cells) == len(boundaries) == len(origin) == len(extents)):
            raise ValueError("extents, cells, boundaries and origin must have the same length")
        for b in boundaries:
            if b not in (WALL, PERIODIC):
                raise ValueError(f"unknown boundary kind {b!r}; expected 'wall' or 'periodic'")
        for e, n, b in zip(extents, cells, boundaries):
            if not e > 0:
                raise ValueError(f"extents must be positive, got {extents}")
            if b == WALL and n < 4:
                raise ValueError(f"a wall-bounded axis needs at least 4 cells, got {n}")
            if b == PERIODIC and n < 2:
                raise ValueError(f"a periodic axis needs at least 2 cells, got {n}")
        if WALL not in boundaries:
            raise ValueError("at least one axis must be a no-slip wall (the domain must be bounded)")

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.extents, self.cells, self.boundaries, self.origin) == (
            other.extents, other.cells, other.boundaries, other.origin)

    def __hash__(self):
        return hash((self.extents, self.cells, self.boundaries, self.origin))

    # -- geometry ---------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def h(self) -> tuple:
        return tuple(e / n for e, n in zip(self.extents, self.cells))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def n_sub(self) -> int:
        """Quadrature points per cell."""
        return 2 ** self.dim

    def is_wall(self, axis: int) -> bool:
        return self.boundaries[axis] == WALL

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.cells[axis]) + 0.5) * self.h[axis]

    def nodes(self, axis: int) -> np.ndarray:
        n = self.cells[axis] + (1 if self.is_wall(axis) else 0)
        return self.origin[axis] + np.arange(n) * self.h[axis]

    def cell_coordinates(self) -> list:
        """Meshgrid (ij indexing) of cell-center coordinates."""
        return np.meshgrid(*[self.cell_centers(a) for a in range(self.dim)], indexing="ij")

    def face_shape(self, comp: int) -> tuple:
        return tuple(n + (1 if (a == comp and self.is_wall(a)) else 0)
                     for a, n in enumerate(self.cells))

    def face_coordinates(self, comp: int) -> list:
        axes = [self.nodes(a) if a == comp else self.cell_centers(a) for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    @cached_property
    def face_offsets(self) -> tuple:
        sizes = [int(np.prod(self.face_shape(c))) for c in range(self.dim)]
        return tuple(int(s) for s in np.concatenate([[0], np.cumsum(sizes)]))

    @property
    def n_faces(self) -> int:
        return self.face_offsets[-1]

    @cached_property
    def boundary_face_mask(self) -> np.ndarray:
        """True for wall-normal faces, where the velocity is pinned to zero."""
        masks = []
        for c in range(self.dim):
            m = np.zeros(self.face_shape(c), dtype=bool)
            if self.is_wall(c):
                sl = [slice(None)] * self.dim
                sl[c] = 0
                m[tuple(sl)] = True
                sl[c] = -1
                m[tuple(sl)] = True
            masks.append(m.ravel())
        return np.concatenate(masks)

    @cached_property
    def dofs(self) -> np.ndarray:
        """Indices of free velocity unknowns in the flat face vector."""
        return np.flatnonzero(~self.boundary_face_mask)

    @property
    def wall_distance_scale(self) -> float:
        """Half the smallest wall-to-wall extent."""
        return 0.5 * min(e for e, b in zip(self.extents, self.boundaries) if b == WALL)

    # -- sparse operators (cached per grid) -----------------------------------

    def _flat(self, comp: int, idx: Sequence[np.ndarray]) -> np.ndarray:
        shape = self.face_shape(comp)
        idx = [np.mod(i, shape[a]) if not self.is_wall(a) else i for a, i in enumerate(idx)]
        return np.ravel_multi_index(tuple(idx), shape) + self.face_offsets[comp]

    def _cell_indices(self) -> np.ndarray:
        return np.indices(self.cells).reshape(self.dim, -1)

    @cached_property
    def components(self) -> tuple:
        """Stored strain components: diagonal first, then the upper triangle."""
        d = self.dim
        return tuple((i, i) for i in range(d)) + tuple(itertools.combinations(range(d), 2))

    @cached_property
    def component_weights(self) -> np.ndarray:
        """Multiplicity of each stored component in the double sum over i, j."""
        return np.array([1.0 if i == j else 2.0 for i, j in self.components])

    @cached_property
    def corners(self) -> tuple:
        return tuple(itertools.product((0, 1), repeat=self.dim))

    def _edge_derivative(self, comp, axis, idx):
        """Entries of d(v_comp)/d(x_axis) at edges.

        ``idx[axis]`` holds the node index along ``axis``; the other entries
        are face indices of ``comp`` (unwrapped).  Returns (mask, cols, vals)
        triples to be summed.
        """
        h = self.h[axis]
        n = self.cells[axis]
        k = idx[axis]
        out = []
        if not self.is_wall(axis):
            for shift, coef in ((0, 1.0 / h), (-1, -1.0 / h)):
                j = list(idx)
                j[axis] = k + shift
                out.append((np.ones(k.shape, bool), j, np.full(k.shape, coef)))
            return out
        upper = list(idx)
        upper[axis] = np.minimum(k, n - 1)
        lower = list(idx)
        lower[axis] = np.maximum(k - 1, 0)
        up_val = np.where(k == 0, 2.0 / h, 1.0 / h)
        lo_val = np.where(k == n, -2.0 / h, -1.0 / h)
        out.append((k < n, upper, up_val))
        out.append((k > 0, lower, lo_val))
        return out

    @cached_property
    def strain_operators(self) -> tuple:
        """One sparse (n_quad x n_faces) matrix per stored strain component.

        Quadrature points are ordered corner-major: ``q = corner * n_cells + cell``.
        """
        d = self.dim
        c = self._cell_indices()
        nc = self.n_cells
        nq = nc * self.n_sub
        mats = []
        for i, j in self.components:
            rows, cols, vals = [], [], []
            for s_idx, s in enumerate(self.corners):
                q = s_idx * nc + np.arange(nc)
                if i == j:
                    lo = [c[a] for a in range(d)]
                    hi = [c[a] + (1 if a == i else 0) for a in range(d)]
                    for idx, coef in ((lo, -1.0), (hi, 1.0)):
                        rows.append(q)
                        cols.append(self._flat(i, idx))
                        vals.append(np.full(nc, coef / self.h[i]))
                    continue
                node = [c[a] + (s[a] if a in (i, j) else 0) for a in range(d)]
                # 0.5 * dv_i/dx_j + 0.5 * dv_j/dx_i at the edge nearest to corner s
                for comp, axis in ((i, j), (j, i)):
                    for mask, idx, v in self._edge_derivative(comp, axis, node):
                        keep = mask.copy()
                        if self.is_wall(comp):
                            keep &= (idx[comp] >= 0) & (idx[comp] <= self.cells[comp])
                        rows.append(q[keep])
                        cols.append(self._flat(comp, [a[keep] for a in idx]))
                        vals.append(0.5 * v[keep])
            m = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(nq, self.n_faces))
            m.sum_duplicates()
            mats.append(m)
        return tuple(mats)

    @cached_property
    def divergence_operator(self) -> sp.csr_matrix:
        c = self._cell_indices()
        rows, cols, vals = [], [], []
        cell = np.arange(self.n_cells)
        for i in range(self.dim):
            hi = [c[a] + (1 if a == i else 0) for a in range(self.dim)]
            for idx, coef in ((list(c), -1.0), (hi, 1.0)):
                rows.append(cell)
                cols.append(self._flat(i, idx))
                vals.append(np.full(self.n_cells, coef / self.h[i]))
        m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n_cells, self.n_faces))
        m.sum_duplicates()
        return m

    @cached_property
    def divergence_dofs(self) -> sp.csr_matrix:
        return self.divergence_operator[:, self.dofs].tocsr()

    @cached_property
    def _poisson_lu(self):
        D = self.divergence_dofs
        lap = (D @ D.T).tocsc()
        # constants span the null space; pin the first cell
        keep = np.arange(1, self.n_cells)
        return spla.splu(lap[keep][:, keep].tocsc())

    def solve_poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``D D^T phi = rhs`` for mean-free ``rhs``; returns mean-free phi."""
        phi = np.zeros(self.n_cells)
        phi[1:] = self._poisson_lu.solve(np.asarray(rhs, float)[1:])
        return phi - phi.mean()

    def _face_multi_index(self, comp):
        return np.indices(self.face_shape(comp)).reshape(self.dim, -1)

    @cached_property
    def convection_operators(self) -> tuple:
        """Per axis i: (interpolation of a_i to every face, central d/dx_i of each component).

        Both are (n_faces x n_faces); rows of wall-normal faces are empty.
        """
        d = self.dim
        bmask = self.boundary_face_mask
        ops = []
        for i in range(d):
            ir, ic, iv = [], [], []
            dr, dc, dv = [], [], []
            for j in range(d):
                m = self._face_multi_index(j)
                rows = self._flat(j, m)
                live = ~bmask[rows]
                m = m[:, live]
                rows = rows[live]
                # advecting velocity a_i at faces of component j
                if i == j:
                    ir.append(rows)
                    ic.append(rows)
                    iv.append(np.ones(rows.size))
                else:
                    for dj in (-1, 0):
                        for di in (0, 1):
                            idx = [m[a] + (dj if a == j else 0) + (di if a == i else 0) for a in range(d)]
                            ir.append(rows)
                            ic.append(self._flat(i, idx))
                            iv.append(np.full(rows.size, 0.25))
                # central difference of b_j along i
                h = self.h[i]
                n_i = self.face_shape(j)[i]
                for shift, coef in ((1, 0.5 / h), (-1, -0.5 / h)):
                    idx = [m[a] + (shift if a == i else 0) for a in range(d)]
                    if i != j and self.is_wall(i):
                        outside = (idx[i] < 0) | (idx[i] >= n_i)
                        # reflection ghost: b(outside) = -b(self)
                        idx[i] = np.where(outside, m[i], idx[i])
                        vals = np.where(outside, -coef, coef)
                    else:
                        vals = np.full(rows.size, coef)
                    dr.append(rows)
                    dc.append(self._flat(j, idx))
                    dv.append(vals)
            shape = (self.n_faces, self.n_faces)
            interp = sp.csr_matrix((np.concatenate(iv), (np.concatenate(ir), np.concatenate(ic))), shape=shape)
            diff = sp.csr_matrix((np.concatenate(dv), (np.concatenate(dr), np.concatenate(dc))), shape=shape)
            interp.sum_duplicates()
            diff.sum_duplicates()
            ops.append((interp, diff))
        return tuple(ops)

    def qp_cell_index(self) -> np.ndarray:
        """Cell (flat) owning each quadrature point."""
        return np.tile(np.arange(self.n_cells), self.n_sub)

    def expand_to_qp(self, cell_values: np.ndarray) -> np.ndarray:
        """Broadcast a cellwise array to quadrature points (flat, corner-major)."""
        return np.tile(np.asarray(cell_values, float).ravel(), self.n_sub)


# -- fields -----------------------------------------------------------------


@dataclass(eq=False)
class VelocityField:
    """Face-centered velocity; ``components[i]`` has shape ``grid.face_shape(i)``."""

    grid: Grid
    components: tuple

    def __post_init__(self):
        comps = tuple(np.array(c, dtype=float) for c in self.components)
        if len(comps) != self.grid.dim:
            raise ValueError(f"expected {self.grid.dim} components, got {len(comps)}")
        for i, c in enumerate(comps):
            if c.shape != self.grid.face_shape(i):
                raise ValueError(f"component {i} has shape {c.shape}, expected {self.grid.face_shape(i)}")
        self.components = comps
        if np.any(self.flat[self.grid.boundary_face_mask] != 0.0):
            raise ValueError("velocity must vanish on no-slip boundary faces")

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        return cls(grid, tuple(np.zeros(grid.face_shape(i)) for i in range(grid.dim)))

    @classmethod
    def from_flat(cls, grid: Grid, flat: np.ndarray) -> "VelocityField":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (grid.n_faces,):
            raise ValueError(f"flat vector must have length {grid.n_faces}")
        o = grid.face_offsets
        return cls(grid, tuple(flat[o[i]:o[i + 1]].reshape(grid.face_shape(i)) for i in range(grid.dim)))

    @classmethod
    def from_dofs(cls, grid: Grid, values: np.ndarray) -> "VelocityField":
        flat = np.zeros(grid.n_faces)
        flat[grid.dofs] = values
        return cls.from_flat(grid, flat)

    @classmethod
    def from_function(cls, grid: Grid, funcs: Sequence[Callable]) -> "VelocityField":
        """Sample ``funcs[i](*coords)`` at the faces of component i.

        Wall-normal boundary faces are set to zero.
        """
        comps = []
        for i, f in enumerate(funcs):
            coords = grid.face_coordinates(i)
            comps.append(np.broadcast_to(np.asarray(f(*coords), float), coords[0].shape).copy())
        flat = np.concatenate([c.ravel() for c in comps])
        flat[grid.boundary_face_mask] = 0.0
        return cls.from_flat(grid, flat)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.components])

    @property
    def dof_values(self) -> np.ndarray:
        return self.flat[self.grid.dofs]

    def cell_centered(self) -> np.ndarray:
        """Velocity averaged to cell centers, shape ``(dim, *cells)``."""
        out = []
        for i, c in enumerate(self.components):
            if self.grid.is_wall(i):
                lo = np.take(c, np.arange(self.grid.cells[i]), axis=i)
                hi = np.take(c, np.arange(1, self.grid.cells[i] + 1), axis=i)
            else:
                lo = c
                hi = np.roll(c, -1, axis=i)
            out.append(0.5 * (lo + hi))
        return np.stack(out)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.flat))) if self.grid.n_faces else 0.0

    def _check(self, other):
        if not isinstance(other, VelocityField):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return other

    def __add__(self, other):
        other = self._check(other)
        return VelocityField.from_flat(self.grid, self.flat + other.flat)

    def __sub__(self, other):
        other = self._check(other)
        return VelocityField.from_flat(self.grid, self.flat - other.flat)

    def __mul__(self, t):
        return VelocityField.from_flat(self.grid, float(t) * self.flat)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __truediv__(self, t):
        return self * (1.0 / float(t))


def forcing_field(grid: Grid, funcs: Sequence[Callable]) -> VelocityField:
    """Body force sampled on faces (wall-normal faces carry no work and are zeroed)."""
    return VelocityField.from_function(grid, funcs)


@dataclass(eq=False)
class PressureField:
    """Cell-centered pressure, gauge-fixed to zero mean on construction."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        self.values = v - v.mean()

    @classmethod
    def zeros(cls, grid: Grid) -> "PressureField":
        return cls(grid, np.zeros(grid.shape))


@dataclass(eq=False)
class TensorField:
    """Symmetric tensor at quadrature points.

    ``data`` has shape ``(n_components, n_sub, *cells)`` with components
    ordered as ``grid.components`` (diagonal, then upper triangle).
    """

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        g = self.grid
        self.data = np.asarray(self.data, dtype=float).reshape((len(g.components), g.n_sub) + g.shape)

    def component(self, i: int, j: int) -> np.ndarray:
        """Quadrature values of entry (i, j); symmetric by storage."""
        key = (min(i, j), max(i, j))
        return self.data[self.grid.components.index(key)]

    def cell_values(self) -> np.ndarray:
        """Cell-centered tensor: quadrature average, shape ``(n_components, *cells)``."""
        return self.data.mean(axis=1)

    def cell_matrix(self, index: tuple) -> np.ndarray:
        """Full symmetric d x d matrix at one cell (cell-centered values)."""
        d = self.grid.dim
        vals = self.cell_values()[(slice(None),) + tuple(index)]
        out = np.zeros((d, d))
        for k, (i, j) in enumerate(self.grid.components):
            out[i, j] = out[j, i] = vals[k]
        return out

    def qp_flat(self) -> np.ndarray:
        """Component-major array of shape ``(n_components, n_quad)``."""
        return self.data.reshape(len(self.grid.components), -1)

    def __mul__(self, scale):
        scale = np.asarray(scale, float)
        if scale.ndim:
            scale = scale.reshape((self.grid.n_sub,) + self.grid.shape)
        return TensorField(self.grid, self.data * scale)

    __rmul__ = __mul__


# -- operations -------------------------------------------------------------


def _tensor_from_qp(grid: Grid, qp: np.ndarray) -> TensorField:
    return TensorField(grid, qp.reshape((len(grid.components), grid.n_sub) + grid.shape))


def strain_rate(v: VelocityField) -> TensorField:
    """Symmetric velocity gradient ``E_ij = (dv_i/dx_j + dv_j/dx_i) / 2``."""
    g = v.grid
    flat = v.flat
    return _tensor_from_qp(g, np.stack([S @ flat for S in g.strain_operators]))


def second_invariant(E: TensorField) -> np.ndarray:
    """Pointwise ``|E| = sqrt(sum_ij E_ij**2)``; shape ``(n_sub, *cells)``.

    Off-diagonal entries are counted twice (full double sum).
    """
    w = E.grid.component_weights.reshape((-1,) + (1,) * (E.data.ndim - 1))
    return np.sqrt(np.sum(w * E.data ** 2, axis=0))


def divergence(v: VelocityField) -> np.ndarray:
    """Cell-centered flux divergence, shape ``grid.shape``."""
    return (v.grid.divergence_operator @ v.flat).reshape(v.grid.shape)


def _qp_weights(grid: Grid, where=None) -> np.ndarray:
    w = np.full(grid.n_cells * grid.n_sub, grid.cell_volume / grid.n_sub)
    if where is not None:
        w = w * grid.expand_to_qp(np.asarray(where, dtype=bool).reshape(grid.shape))
    return w


def integrate(grid: Grid, qp_values: np.ndarray, where=None) -> float:
    """Midpoint quadrature over the corner sub-cells of every (selected) cell."""
    return float(np.dot(_qp_weights(grid, where), np.asarray(qp_values, float).ravel()))


def _same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def double_dot(E: TensorField, F: TensorField) -> np.ndarray:
    """Pointwise ``E:F`` at quadrature points, shape ``(n_sub, *cells)``."""
    _same_grid(E, F)
    w = E.grid.component_weights.reshape((-1,) + (1,) * (E.data.ndim - 1))
    return np.sum(w * E.data * F.data, axis=0)


def inner_V(v: VelocityField, w: VelocityField, where=None) -> float:
    """Energy inner product ``int E(v):E(w) dx``."""
    _same_grid(v, w)
    return integrate(v.grid, double_dot(strain_rate(v), strain_rate(w)), where)


def norm_V(v: VelocityField) -> float:
    return float(np.sqrt(max(inner_V(v, v), 0.0)))


def inner_L2(a: VelocityField, b: VelocityField) -> float:
    """Face quadrature ``sum_faces |cell| a.b``."""
    _same_grid(a, b)
    return float(a.grid.cell_volume * np.dot(a.flat, b.flat))


def norm_L2(a: VelocityField) -> float:
    return float(np.sqrt(inner_L2(a, a)))


def project_divergence_free(v: VelocityField) -> VelocityField:
    """L2-orthogonal projection onto discretely divergence-free fields."""
    g = v.grid
    D = g.divergence_dofs
    x = v.dof_values
    phi = g.solve_poisson(D @ x)
    return VelocityField.from_dofs(g, x - D.T @ phi)


def random_field(grid: Grid, rng: np.random.Generator, solenoidal: bool = True) -> VelocityField:
    """Random wall-vanishing field, optionally projected to be divergence-free."""
    v = VelocityField.from_dofs(grid, rng.standard_normal(grid.dofs.size))
    return project_divergence_free(v) if solenoidal else v


def stiffness_matrix(grid: Grid, qp_coeff=None) -> sp.csr_matrix:
    """Matrix of ``sum_q w_q c_q E(v):E(w)`` on the full face vector."""
    w = _qp_weights(grid)
    if qp_coeff is not None:
        w = w * np.asarray(qp_coeff, float).ravel()
    mats = [cw * (S.T @ sp.diags(w) @ S) for cw, S in zip(grid.component_weights, grid.strain_operators)]
    return sum(mats[1:], mats[0]).tocsr()


@dataclass
class EmbeddingEstimate:
    value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _stokes_kkt(grid: Grid, A: sp.spmatrix) -> sp.csc_matrix:
    """Saddle-point matrix on (velocity dofs, pressure without the pinned cell)."""
    dofs = grid.dofs
    Ad = A[dofs][:, dofs]
    Dd = grid.divergence_dofs[1:]
    return sp.bmat([[Ad, -Dd.T], [-Dd, None]], format="csc")


def estimate_embedding_constant(grid: Grid, seed: int = 0, max_iter: int = 1000,
                                tol: float = 1e-12, return_info: bool = False):
    """Largest ratio ``||v||_L2 / ||v||_V`` over discretely divergence-free v.

    Power iteration on the Stokes solution operator (unit viscosity), which
    is self-adjoint in L2 on the divergence-free subspace; its top
    eigenvalue is ``C_h**2``.  Emits a ``ConvergenceWarning`` and returns the
    last Rayleigh quotient when ``max_iter`` is reached.
    """
    K = stiffness_matrix(grid)
    lu = spla.splu(_stokes_kkt(grid, K))
    nd = grid.dofs.size
    vol = grid.cell_volume

    def apply(x):
        rhs = np.concatenate([vol * x, np.zeros(grid.n_cells - 1)])
        return lu.solve(rhs)[:nd]

    rng = np.random.default_rng(seed)
    x = random_field(grid, rng).dof_values
    x /= np.linalg.norm(x)
    lam_old = 0.0
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y = apply(x)
        lam = float(np.dot(x, y))
        history.append(lam)
        x = y / np.linalg.norm(y)
        if abs(lam - lam_old) <= tol * abs(lam):
            converged = True
            break
        lam_old = lam
    if not converged:
        warnings.warn(f"embedding-constant power iteration did not converge in {max_iter} steps",
                      ConvergenceWarning)
    est = EmbeddingEstimate(float(np.sqrt(lam)), it, converged, [float(np.sqrt(h)) for h in history])
    return est if return_info else est.value
