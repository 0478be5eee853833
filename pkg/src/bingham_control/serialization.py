"""Field files, plot scripts and run manifests.

Floats are written with ``repr`` (shortest round-trip form), so reading a
file back reproduces the arrays bitwise.  Every writer goes through a
temporary file and ``os.replace``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .fields import Grid, VelocityField, second_invariant, strain_rate

AXES = "xyz"
VELOCITY_NAMES = "uvw"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class LockError(RuntimeError):
    pass


@contextmanager
def directory_lock(directory):
    """Exclusive ``.lock`` file for one run per output directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"output directory {directory} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


# -- cell data ------------------------------------------------------------------


def cell_data(velocity: VelocityField, pressure=None, rigid=None) -> dict:
    """Cell-centred arrays: velocity components, pressure, |E| (mean over the cell) and the rigid flag."""
    grid = velocity.grid
    uc = velocity.cell_centered()
    out = {VELOCITY_NAMES[i]: uc[i] for i in range(grid.dim)}
    out["p"] = np.zeros(grid.shape) if pressure is None else np.asarray(pressure, float).reshape(grid.shape)
    out["strain_rate"] = second_invariant(strain_rate(velocity)).mean(axis=0)
    out["rigid"] = np.zeros(grid.shape, int) if rigid is None else np.asarray(rigid).astype(int)
    return out


def csv_columns(dim: int) -> list:
    idx = ["i", "j", "k"][:dim]
    return idx + list(AXES[:dim]) + list(VELOCITY_NAMES[:dim]) + ["p", "strain_rate", "rigid"]


def _fmt(x) -> str:
    return repr(float(x))


def write_cells_csv(path, grid: Grid, data: dict) -> None:
    """One row per cell, C order over the cell indices (last index fastest)."""
    cols = csv_columns(grid.dim)
    coords = grid.cell_coordinates()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for index in np.ndindex(*grid.shape):
        row = [str(i) for i in index]
        row += [_fmt(coords[a][index]) for a in range(grid.dim)]
        row += [_fmt(data[VELOCITY_NAMES[a]][index]) for a in range(grid.dim)]
        row += [_fmt(data["p"][index]), _fmt(data["strain_rate"][index]), str(int(data["rigid"][index]))]
        w.writerow(row)
    atomic_write(path, buf.getvalue())


def read_cells_csv(path, grid: Grid) -> dict:
    cols = csv_columns(grid.dim)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != cols:
        raise ValueError(f"unexpected CSV header {rows[0]}")
    out = {c: np.zeros(grid.shape) for c in cols[2 * grid.dim:]}
    out["rigid"] = np.zeros(grid.shape, int)
    for row in rows[1:]:
        index = tuple(int(v) for v in row[:grid.dim])
        for c, v in zip(cols[2 * grid.dim:], row[2 * grid.dim:]):
            out[c][index] = int(v) if c == "rigid" else float(v)
    return out


def write_faces_csv(path, field: VelocityField) -> None:
    """Raw staggered values: ``component, i, j[, k], value`` per face."""
    grid = field.grid
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component"] + ["i", "j", "k"][:grid.dim] + ["value"])
    for comp, arr in enumerate(field.components):
        for index in np.ndindex(*arr.shape):
            w.writerow([comp] + list(index) + [_fmt(arr[index])])
    atomic_write(path, buf.getvalue())


def read_faces_csv(path, grid: Grid) -> VelocityField:
    comps = [np.zeros(grid.face_shape(i)) for i in range(grid.dim)]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        comp = int(row[0])
        index = tuple(int(v) for v in row[1:1 + grid.dim])
        comps[comp][index] = float(row[-1])
    return VelocityField(grid, tuple(comps))


# -- legacy VTK -------------------------------------------------------------------


def vtk_header(grid: Grid, title: str) -> list:
    n = list(grid.cells) + [1] * (3 - grid.dim)
    origin = list(grid.origin) + [0.0] * (3 - grid.dim)
    spacing = list(grid.h) + [min(grid.h)] * (3 - grid.dim)
    return ["# vtk DataFile Version 3.0",
            title,
            "ASCII",
            "DATASET STRUCTURED_POINTS",
            "DIMENSIONS " + " ".join(str(c + 1) for c in n),
            "ORIGIN " + " ".join(_fmt(o) for o in origin),
            "SPACING " + " ".join(_fmt(s) for s in spacing),
            f"CELL_DATA {grid.n_cells}"]


def write_vtk(path, grid: Grid, data: dict, title: str = "bingham_control fields") -> None:
    """Structured-points file with cell data; x varies fastest as VTK expects."""
    lines = vtk_header(grid, title)

    def order(a):
        return np.asarray(a).transpose().ravel()

    vel = [order(data[VELOCITY_NAMES[a]]) for a in range(grid.dim)]
    vel += [np.zeros(grid.n_cells)] * (3 - grid.dim)
    lines.append("VECTORS velocity double")
    lines += [" ".join(_fmt(c[n]) for c in vel) for n in range(grid.n_cells)]
    for name in ("p", "strain_rate"):
        lines.append(f"SCALARS {'pressure' if name == 'p' else name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [_fmt(x) for x in order(data[name])]
    lines.append("SCALARS rigid int 1")
    lines.append("LOOKUP_TABLE default")
    lines += [str(int(x)) for x in order(data["rigid"])]
    atomic_write(path, "\n".join(lines) + "\n")


# -- gnuplot ----------------------------------------------------------------------


def centerline(velocity: VelocityField):
    """Cell-centred velocity along the first wall axis, through the middle of the other axes."""
    grid = velocity.grid
    axis = next(a for a in range(grid.dim) if grid.is_wall(a))
    uc = velocity.cell_centered()
    index = [n // 2 for n in grid.shape]
    index[axis] = slice(None)
    return axis, grid.cell_centers(axis), uc[(slice(None),) + tuple(index)]


def write_centerline(directory, velocity: VelocityField, stem: str = "centerline") -> None:
    directory = Path(directory)
    axis, coord, u = centerline(velocity)
    names = VELOCITY_NAMES[:velocity.grid.dim]
    rows = [f"# {AXES[axis]} " + " ".join(names)]
    rows += [" ".join([_fmt(coord[n])] + [_fmt(u[c, n]) for c in range(len(names))]) for n in range(coord.size)]
    atomic_write(directory / f"{stem}.dat", "\n".join(rows) + "\n")
    plots = ", ".join(f"'{stem}.dat' using 1:{c + 2} with linespoints title '{names[c]}'" for c in range(len(names)))
    script = ["set terminal pngcairo size 800,600",
              f"set output '{stem}.png'",
              f"set xlabel '{AXES[axis]}'",
              "set ylabel 'velocity'",
              "set grid",
              f"plot {plots}"]
    atomic_write(directory / f"{stem}.gp", "\n".join(script) + "\n")


# -- small tables and manifests ----------------------------------------------------


def write_table_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    atomic_write(path, buf.getvalue())


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    return x


def write_manifest(path, manifest: dict) -> None:
    atomic_write(path, json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
