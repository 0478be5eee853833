"""INI run configuration with line-anchored validation.

Only the sections and keys listed in ``SCHEMA`` are accepted.  Every
error raised while building the problem is a :class:`ConfigError` that
carries the line of the offending key (or section header).
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import AdmissibleSet, ControlBasis, CostFunctional, OptimizerConfig
from .exceptions import ConfigError
from .fields import Grid, VelocityField, forcing_field
from .rheology import FluidModel, ViscosityModel, YieldField, simple_shear_to_tensor
from .viflow import FlowProblem, SolverConfig

SCHEMA = {
    "grid": {"extents", "cells", "boundaries", "origin"},
    "rheology": {"law", "viscosity", "mu", "mu0", "scale", "s_ref", "table_s", "table_mu", "yield_stress",
                 "yield_blocks", "strict_yield", "eps"},
    "force": {"components"},
    "control": {"basis_size", "coefficients"},
    "solver": {"relaxation", "tol_v", "tol_div", "max_iter", "pool_size", "newton_polish", "polish_start",
               "convection"},
    "admissible": {"kind", "radius", "lower", "upper", "candidates"},
    "cost": {"lambda1", "lambda2", "target", "target_coefficients", "u_target_coefficients"},
    "optimizer": {"method", "fd_step", "initial_step", "backtrack", "armijo", "grad_tol", "min_step", "max_iter",
                  "starts"},
    "output": {"directory", "formats"},
}
REQUIRED = {"grid": {"extents", "cells", "boundaries"}, "rheology": {"mu"}, "force": {"components"}}
FORMATS = {"csv", "vtk", "gnuplot"}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _line_map(text: str) -> dict:
    """``{(section, key): line}`` plus ``{(section, None): line}`` for headers."""
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        if line[:1].isspace() and section is not None and not line.strip().startswith(("#", ";")):
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), n)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip().lower()), n)
    return out


@dataclass
class RunConfig:
    """Parsed configuration; ``build_*`` methods validate and construct objects."""

    text: str
    sections: dict
    lines: dict
    source: str = "<string>"
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=source)
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("key outside of any section", exc.lineno) from None
        except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
            raise ConfigError(str(exc).split(":", 1)[-1].strip(), exc.lineno) from None
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise ConfigError("malformed line", lineno) from None
        lines = _line_map(text)
        sections = {}
        for name in parser.sections():
            if name not in SCHEMA:
                raise ConfigError(f"unknown section [{name}]", lines.get((name, None)))
            for key in parser[name]:
                if key not in SCHEMA[name]:
                    raise ConfigError(f"unknown key {key!r} in [{name}]", lines.get((name, key)))
            sections[name] = dict(parser[name])
        for name, keys in REQUIRED.items():
            if name not in sections:
                raise ConfigError(f"missing section [{name}]", None)
            for key in sorted(keys - set(sections[name])):
                raise ConfigError(f"missing key {key!r} in [{name}]", lines.get((name, None)))
        return cls(text, sections, lines, source)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    # -- raw access --

    def has(self, section: str, key: str) -> bool:
        return key in self.sections.get(section, {})

    def line(self, section: str, key: str = None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def raw(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def _error(self, section, key, message):
        return ConfigError(message, self.line(section, key))

    def get_float(self, section, key, default=None) -> float:
        raw = self.raw(section, key)
        if raw is None:
            if default is None:
                raise self._error(section, None, f"missing key {key!r} in [{section}]")
            return float(default)
        try:
            value = float(raw)
        except ValueError:
            raise self._error(section, key, f"{key} must be a number, got {raw!r}") from None
        if not np.isfinite(value):
            raise self._error(section, key, f"{key} must be finite")
        return value

    def get_int(self, section, key, default=None) -> int:
        raw = self.raw(section, key)
        if raw is None:
            if default is None:
                raise self._error(section, None, f"missing key {key!r} in [{section}]")
            return int(default)
        try:
            return int(raw)
        except ValueError:
            raise self._error(section, key, f"{key} must be an integer, got {raw!r}") from None

    def get_bool(self, section, key, default: bool) -> bool:
        raw = self.raw(section, key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise self._error(section, key, f"{key} must be a boolean, got {raw!r}")

    def get_list(self, section, key, conv=float, default=None) -> list:
        raw = self.raw(section, key)
        if raw is None:
            if default is None:
                raise self._error(section, None, f"missing key {key!r} in [{section}]")
            return list(default)
        try:
            return [conv(p.strip()) for p in raw.split(",") if p.strip()]
        except ValueError:
            raise self._error(section, key, f"{key}: cannot parse list {raw!r}") from None

    def get_vectors(self, section, key) -> list:
        """Semicolon-separated list of comma-separated vectors."""
        raw = self.raw(section, key, "")
        try:
            return [np.array([float(x) for x in part.split(",")]) for part in raw.split(";") if part.strip()]
        except ValueError:
            raise self._error(section, key, f"{key}: cannot parse vectors {raw!r}") from None

    def config_hash(self) -> str:
        """SHA-256 of the normalized sections (comments and spacing do not matter)."""
        canon = ";".join(f"[{s}]" + ",".join(f"{k}={' '.join(v.split())}" for k, v in sorted(kv.items()))
                         for s, kv in sorted(self.sections.items()))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- builders --

    def build_grid(self) -> Grid:
        if "grid" in self._cache:
            return self._cache["grid"]
        extents = self.get_list("grid", "extents")
        cells = self.get_list("grid", "cells", int)
        boundaries = self.get_list("grid", "boundaries", str)
        origin = self.get_list("grid", "origin", default=[0.0] * len(extents))
        try:
            grid = Grid(tuple(extents), tuple(cells), tuple(b.lower() for b in boundaries), tuple(origin))
        except ValueError as exc:
            raise self._error("grid", None, f"invalid grid: {exc}") from None
        self._cache["grid"] = grid
        return grid

    def build_model(self) -> FluidModel:
        grid = self.build_grid()
        law = self.raw("rheology", "law", "tensor").strip().lower()
        if law not in ("tensor", "simple_shear"):
            raise self._error("rheology", "law", f"law must be tensor or simple_shear, got {law!r}")
        kind = self.raw("rheology", "viscosity", "constant").strip().lower()
        g = self.get_float("rheology", "yield_stress", 0.0)
        eps = self.get_float("rheology", "eps", 1e-6)
        try:
            if kind == "constant":
                mu = self.get_float("rheology", "mu")
                if mu <= 0:
                    raise ValueError(f"viscosity bounds violated: need 0 < mu0 <= mu(s) <= mu1, got mu0 = {mu}")
                if law == "simple_shear":
                    mu, g = simple_shear_to_tensor(mu, g)
                visc = ViscosityModel.constant(mu)
            elif kind == "arctan":
                if law == "simple_shear":
                    raise ValueError("simple_shear conversion applies to constant viscosity only")
                visc = ViscosityModel.arctan(self.get_float("rheology", "mu0"),
                                             self.get_float("rheology", "scale", 1.0),
                                             self.get_float("rheology", "s_ref", 1.0))
            elif kind == "tabulated":
                if law == "simple_shear":
                    raise ValueError("simple_shear conversion applies to constant viscosity only")
                visc = ViscosityModel.tabulated(self.get_list("rheology", "table_s"),
                                                self.get_list("rheology", "table_mu"))
            else:
                raise ValueError(f"unknown viscosity kind {kind!r}")
        except ValueError as exc:
            key = {"constant": "mu", "arctan": "mu0", "tabulated": "table_mu"}.get(kind, "viscosity")
            raise self._error("rheology", key if self.has("rheology", key) else "viscosity", str(exc)) from None
        strict = self.get_bool("rheology", "strict_yield", False)
        try:
            blocks = []
            for vec in self.get_vectors("rheology", "yield_blocks"):
                if vec.size != 2 * grid.dim + 1:
                    raise ValueError(f"each yield block needs {2 * grid.dim + 1} numbers (lower, upper, value)")
                blocks.append((vec[:grid.dim], vec[grid.dim:2 * grid.dim], vec[-1]))
            yf = YieldField.blocks(grid, g, blocks, strict)
        except ValueError as exc:
            raise self._error("rheology", "yield_blocks" if self.has("rheology", "yield_blocks")
                              else "yield_stress", str(exc)) from None
        try:
            return FluidModel(visc, yf, eps)
        except ValueError as exc:
            raise self._error("rheology", "eps", str(exc)) from None

    def build_solver(self) -> SolverConfig:
        s = "solver"
        d = SolverConfig()
        try:
            return SolverConfig(relaxation=self.get_float(s, "relaxation", d.relaxation),
                                tol_v=self.get_float(s, "tol_v", d.tol_v),
                                tol_div=self.get_float(s, "tol_div", d.tol_div),
                                max_iter=self.get_int(s, "max_iter", d.max_iter),
                                pool_size=self.get_int(s, "pool_size", d.pool_size),
                                seed=self.seed,
                                newton_polish=self.get_bool(s, "newton_polish", d.newton_polish),
                                polish_start=self.get_float(s, "polish_start", d.polish_start))
        except ValueError as exc:
            raise self._error(s, None, str(exc)) from None

    def build_basis(self) -> ControlBasis:
        if "basis" not in self._cache:
            size = self.get_int("control", "basis_size", 4)
            try:
                self._cache["basis"] = ControlBasis.smooth(self.build_grid(), size)
            except ValueError as exc:
                raise self._error("control", "basis_size", str(exc)) from None
        return self._cache["basis"]

    def _coefficients(self, section, key, basis):
        c = np.asarray(self.get_list(section, key), float)
        if c.shape != (basis.size,):
            raise self._error(section, key, f"{key} needs {basis.size} values, got {c.size}")
        return c

    def build_problem(self, with_control: bool = True) -> FlowProblem:
        grid = self.build_grid()
        model = self.build_model()
        comps = self.get_list("force", "components")
        if len(comps) != grid.dim:
            raise self._error("force", "components", f"force needs {grid.dim} components, got {len(comps)}")
        force = forcing_field(grid, [lambda *x, c=c: np.full_like(x[0], c) for c in comps])
        control = None
        if with_control and self.has("control", "coefficients"):
            basis = self.build_basis()
            control = basis.field(self._coefficients("control", "coefficients", basis))
        convection = self.get_bool("solver", "convection", True)
        return FlowProblem(model, force, control, convection)

    def build_admissible(self) -> AdmissibleSet:
        if "admissible" not in self.sections:
            raise ConfigError("missing section [admissible]", None)
        kind = self.raw("admissible", "kind", "ball").strip().lower()
        basis = self.build_basis()
        try:
            if kind == "ball":
                return AdmissibleSet.ball(self.get_float("admissible", "radius"))
            if kind == "box":
                lo = self.get_list("admissible", "lower")
                hi = self.get_list("admissible", "upper")
                lo = lo * basis.size if len(lo) == 1 else lo
                hi = hi * basis.size if len(hi) == 1 else hi
                if len(lo) != basis.size or len(hi) != basis.size:
                    raise ValueError(f"box bounds need 1 or {basis.size} values")
                return AdmissibleSet.box(np.array(lo), np.array(hi))
            if kind == "list":
                cands = self.get_vectors("admissible", "candidates")
                if any(c.size != basis.size for c in cands):
                    raise ValueError(f"every candidate needs {basis.size} coefficients")
                return AdmissibleSet.finite(cands)
            raise ValueError(f"unknown admissible set kind {kind!r}")
        except ValueError as exc:
            key = {"ball": "radius", "box": "lower", "list": "candidates"}.get(kind, "kind")
            raise self._error("admissible", key if self.has("admissible", key) else "kind", str(exc)) from None

    def build_cost(self, problem: FlowProblem, solve):
        """Cost functional; ``solve(problem)`` produces the twin target velocity."""
        if "cost" not in self.sections:
            raise ConfigError("missing section [cost]", None)
        basis = self.build_basis()
        grid = problem.grid
        target = self.raw("cost", "target", "zero").strip().lower()
        u_target = VelocityField.zeros(grid)
        if target == "twin":
            c_star = self._coefficients("cost", "target_coefficients", basis)
            u_target = basis.field(c_star)
            v_target = solve(problem.with_control(u_target)).velocity
        elif target == "zero":
            v_target = VelocityField.zeros(grid)
        else:
            raise self._error("cost", "target", f"target must be twin or zero, got {target!r}")
        if self.has("cost", "u_target_coefficients"):
            u_target = basis.field(self._coefficients("cost", "u_target_coefficients", basis))
        try:
            return CostFunctional(self.get_float("cost", "lambda1", 1.0), self.get_float("cost", "lambda2", 0.0),
                                  v_target, u_target)
        except ValueError as exc:
            raise self._error("cost", "lambda1", str(exc)) from None

    def build_optimizer(self) -> OptimizerConfig:
        s = "optimizer"
        d = OptimizerConfig()
        try:
            return OptimizerConfig(fd_step=self.get_float(s, "fd_step", d.fd_step),
                                   initial_step=self.get_float(s, "initial_step", d.initial_step),
                                   backtrack=self.get_float(s, "backtrack", d.backtrack),
                                   armijo=self.get_float(s, "armijo", d.armijo),
                                   grad_tol=self.get_float(s, "grad_tol", d.grad_tol),
                                   min_step=self.get_float(s, "min_step", d.min_step),
                                   max_iter=self.get_int(s, "max_iter", d.max_iter),
                                   starts=tuple(self.get_list(s, "starts", str, d.starts)),
                                   seed=self.seed)
        except ValueError as exc:
            raise self._error(s, None, str(exc)) from None

    def optimizer_method(self) -> str:
        method = self.raw("optimizer", "method", "projected-gradient").strip().lower()
        if method not in ("projected-gradient", "nelder-mead"):
            raise self._error("optimizer", "method", f"unknown optimizer method {method!r}")
        return method

    def output_formats(self) -> set:
        formats = set(self.get_list("output", "formats", str, sorted(FORMATS)))
        bad = formats - FORMATS
        if bad:
            raise self._error("output", "formats", f"unknown output formats {sorted(bad)}")
        return formats
