"""Run configuration: defaults, validation, and object construction.

A run is described by one YAML file with five blocks (integrand, cell,
gamma, tabulate, output) plus a seed.  Loading deep-merges the user file
over the package defaults and rejects unknown keys by their dotted path,
so typos surface as diagnostics instead of silently running defaults.
The fully resolved mapping (every defaulted field filled in) is what
reports embed as provenance.

Loads and heterogeneities may be given as restricted closed-form
expression strings in (x1, x2, x3); surface loads are evaluated on
their face (x3 = +1 on top, -1 on bottom).
"""

from __future__ import annotations

import copy

import numpy as np
import yaml

from .expr import compile_vector
from .field import CellMesh
from .integrand import MaterialPoint, density_from_config
from .cell import CellProblemSpec, InnerConfig, LSearchConfig
from .thinfilm import LoadSystem, SheetMesh, ThinFilmProblem
from .tabulate import SampleGrid

__all__ = [
    "ConfigError", "DEFAULTS", "load_config", "resolve_config",
    "build_density", "build_cell_spec", "build_loads", "build_problem",
    "build_grid",
]


class ConfigError(ValueError):
    """Malformed run configuration; the message names the offending key."""


# Opaque subtrees are validated by their consumers (families differ in
# their parameter sets), so the merge accepts arbitrary keys below them.
_OPAQUE = object()

DEFAULTS = {
    "seed": 0,
    "integrand": {
        "family": "pnorm",
        "params": _OPAQUE,
        "modulation": _OPAQUE,
        "growth": _OPAQUE,
        "domain": [0.0, 0.0, 1.0, 1.0],
        "base": _OPAQUE,
    },
    "cell": {
        "x0": [0.5, 0.5],
        "x3": 0.0,
        "fbar": [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        "z": [0.0, 0.0, 0.0],
        "F": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        "form": "zero",
        "mesh": {"n1": 4, "n2": 4, "n3": 4},
        "l_search": {"l_min": 1e-2, "l_max": 1e2, "grid_count": 17,
                     "golden_tol": 0.02},
        "inner": {"max_iter": 500, "grad_tol": 1e-8, "multistart": 3,
                  "perturb_scale": 0.1},
        "tol": 1e-8,
    },
    "gamma": {
        "omega": {"origin": [0.0, 0.0], "lengths": [1.0, 1.0], "n1": 8, "n2": 8},
        "n3": 8,
        "fbar_bc": [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
        "epsilons": [1.0, 0.5, 0.25, 0.125],
        "loads": {"f": None, "g_top": None, "g_bottom": None,
                  "g0_top": None, "g0_bottom": None},
        "source": "cell",
        "table_path": None,
        "limit_grad_tol": 1e-10,
    },
    "tabulate": {
        "kind": "cosserat",
        "x_points": [[0.5, 0.5]],
        "f_axes": [["range", -1.0, 1.0, 3], ["frozen", 0.0], ["frozen", 0.0],
                   ["frozen", 0.0], ["frozen", 0.0], ["frozen", 0.0]],
        "z_axes": [["frozen", 0.0], ["frozen", 0.0], ["range", -1.0, 1.0, 3]],
        "node_limit": None,
        "resume": None,
        "path": "density_table.fct",
    },
    "output": {
        "dir": "out",
        "report": None,
    },
    "check": {
        "names": None,
    },
}


def _merge(defaults, user, path):
    if defaults is _OPAQUE:
        return copy.deepcopy(user)
    if isinstance(defaults, dict):
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"config key '{path}' must be a mapping")
        out = {}
        for key, dval in defaults.items():
            sub = f"{path}.{key}" if path else key
            if key in user:
                out[key] = _merge(dval, user[key], sub)
            elif dval is _OPAQUE:
                continue
            elif isinstance(dval, dict):
                out[key] = _merge(dval, {}, sub)
            else:
                out[key] = copy.deepcopy(dval)
        for key in user:
            if key not in defaults:
                sub = f"{path}.{key}" if path else key
                raise ConfigError(f"unknown config key '{sub}'")
        return out
    return copy.deepcopy(user)


def resolve_config(user: dict | None) -> dict:
    """Deep-merge a user mapping over the defaults; reject unknown keys."""
    user = {} if user is None else user
    if not isinstance(user, dict):
        raise ConfigError("top-level config must be a mapping")
    resolved = _merge(DEFAULTS, user, "")
    seed = resolved["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not (
            0 <= seed < 2 ** 64):
        raise ConfigError("config key 'seed' must be an integer in [0, 2^64)")
    return resolved


def load_config(path) -> dict:
    """Read a YAML run configuration and resolve it against the defaults."""
    try:
        with open(path) as fh:
            user = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if user is not None and not isinstance(user, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return resolve_config(user)


def _need(block, key, kind, path):
    val = block[key]
    if kind == "number":
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"config key '{path}' must be a number")
        return float(val)
    if kind == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"config key '{path}' must be an integer")
        return val
    raise AssertionError(kind)


def _matrix(val, shape, path):
    try:
        arr = np.asarray(val, dtype=float)
        return arr.reshape(shape)
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            f"config key '{path}' must be a {shape} array: {exc}") from exc


def build_density(resolved: dict):
    try:
        return density_from_config(resolved["integrand"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config block 'integrand' is invalid: {exc}") from exc


def build_cell_spec(resolved: dict, with_z=False) -> CellProblemSpec:
    cc = resolved["cell"]
    mesh_cfg = cc["mesh"]
    mesh = CellMesh(_need(mesh_cfg, "n1", "int", "cell.mesh.n1"),
                    _need(mesh_cfg, "n2", "int", "cell.mesh.n2"),
                    _need(mesh_cfg, "n3", "int", "cell.mesh.n3"))
    ls_cfg = cc["l_search"]
    try:
        l_search = LSearchConfig(
            l_min=_need(ls_cfg, "l_min", "number", "cell.l_search.l_min"),
            l_max=_need(ls_cfg, "l_max", "number", "cell.l_search.l_max"),
            grid_count=_need(ls_cfg, "grid_count", "int",
                             "cell.l_search.grid_count"),
            golden_tol=_need(ls_cfg, "golden_tol", "number",
                             "cell.l_search.golden_tol"))
    except ValueError as exc:
        raise ConfigError(f"config block 'cell.l_search' is invalid: {exc}") from exc
    ic = cc["inner"]
    inner = InnerConfig(
        max_iter=_need(ic, "max_iter", "int", "cell.inner.max_iter"),
        grad_tol=_need(ic, "grad_tol", "number", "cell.inner.grad_tol"),
        multistart=_need(ic, "multistart", "int", "cell.inner.multistart"),
        perturb_scale=_need(ic, "perturb_scale", "number",
                            "cell.inner.perturb_scale"),
        seed=resolved["seed"] % (2 ** 32))
    x0 = cc["x0"]
    if not (isinstance(x0, (list, tuple)) and len(x0) == 2):
        raise ConfigError("config key 'cell.x0' must be a pair [x1, x2]")
    return CellProblemSpec(
        fbar=_matrix(cc["fbar"], (3, 2), "cell.fbar"),
        x0=MaterialPoint((float(x0[0]), float(x0[1])),
                         _need(cc, "x3", "number", "cell.x3")),
        z=_matrix(cc["z"], (3,), "cell.z") if with_z else None,
        mesh=mesh, l_search=l_search, inner=inner,
        tol=_need(cc, "tol", "number", "cell.tol"))


def _load_entry(val, path, face_x3=None):
    """None, a constant 3-vector, or three expression strings."""
    if val is None:
        return None
    if not (isinstance(val, (list, tuple)) and len(val) == 3):
        raise ConfigError(
            f"config key '{path}' must be null or a 3-component list")
    if any(isinstance(c, str) for c in val):
        try:
            fn = compile_vector([str(c) for c in val])
        except ValueError as exc:
            raise ConfigError(f"config key '{path}': {exc}") from exc
        if face_x3 is None:
            return lambda x1, x2, x3: fn(x1, x2, x3)
        return lambda x1, x2: fn(x1, x2, np.full(np.shape(x1), face_x3))
    try:
        return np.asarray(val, dtype=float).reshape(3)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{path}' must hold numbers: {exc}") from exc


def build_loads(resolved: dict) -> LoadSystem:
    lc = resolved["gamma"]["loads"]
    return LoadSystem(
        f=_load_entry(lc["f"], "gamma.loads.f"),
        g=(_load_entry(lc["g_top"], "gamma.loads.g_top", +1.0),
           _load_entry(lc["g_bottom"], "gamma.loads.g_bottom", -1.0)),
        g0=(_load_entry(lc["g0_top"], "gamma.loads.g0_top", +1.0),
            _load_entry(lc["g0_bottom"], "gamma.loads.g0_bottom", -1.0)))


def build_problem(resolved: dict) -> ThinFilmProblem:
    gc = resolved["gamma"]
    oc = gc["omega"]
    sheet = SheetMesh(_need(oc, "n1", "int", "gamma.omega.n1"),
                      _need(oc, "n2", "int", "gamma.omega.n2"),
                      origin=tuple(oc["origin"]), lengths=tuple(oc["lengths"]))
    cell_spec = build_cell_spec(resolved, with_z=True)
    eps = gc["epsilons"]
    if not (isinstance(eps, (list, tuple)) and eps):
        raise ConfigError("config key 'gamma.epsilons' must be a non-empty list")
    try:
        return ThinFilmProblem(
            W=build_density(resolved),
            omega=sheet,
            fbar_bc=_matrix(gc["fbar_bc"], (3, 2), "gamma.fbar_bc"),
            loads=build_loads(resolved),
            epsilons=tuple(float(e) for e in eps),
            n3=_need(gc, "n3", "int", "gamma.n3"),
            inner=cell_spec.inner,
            limit_inner=InnerConfig(
                grad_tol=_need(gc, "limit_grad_tol", "number",
                               "gamma.limit_grad_tol"),
                seed=resolved["seed"] % (2 ** 32)),
            cell_template=cell_spec)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config block 'gamma' is invalid: {exc}") from exc


def build_grid(resolved: dict) -> SampleGrid:
    tc = resolved["tabulate"]
    try:
        return SampleGrid(
            x_points=tuple(tuple(p) for p in tc["x_points"]),
            f_axes=tuple(tuple(a) for a in tc["f_axes"]),
            z_axes=(None if tc["z_axes"] is None
                    else tuple(tuple(a) for a in tc["z_axes"])))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config block 'tabulate' is invalid: {exc}") from exc
