"""Scaled thin-film energies and the thickness-convergence harness.

The rescaled film occupies the fixed cylinder Omega = omega x (-1, 1);
the thickness eps survives only inside the scaled energy

    E_eps(u) = Int_Omega W(x; D_alpha u | (1/eps) D_3 u) dx
             - Int_Omega f . u - Int_Sigma (g + g0 / eps) . u,

with Sigma = omega x {-1, 1} and the order-1 surface load satisfying
g0(+) + g0(-) = 0, so its contribution rewrites as a bending-moment term
2 Int_omega g0(+) . bbar_eps with the scaled transverse average
bbar_eps = (u(+) - u(-)) / (2 eps).

The candidate limit is the membrane functional

    J(v, bbar) = 2 Int_omega Q(x_alpha; D_alpha v | bbar) dx_alpha
               - Int_omega (2 fbar + g(+) + g(-)) . v
               - 2 Int_omega g0(+) . bbar,

where Q is the transverse-vector effective density from the cell module
(or a precomputed table) and fbar is the transverse average of f.  The
convergence study minimizes E_eps for a decreasing thickness list under
a lateral affine clamp, minimizes J over (v, bbar) with v pinned to the
same affine datum on the boundary, and reports relative gaps.

Density values reach the 2D assembly through a small source interface
(value plus derivatives w.r.t. the membrane block and the transverse
vector); cell-solver sources cache by exact argument bytes, so uniform
fields cost one cell solve per descent iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .integrand import (
    MaterialPoint, StoredEnergyDensity, modulation_in_plane_constant,
)
from .field import (
    CellMesh, DiscreteField, EnergyContext, LATERAL_AFFINE,
    affine_values, pack, unpack, reduce_gradient, transverse_average,
    _assembly, _reference_rule,
)
from .solvers import SolverConfig, minimize_lbfgs, multistart_minimize
from .cell import CellProblemSpec, InnerConfig, cosserat_density

__all__ = [
    "SheetMesh", "LoadSystem", "ThinFilmProblem", "ConvergenceReport",
    "CellDensitySource", "TableDensitySource",
    "scaled_energy", "minimize_thin_film", "sheet_affine_values", "bbar_at",
    "limit_membrane_energy", "minimize_limit", "convergence_study",
]

# 2D corner c <-> bit pair (ci, cj)
_CORNERS2 = [(c >> 1 & 1, c & 1) for c in range(4)]

_ASSEMBLY2_CACHE: dict = {}


def _assembly2(quadrature="gauss2"):
    """Bilinear shape values/derivatives at 2D quadrature points (cached)."""
    if quadrature in _ASSEMBLY2_CACHE:
        return _ASSEMBLY2_CACHE[quadrature]
    t, w = _reference_rule(quadrature)
    npt = t.size
    nq = npt ** 2
    xi = np.empty((nq, 2))
    wq = np.empty(nq)
    q = 0
    for a in range(npt):
        for b in range(npt):
            xi[q] = (t[a], t[b])
            wq[q] = w[a] * w[b]
            q += 1
    shp = np.empty((nq, 4))
    dshp = np.empty((nq, 4, 2))
    for c, (bi, bj) in enumerate(_CORNERS2):
        l1 = np.where(bi, xi[:, 0], 1.0 - xi[:, 0])
        l2 = np.where(bj, xi[:, 1], 1.0 - xi[:, 1])
        shp[:, c] = l1 * l2
        dshp[:, c, 0] = np.where(bi, 1.0, -1.0) * l2
        dshp[:, c, 1] = l1 * np.where(bj, 1.0, -1.0)
    out = {"xi": xi, "wq": wq, "shape": shp, "dshape": dshp}
    _ASSEMBLY2_CACHE[quadrature] = out
    return out


@dataclass(frozen=True)
class SheetMesh:
    """Structured bilinear mesh of the mid-surface rectangle omega."""

    n1: int
    n2: int
    origin: tuple = (0.0, 0.0)
    lengths: tuple = (1.0, 1.0)

    def __post_init__(self):
        if min(self.n1, self.n2) < 1:
            raise ValueError("need n1, n2 >= 1")
        if self.lengths[0] <= 0 or self.lengths[1] <= 0:
            raise ValueError("in-plane lengths must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))

    @property
    def spacings(self):
        return (self.lengths[0] / self.n1, self.lengths[1] / self.n2)

    @property
    def area(self):
        return self.lengths[0] * self.lengths[1]

    @property
    def node_shape(self):
        return (self.n1 + 1, self.n2 + 1)

    def node_coords(self):
        h1, h2 = self.spacings
        x1 = self.origin[0] + h1 * np.arange(self.n1 + 1)
        x2 = self.origin[1] + h2 * np.arange(self.n2 + 1)
        return x1, x2

    def quad_coords(self):
        asm = _assembly2()
        xi = asm["xi"]
        h1, h2 = self.spacings
        i = np.arange(self.n1)[:, None, None]
        j = np.arange(self.n2)[None, :, None]
        q1 = self.origin[0] + (i + xi[None, None, :, 0]) * h1
        q2 = self.origin[1] + (j + xi[None, None, :, 1]) * h2
        shape = (self.n1, self.n2, xi.shape[0])
        return (np.broadcast_to(q1, shape).copy(),
                np.broadcast_to(q2, shape).copy())

    def quad_weights(self):
        asm = _assembly2()
        h1, h2 = self.spacings
        w = asm["wq"] * h1 * h2
        return np.broadcast_to(w, (self.n1, self.n2, w.size)).copy()


def sheet_affine_values(sheet: SheetMesh, fbar):
    """Nodal values of x_alpha -> fbar . x_alpha on the sheet."""
    fbar = np.asarray(fbar, dtype=float).reshape(3, 2)
    x1, x2 = sheet.node_coords()
    return (fbar[:, 0][None, None, :] * x1[:, None, None]
            + fbar[:, 1][None, None, :] * x2[None, :, None])


def _gather2(values, sheet):
    n1, n2 = sheet.n1, sheet.n2
    out = np.empty((n1, n2, 4, values.shape[-1]))
    for c, (ci, cj) in enumerate(_CORNERS2):
        out[:, :, c, :] = values[ci:ci + n1, cj:cj + n2, :]
    return out


def _values_at_quad2(values, sheet):
    asm = _assembly2()
    return np.einsum("ijcd,qc->ijqd", _gather2(values, sheet), asm["shape"])


def _grads_at_quad2(values, sheet):
    asm = _assembly2()
    h = np.asarray(sheet.spacings)
    dshape = asm["dshape"] / h[None, None, :]
    return np.einsum("ijcd,qca->ijqda", _gather2(values, sheet), dshape)


def _scatter2(contrib, sheet):
    """Transpose of _values_at_quad2: (n1, n2, nq, d) -> nodal array."""
    asm = _assembly2()
    T = np.einsum("ijqd,qc->ijcd", contrib, asm["shape"])
    out = np.zeros(sheet.node_shape + (contrib.shape[-1],))
    n1, n2 = sheet.n1, sheet.n2
    for c, (ci, cj) in enumerate(_CORNERS2):
        out[ci:ci + n1, cj:cj + n2, :] += T[:, :, c, :]
    return out


def _scatter2_grad(contrib, sheet):
    """Transpose of _grads_at_quad2: (n1, n2, nq, d, a) -> nodal array."""
    asm = _assembly2()
    h = np.asarray(sheet.spacings)
    dshape = asm["dshape"] / h[None, None, :]
    T = np.einsum("ijqda,qca->ijcd", contrib, dshape)
    out = np.zeros(sheet.node_shape + (contrib.shape[-2],))
    n1, n2 = sheet.n1, sheet.n2
    for c, (ci, cj) in enumerate(_CORNERS2):
        out[ci:ci + n1, cj:cj + n2, :] += T[:, :, c, :]
    return out


# ---------------------------------------------------------------------------
# Loads
# ---------------------------------------------------------------------------

def _eval_vec(spec_fn, *coords):
    """Evaluate a load entry (None, constant 3-vector, or callable)."""
    shape = np.broadcast(*[np.asarray(c) for c in coords]).shape
    if spec_fn is None:
        return np.zeros(shape + (3,))
    if callable(spec_fn):
        out = np.asarray(spec_fn(*coords), dtype=float)
        return np.broadcast_to(out, shape + (3,)).copy()
    vec = np.asarray(spec_fn, dtype=float).reshape(3)
    return np.broadcast_to(vec, shape + (3,)).copy()


@dataclass
class LoadSystem:
    """Volume and surface loads of the scaled film problem.

    f acts on the volume and may depend on (x1, x2, x3); g and g0 are
    (top, bottom) pairs acting on the faces x3 = +1 and x3 = -1 and may
    depend on (x1, x2).  Entries are None, constant 3-vectors, or
    callables returning 3-vectors.  The order-1 pair must satisfy
    g0(+) + g0(-) = 0 pointwise; assembly checks this to 1e-12.
    """

    f: object = None
    g: tuple = (None, None)
    g0: tuple = (None, None)

    def f_at(self, x1, x2, x3):
        return _eval_vec(self.f, x1, x2, x3)

    def g_at(self, side, x1, x2):
        return _eval_vec(self.g[0] if side > 0 else self.g[1], x1, x2)

    def g0_at(self, side, x1, x2):
        return _eval_vec(self.g0[0] if side > 0 else self.g0[1], x1, x2)

    def check_compatibility(self, sheet: SheetMesh):
        q1, q2 = sheet.quad_coords()
        mism = np.abs(self.g0_at(+1, q1, q2) + self.g0_at(-1, q1, q2)).max()
        if mism > 1e-12:
            raise ValueError(
                f"order-1 surface loads must cancel: max|g0(+) + g0(-)| = {mism}")

    def is_zero(self):
        return (self.f is None and all(e is None for e in self.g)
                and all(e is None for e in self.g0))


@dataclass
class ThinFilmProblem:
    """Clamped film on omega x (-1, 1) with loads and a thickness list."""

    W: StoredEnergyDensity
    omega: SheetMesh
    fbar_bc: np.ndarray
    loads: LoadSystem = dc_field(default_factory=LoadSystem)
    epsilons: tuple = (1.0, 0.5, 0.25, 0.125)
    n3: int = 8
    inner: InnerConfig = InnerConfig()
    limit_inner: InnerConfig = InnerConfig(grad_tol=1e-10)
    cell_template: CellProblemSpec | None = None

    def __post_init__(self):
        self.fbar_bc = np.asarray(self.fbar_bc, dtype=float).reshape(3, 2)
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("need at least one thickness")
        if any(not (0.0 < e <= 1.0) for e in eps):
            raise ValueError("thicknesses must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("thicknesses must be strictly decreasing")
        self.epsilons = eps
        self.loads.check_compatibility(self.omega)

    def film_mesh(self) -> CellMesh:
        return CellMesh(self.omega.n1, self.omega.n2, self.n3,
                        origin=self.omega.origin, lengths=self.omega.lengths,
                        boundary_mode=LATERAL_AFFINE)

    def boundary_datum(self, mesh: CellMesh):
        return affine_values(mesh, self.fbar_bc)

    def template_spec(self) -> CellProblemSpec:
        if self.cell_template is not None:
            return self.cell_template
        return CellProblemSpec(fbar=np.zeros((3, 2)), inner=self.inner)


def _load_vector(problem: ThinFilmProblem, eps: float, mesh: CellMesh):
    """Nodal vector l with total load work l . u (zero where no loads)."""
    ell = np.zeros(mesh.node_shape + (3,))
    loads = problem.loads
    if loads.is_zero():
        return ell
    asm = _assembly(mesh.quadrature)
    if loads.f is not None:
        q1, q2, q3 = mesh.quad_coords()
        fq = loads.f_at(q1, q2, q3)
        wq = asm["wq"] * mesh.cell_volume
        T = np.einsum("ijkqd,q,qc->ijkcd", fq, wq, asm["shape"])
        n1, n2, n3 = mesh.n1, mesh.n2, mesh.n3
        for c, (ci, cj, ck) in enumerate(
                [(cc >> 2 & 1, cc >> 1 & 1, cc & 1) for cc in range(8)]):
            ell[ci:ci + n1, cj:cj + n2, ck:ck + n3, :] += T[:, :, :, c, :]
    sheet = SheetMesh(mesh.n1, mesh.n2, mesh.origin, mesh.lengths)
    q1, q2 = sheet.quad_coords()
    w2 = sheet.quad_weights()
    for side, klayer in ((+1, -1), (-1, 0)):
        surf = loads.g_at(side, q1, q2) + loads.g0_at(side, q1, q2) / eps
        if not np.any(surf):
            continue
        ell[:, :, klayer, :] += _scatter2(surf * w2[..., None], sheet)
    return ell


def _check_film_field(problem, mesh, u: DiscreteField):
    if u.mesh.boundary_mode != LATERAL_AFFINE:
        raise ValueError("thin-film fields use the lateral-affine boundary mode")
    datum = problem.boundary_datum(u.mesh)
    tol = 1e-9 * (1.0 + float(np.abs(datum).max()))
    v = u.values
    mism = max(np.abs(v[0] - datum[0]).max(), np.abs(v[-1] - datum[-1]).max(),
               np.abs(v[:, 0] - datum[:, 0]).max(),
               np.abs(v[:, -1] - datum[:, -1]).max())
    if mism > tol:
        raise ValueError(f"lateral boundary deviates from the affine datum by {mism}")


def scaled_energy(problem: ThinFilmProblem, eps: float, u: DiscreteField) -> float:
    """Scaled film energy E_eps(u) including all load terms.

    The bulk term integrates W at the scaled gradient (D_alpha u | D_3
    u / eps) with the heterogeneity read at the rescaled coordinates;
    surface loads act on the top and bottom faces, the order-1 pair
    entering as the bending-moment term via the transverse jump.
    """
    _check_film_field(problem, problem.film_mesh(), u)
    ctx = EnergyContext(problem.W, u.mesh, transverse_scale=1.0 / eps,
                        prefactor=1.0, x_mode="full")
    ell = _load_vector(problem, eps, u.mesh)
    return ctx.value(u.values) - float(np.sum(ell * u.values))


def _minimize_film(problem: ThinFilmProblem, eps: float):
    mesh = problem.film_mesh()
    datum = problem.boundary_datum(mesh)
    ctx = EnergyContext(problem.W, mesh, transverse_scale=1.0 / eps,
                        prefactor=1.0, x_mode="full")
    ell = _load_vector(problem, eps, mesh)

    def fun(vec):
        full = unpack(vec, mesh, datum)
        val, grad = ctx.value_and_grad(full)
        val -= float(np.sum(ell * full))
        return val, pack(reduce_gradient(grad - ell, mesh), mesh)

    starts = [("affine", pack(datum, mesh))]
    if not problem.W.is_convex:
        rng = np.random.default_rng(
            np.random.SeedSequence([problem.inner.seed, 11]))
        scale = problem.inner.perturb_scale * (1.0 + float(np.linalg.norm(problem.fbar_bc)))
        base = pack(datum, mesh)
        for r in range(max(problem.inner.multistart - 1, 0)):
            starts.append((f"perturb{r}", base + rng.normal(0.0, scale, base.shape)))
    best, summaries = multistart_minimize(fun, starts, problem.inner.solver())
    field = DiscreteField(mesh, unpack(best.x, mesh, datum))
    bbar = transverse_average(field, 1.0 / (2.0 * eps))
    info = {"iterations": sum(s["iterations"] for s in summaries),
            "grad_norm": best.grad_norm, "status": best.status,
            "starts": summaries}
    return best.value, field, bbar, info


def minimize_thin_film(problem: ThinFilmProblem, eps: float):
    """Minimize the scaled film energy at one thickness.

    Descends from the affine clamp datum (plus seeded perturbations for
    nonconvex integrands).  Returns (energy, field, bbar) where bbar is
    the nodal scaled transverse average (u(+) - u(-)) / (2 eps).
    """
    if not any(abs(eps - e) <= 1e-15 for e in problem.epsilons):
        raise ValueError(f"thickness eps={eps} is not in the problem's thickness list")
    value, field, bbar, _ = _minimize_film(problem, eps)
    return value, field, bbar


# ---------------------------------------------------------------------------
# Density sources for the limit functional
# ---------------------------------------------------------------------------

class CellDensitySource:
    """Transverse-vector effective density evaluated by nested cell solves.

    ``evaluate`` returns (value, d/dFbar, d/dz); the derivatives are the
    offset gradients of the cell energy at its minimizer, which is the
    envelope differentiation rule (the constraint reparametrization does
    not involve the offsets).  Arguments are rounded to 12 decimals and
    solved at the rounded point, so the cached value and gradients stay
    mutually consistent while float jitter across quadrature points of a
    spatially uniform limit field collapses to one cell solve per
    iterate.  Heterogeneous integrands key the cache by x_alpha unless
    the modulation is constant in-plane.

    For nonconvex integrands the reported value may come from the
    periodic relaxation pass while the gradients are those of the raw
    minimizer; limit descents over such sources are heuristic.
    """

    def __init__(self, W: StoredEnergyDensity, template: CellProblemSpec | None = None):
        self.W = W
        self.template = template or CellProblemSpec(fbar=np.zeros((3, 2)))
        self.x_const = modulation_in_plane_constant(W.modulation.to_config())
        self.cache: dict = {}
        self._trail: dict = {}
        self.solves = 0

    def _spec_for(self, x_key, fbar, z, x0):
        """Continuation: warm field and a narrowed L window per point."""
        prev = self._trail.get(x_key)
        spec = replace(self.template, fbar=fbar, z=z, x0=x0)
        if prev is None:
            return spec, None
        dist = max(np.abs(fbar - prev["fbar"]).max(), np.abs(z - prev["z"]).max())
        if dist > 1.0:
            return spec, None
        ls = self.template.l_search
        narrowed = replace(ls, l_min=max(ls.l_min, prev["l_star"] / 4.0),
                           l_max=min(ls.l_max, prev["l_star"] * 4.0),
                           grid_count=5)
        return replace(spec, l_search=narrowed), prev["field"]

    def evaluate(self, x_alpha, fbar, z):
        # Rounding always, not just for the key: the solve happens at the
        # rounded point, so value and gradients belong together.
        fbar = np.round(np.asarray(fbar, dtype=float).reshape(3, 2), 12) + 0.0
        z = np.round(np.asarray(z, dtype=float).reshape(3), 12) + 0.0
        x_key = (0.0, 0.0) if self.x_const else (float(x_alpha[0]), float(x_alpha[1]))
        key = (x_key, fbar.tobytes(), z.tobytes())
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.solves += 1
        x0 = MaterialPoint((float(x_alpha[0]), float(x_alpha[1])), 0.0)
        spec, warm = self._spec_for(x_key, fbar, z, x0)
        sol = cosserat_density(self.W, spec, warm_start=warm)
        self._trail[x_key] = {"fbar": fbar, "z": z, "l_star": sol.l_star,
                              "field": sol.field}
        # Offset derivatives at the minimizer: strip the affine ramp to
        # recover the solver variable, then one gradient evaluation.
        mesh = sol.field.mesh
        scale = 2.0 * float(sol.field.constraint_meta["scale"])
        x3 = mesh.node_coords()[2]
        psi = sol.field.values - x3[None, None, :, None] * (z / scale)[None, None, None, :]
        ctx = EnergyContext(self.W, mesh, transverse_scale=scale, prefactor=0.5,
                            x_mode="frozen", x0=x0, inplane_offset=fbar,
                            transverse_offset=z)
        _, _, dF, dz = ctx.value_and_grad(psi, offset_grads=True)
        out = (float(sol.value), dF, dz)
        self.cache[key] = out
        return out


class TableDensitySource:
    """Density values and gradients interpolated from a stored table.

    The table must be of the transverse-vector kind (z axes present).
    A table built at a single material point stands in for the whole
    sheet, which is only sound when the integrand's heterogeneity is
    constant in x_alpha; that is checked against the table's stored
    integrand configuration, and queries then substitute the stored
    point.  Multi-point tables are queried at the literal in-plane
    coordinate and must therefore have been sampled at the 2D
    quadrature points of the sheet in use.
    """

    def __init__(self, table):
        from .tabulate import interpolate_with_gradient
        self._interp = interpolate_with_gradient
        if table.grid.z_axes is None:
            raise ValueError("the limit functional needs a table with z axes")
        self.x_sub = None
        if len(table.grid.x_points) == 1:
            mod = table.provenance.get("integrand", {}).get("modulation",
                                                            {"kind": "constant"})
            if not modulation_in_plane_constant(mod):
                raise ValueError(
                    "a single-point table cannot represent a heterogeneity "
                    "that varies in x_alpha")
            self.x_sub = table.grid.x_points[0]
        self.table = table

    def evaluate(self, x_alpha, fbar, z):
        fbar = np.round(np.asarray(fbar, dtype=float), 12) + 0.0
        z = np.round(np.asarray(z, dtype=float), 12) + 0.0
        return self._interp(self.table, self.x_sub or x_alpha, fbar, z)


def _limit_load_vectors(loads: LoadSystem, sheet: SheetMesh):
    """Load vectors of the limit functional: nodal for v, per cell for bbar."""
    q1, q2 = sheet.quad_coords()
    w2 = sheet.quad_weights()
    t, wt = np.polynomial.legendre.leggauss(8)
    fbar_q = 0.5 * sum(w * loads.f_at(q1, q2, np.full_like(q1, x3))
                       for x3, w in zip(t, wt))
    dens_v = 2.0 * fbar_q + loads.g_at(+1, q1, q2) + loads.g_at(-1, q1, q2)
    dens_b = 2.0 * loads.g0_at(+1, q1, q2)
    ell_v = _scatter2(dens_v * w2[..., None], sheet)
    ell_b = np.einsum("ijqd,ijq->ijd", dens_b, w2)
    return ell_v, ell_b


def _limit_density_terms(source, sheet, v_values, b_values, with_grads=False):
    q1, q2 = sheet.quad_coords()
    w2 = sheet.quad_weights()
    F = _grads_at_quad2(v_values, sheet)
    n1, n2, nq = w2.shape
    total = 0.0
    dF = np.zeros((n1, n2, nq, 3, 2)) if with_grads else None
    dB = np.zeros((n1, n2, 3)) if with_grads else None
    for i in range(n1):
        for j in range(n2):
            for q in range(nq):
                val, gF, gz = source.evaluate((q1[i, j, q], q2[i, j, q]),
                                              F[i, j, q], b_values[i, j])
                total += 2.0 * w2[i, j, q] * val
                if with_grads:
                    dF[i, j, q] = 2.0 * w2[i, j, q] * gF
                    dB[i, j] += 2.0 * w2[i, j, q] * gz
    return total, dF, dB


def bbar_at(sheet: SheetMesh, b_values, x_alpha):
    """Per-cell bbar field evaluated at an in-plane point."""
    h1, h2 = sheet.spacings
    i = min(max(int((x_alpha[0] - sheet.origin[0]) / h1), 0), sheet.n1 - 1)
    j = min(max(int((x_alpha[1] - sheet.origin[1]) / h2), 0), sheet.n2 - 1)
    return np.asarray(b_values)[i, j]


def limit_membrane_energy(source, sheet: SheetMesh, loads: LoadSystem,
                          v_values, b_values) -> float:
    """Limit membrane functional J(v, bbar) for given discrete 2D fields.

    ``source`` provides the effective density (cell solver or table).
    ``v_values`` is nodal with shape (n1+1, n2+1, 3); ``b_values`` holds
    one transverse vector per cell, shape (n1, n2, 3), since bbar enters
    the functional without derivatives.  Returns 2 Int Q(x; Dv | bbar)
    minus the load work.
    """
    v_values = np.asarray(v_values, dtype=float)
    b_values = np.asarray(b_values, dtype=float)
    loads.check_compatibility(sheet)
    total, _, _ = _limit_density_terms(source, sheet, v_values, b_values)
    ell_v, ell_b = _limit_load_vectors(loads, sheet)
    return total - float(np.sum(ell_v * v_values)) - float(np.sum(ell_b * b_values))


def minimize_limit(source, sheet: SheetMesh, loads: LoadSystem, fbar_bc,
                   config: InnerConfig | None = None):
    """Minimize the limit functional over (v, bbar).

    v is pinned to the affine datum fbar_bc . x_alpha on the boundary of
    omega; the per-cell bbar is unconstrained.  Returns (energy, v nodal,
    bbar per cell, info).
    """
    cfg = config or InnerConfig(grad_tol=1e-10)
    fbar_bc = np.asarray(fbar_bc, dtype=float).reshape(3, 2)
    loads.check_compatibility(sheet)
    datum = sheet_affine_values(sheet, fbar_bc)
    ell_v, ell_b = _limit_load_vectors(loads, sheet)
    n1, n2 = sheet.n1, sheet.n2
    nv = max(n1 - 1, 0) * max(n2 - 1, 0) * 3

    def unpack2(vec):
        v = datum.copy()
        if nv:
            v[1:n1, 1:n2, :] = vec[:nv].reshape(n1 - 1, n2 - 1, 3)
        b = vec[nv:].reshape(n1, n2, 3)
        return v, b

    def fun(vec):
        v, b = unpack2(vec)
        total, dF, dB = _limit_density_terms(source, sheet, v, b, with_grads=True)
        val = total - float(np.sum(ell_v * v)) - float(np.sum(ell_b * b))
        gv = _scatter2_grad(dF, sheet) - ell_v
        gb = dB - ell_b
        inner = gv[1:n1, 1:n2, :].ravel() if nv else np.zeros(0)
        return val, np.concatenate([inner, gb.ravel()])

    x0 = np.concatenate([datum[1:n1, 1:n2, :].ravel() if nv else np.zeros(0),
                         np.zeros((n1, n2, 3)).ravel()])
    res = minimize_lbfgs(fun, x0, cfg.solver())
    v, b = unpack2(res.x)
    info = {"iterations": res.iterations, "grad_norm": res.grad_norm,
            "status": res.status}
    return res.value, v, b, info


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Per-thickness energies against the limit functional minimum."""

    rows: list
    limit_energy: float
    limit_info: dict
    bbar_limit: np.ndarray | None = None

    @property
    def gaps(self):
        return [r.get("gap") for r in self.rows]

    @property
    def ok(self):
        return all("error" not in r for r in self.rows)

    def to_record(self):
        return {
            "limit_energy": self.limit_energy,
            "limit_info": self.limit_info,
            "rows": self.rows,
        }

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epsilon,energy,gap,iterations,seconds\n")
            for r in self.rows:
                if "error" in r:
                    fh.write(f"{r['epsilon']!r},error,,,\n")
                    continue
                fh.write(f"{r['epsilon']!r},{r['energy']!r},{r['gap']!r},"
                         f"{r['iterations']},{r['seconds']!r}\n")


def _study_row(problem, eps, limit_energy):
    t0 = time.perf_counter()
    value, field, bbar, info = _minimize_film(problem, eps)
    seconds = time.perf_counter() - t0
    if limit_energy != 0.0:
        gap = (value - limit_energy) / abs(limit_energy)
    else:
        gap = value - limit_energy
    sheet = SheetMesh(field.mesh.n1, field.mesh.n2,
                      field.mesh.origin, field.mesh.lengths)
    w_node = np.ones(sheet.node_shape)
    w_node[0, :] *= 0.5
    w_node[-1, :] *= 0.5
    w_node[:, 0] *= 0.5
    w_node[:, -1] *= 0.5
    h1, h2 = sheet.spacings
    bbar_norm = float(np.sqrt(np.sum(w_node[..., None] * bbar ** 2) * h1 * h2))
    return {"epsilon": eps, "energy": value, "gap": gap,
            "iterations": info["iterations"], "seconds": seconds,
            "bbar_norm": bbar_norm, "status": info["status"]}


def convergence_study(problem: ThinFilmProblem, source=None,
                      threads: int = 1) -> ConvergenceReport:
    """Minimize the film at every thickness and compare with the limit.

    The limit energy is the minimum of the limit functional over (v,
    bbar) on the problem's sheet, with the density coming from nested
    cell solves unless a prebuilt ``source`` is given.  Rows follow the
    input thickness order; a failing thickness yields an error marker
    row instead of aborting the study.
    """
    sheet = problem.omega
    if source is None:
        source = CellDensitySource(problem.W, problem.template_spec())
    t0 = time.perf_counter()
    limit_energy, _, bbar_limit, limit_info = minimize_limit(
        source, sheet, problem.loads, problem.fbar_bc, problem.limit_inner)
    limit_info = dict(limit_info, seconds=time.perf_counter() - t0)

    def run(eps):
        try:
            return _study_row(problem, eps, limit_energy)
        except Exception as exc:   # noqa: BLE001 - partial reports by contract
            return {"epsilon": eps, "error": f"{type(exc).__name__}: {exc}"}

    if threads > 1 and len(problem.epsilons) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, problem.epsilons))
    else:
        rows = [run(eps) for eps in problem.epsilons]
    return ConvergenceReport(rows, limit_energy, limit_info, bbar_limit)
