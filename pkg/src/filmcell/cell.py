"""Unit-cell relaxation problems defining the effective densities.

Three related cell problems are solved on the through-thickness cell
Q' x (-1, 1), all at a frozen in-plane material point x0:

* membrane density (lateral-zero form): the infimum over cell lengths
  L > 0 and perturbations vanishing on the lateral faces of

      (1/2) Int W(x0, x3; Fbar + D_alpha phi | L D_3 phi) dx,

* membrane density (periodic form): the same infimum over laterally
  periodic perturbations with the quasiconvexified integrand, which for
  convex families coincides with W,

* Cosserat density: laterally periodic perturbations whose transverse
  average (L/2) Int D_3 phi dx3-slice mean is pinned to a vector z.

On top of these sit the 3D quasiconvexification on the unit cube, the
minimization over the transverse vector producing the optimal Cosserat
vector b0, and a first-order lamination upper bound used as an
independent cross-check.

The L-infimum is scanned on a log grid and polished by golden-section
refinement; inner minimizations share the descent contract from
:mod:`filmcell.solvers` and are warm-started along the L grid.  A
minimum attained strictly at a grid boundary raises the
``l-search-boundary`` warning in the diagnostics.

The transverse-average constraint is enforced by reparametrization, not
by multipliers: the solver variable is an unconstrained periodic field
to which a rank-one correction (an x3-linear ramp) is applied so the
top/bottom trace difference has zero in-plane mean.  Applying the same
projection to a warm-start field that still carries a ramp strips the
ramp exactly, so solutions chain across L values and mesh levels.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .integrand import MaterialPoint, StoredEnergyDensity
from .field import (
    CellMesh, DiscreteField, EnergyContext,
    LATERAL_ZERO, LATERAL_PERIODIC, FULLY_PERIODIC,
    pack, unpack, reduce_gradient, affine_values, inject, refine_mesh,
)
from .solvers import SolverConfig, minimize_lbfgs, multistart_minimize, golden_section

__all__ = [
    "LSearchConfig", "InnerConfig", "CellProblemSpec", "CellSolution",
    "CellSolveError", "membrane_density", "membrane_density_periodic",
    "cosserat_density", "minimize_over_z", "quasiconvexify",
    "lamination_upper_bound", "QuasiconvexSurrogate", "refinement_ladder",
]


class CellSolveError(RuntimeError):
    """Cell solve failed its contract; carries the best value found."""

    def __init__(self, msg, best_value=None, diagnostics=None):
        super().__init__(msg)
        self.best_value = best_value
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class LSearchConfig:
    """Search window for the cell length L (log grid plus golden polish)."""

    l_min: float = 1e-2
    l_max: float = 1e2
    grid_count: int = 17
    golden_tol: float = 0.02      # bracket width on the log10 scale
    flat_rel: float = 1e-9        # profile variation treated as flat

    def __post_init__(self):
        if not (0.0 < self.l_min < self.l_max):
            raise ValueError("need 0 < l_min < l_max")
        if self.grid_count < 2:
            raise ValueError("need at least two L grid points")

    def grid(self):
        return np.logspace(math.log10(self.l_min), math.log10(self.l_max),
                           self.grid_count)


@dataclass(frozen=True)
class InnerConfig:
    """Inner descent budget: iteration cap, gradient tolerance, multistart."""

    max_iter: int = 500
    grad_tol: float = 1e-8
    multistart: int = 3
    perturb_scale: float = 0.1
    seed: int = 0
    history: int = 10

    def solver(self) -> SolverConfig:
        return SolverConfig(max_iter=self.max_iter, grad_tol=self.grad_tol,
                            history=self.history)


@dataclass
class CellProblemSpec:
    """Everything a cell solve needs besides the integrand itself."""

    fbar: np.ndarray
    x0: MaterialPoint = MaterialPoint((0.5, 0.5), 0.0)
    z: np.ndarray | None = None
    mesh: CellMesh = CellMesh(4, 4, 4)
    l_search: LSearchConfig = LSearchConfig()
    inner: InnerConfig = InnerConfig()
    tol: float = 1e-8
    surrogate_submesh: int = 4
    surrogate_quant: float = 1e-3

    def __post_init__(self):
        self.fbar = np.asarray(self.fbar, dtype=float).reshape(3, 2)
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float).reshape(3)

    def content(self, kind):
        return {
            "kind": kind,
            "fbar": [[float(v) for v in row] for row in self.fbar],
            "z": None if self.z is None else [float(v) for v in self.z],
            "x0": {"x_alpha": list(self.x0.x_alpha), "x3": self.x0.x3},
            "mesh": [self.mesh.n1, self.mesh.n2, self.mesh.n3,
                     list(self.mesh.origin), list(self.mesh.lengths),
                     self.mesh.quadrature],
            "l_search": [self.l_search.l_min, self.l_search.l_max,
                         self.l_search.grid_count, self.l_search.golden_tol],
            "inner": [self.inner.max_iter, self.inner.grad_tol,
                      self.inner.multistart, self.inner.perturb_scale,
                      self.inner.seed],
            "tol": self.tol,
        }


@dataclass
class CellSolution:
    """Result of a cell solve: value, optimal L, minimizer, diagnostics."""

    value: float
    l_star: float | None
    field: DiscreteField
    diagnostics: dict = dc_field(default_factory=dict)
    spec_hash: str = ""

    @property
    def warnings(self):
        return self.diagnostics.get("warnings", [])

    def to_record(self):
        return {
            "value": self.value,
            "l_star": self.l_star,
            "spec_hash": self.spec_hash,
            "diagnostics": self.diagnostics,
        }


def _spec_hash(W: StoredEnergyDensity, spec: CellProblemSpec, kind: str) -> str:
    payload = {"integrand": W.to_config(), "spec": spec.content(kind)}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Transverse-average projector (reparametrized constraint)
# ---------------------------------------------------------------------------

def _trace_mean(values, mesh):
    """In-plane mean of the top/bottom trace difference (periodic weights)."""
    n1, n2 = mesh.n1, mesh.n2
    diff = values[:n1, :n2, -1, :] - values[:n1, :n2, 0, :]
    return diff.mean(axis=(0, 1))


def _apply_projector(values, mesh, x3_nodes):
    m = _trace_mean(values, mesh)
    return values - 0.5 * x3_nodes[None, None, :, None] * m[None, None, None, :]


def _projector_adjoint(grad, mesh, x3_nodes):
    # The ramp correction touches every full-array slot, so the moment r
    # sums over all of them; the mean only reads the distinct boundary
    # layers, so only those receive the transposed contribution.
    n1, n2 = mesh.n1, mesh.n2
    r = np.einsum("k,ijkd->d", 0.5 * x3_nodes, grad)
    out = grad.copy()
    c = r / (n1 * n2)
    out[:n1, :n2, -1, :] -= c[None, None, :]
    out[:n1, :n2, 0, :] += c[None, None, :]
    return out


# ---------------------------------------------------------------------------
# Start construction
# ---------------------------------------------------------------------------

def _laminate_seed(W, mesh, gradient_scale):
    """Sawtooth field aligned with the rank-one axis of a two-well family.

    Returns nodal values whose scaled gradient oscillates by the well gap
    along the laminate normal, or None when the family has no rank-one
    connection or the normal is not mesh-aligned.
    """
    pair = getattr(W.family, "rank_one", None)
    if pair is None:
        return None
    a_vec, n_vec = pair
    axis = int(np.argmax(np.abs(n_vec)))
    if abs(abs(n_vec[axis]) - 1.0) > 1e-9:
        return None
    counts = (mesh.n1, mesh.n2, mesh.n3)
    if counts[axis] % 2 != 0:
        return None
    a_eff = a_vec * np.sign(n_vec[axis])
    h = mesh.spacings[axis]
    saw = h * (np.arange(counts[axis] + 1) % 2)
    if axis == 2:
        saw = saw / float(gradient_scale)
    shape = [1, 1, 1]
    shape[axis] = counts[axis] + 1
    vals = saw.reshape(shape)[..., None] * a_eff[None, None, None, :]
    return np.broadcast_to(vals, mesh.node_shape + (3,)).copy()


def _base_starts(W, mesh, spec, fbar, gradient_scale, warm_values=None):
    """Ordered (label, full nodal values) pairs for the inner multistart.

    Convex families get the zero start (plus the warm one); the discrete
    problem is then convex and any start reaches the minimum.  Nonconvex
    families add a mesh-aligned laminate seed, the negated affine lift
    and seeded random perturbations.
    """
    starts = []
    if warm_values is not None:
        starts.append(("warm", warm_values))
    starts.append(("zero", np.zeros(mesh.node_shape + (3,))))
    if W.is_convex:
        return starts
    lam = _laminate_seed(W, mesh, gradient_scale)
    if lam is not None:
        starts.append(("laminate", lam))
    starts.append(("affine-lift", -affine_values(mesh, fbar)))
    rng = np.random.default_rng(np.random.SeedSequence([spec.inner.seed, 7]))
    scale = spec.inner.perturb_scale * (1.0 + float(np.linalg.norm(fbar)))
    for r in range(max(spec.inner.multistart - 3, 0)):
        starts.append((f"perturb{r}",
                       rng.normal(0.0, scale, mesh.node_shape + (3,))))
    return starts


# ---------------------------------------------------------------------------
# Inner solves at fixed L
# ---------------------------------------------------------------------------

def _solve_fixed(W, mesh, spec, fbar, z, scale, x_mode,
                 constrained=False, warm_values=None):
    """Minimize the half-integral cell energy over the free dofs at fixed scale.

    Returns (value, full nodal values, diagnostics).
    """
    ctx = EnergyContext(W, mesh, transverse_scale=scale, prefactor=0.5,
                        x_mode=x_mode, x0=spec.x0,
                        inplane_offset=fbar, transverse_offset=z)
    x3_nodes = mesh.node_coords()[2]

    def fun(vec):
        full = unpack(vec, mesh)
        if constrained:
            full = _apply_projector(full, mesh, x3_nodes)
        val, graw = ctx.value_and_grad(full)
        if constrained:
            graw = _projector_adjoint(graw, mesh, x3_nodes)
        return val, pack(reduce_gradient(graw, mesh), mesh)

    starts = [(label, pack(vals, mesh)) for label, vals in
              _base_starts(W, mesh, spec, fbar, scale, warm_values)]
    best, summaries = multistart_minimize(fun, starts, spec.inner.solver())
    full = unpack(best.x, mesh)
    if constrained:
        full = _apply_projector(full, mesh, x3_nodes)
    diag = {"starts": summaries, "grad_norm": best.grad_norm,
            "iterations": sum(s["iterations"] for s in summaries),
            "status": best.status}
    return best.value, full, diag


def _l_scan(solve_at, lcfg: LSearchConfig, warm0=None):
    """Scan the L grid, polish with golden section, report the profile.

    ``solve_at(L, warm_values)`` returns (value, values, diag) and is
    chained: each grid point warm-starts from its predecessor.  Flat
    profiles resolve to the grid point closest to L = 1; a strict minimum
    at a window edge is flagged ``l-search-boundary``.
    """
    grid = lcfg.grid()
    profile = []
    results = []
    warm = warm0
    for L in grid:
        v, vals, diag = solve_at(L, warm)
        profile.append((float(L), float(v)))
        results.append((v, L, vals, diag))
        warm = vals
    values = np.array([r[0] for r in results])
    vmin = float(values.min())
    noise = lcfg.flat_rel * (1.0 + abs(vmin))
    candidates = np.flatnonzero(values <= vmin + noise)
    i_star = int(min(candidates, key=lambda i: (abs(math.log10(grid[i])), i)))
    warnings = []
    if i_star == 0 and values[0] < values[1] - noise:
        warnings.append("l-search-boundary")
    if i_star == len(grid) - 1 and values[-1] < values[-2] - noise:
        warnings.append("l-search-boundary")
    best = list(results[i_star])
    flat = values.max() - values.min() <= noise
    n_golden = 0
    if not flat:
        lo = math.log10(grid[max(i_star - 1, 0)])
        hi = math.log10(grid[min(i_star + 1, len(grid) - 1)])
        state = {"warm": best[2]}

        def polish(logl):
            nonlocal n_golden
            n_golden += 1
            L = 10.0 ** logl
            v, vals, diag = solve_at(L, state["warm"])
            profile.append((float(L), float(v)))
            if v < best[0]:
                best[0], best[1], best[2], best[3] = v, L, vals, diag
                state["warm"] = vals
            return v

        golden_section(polish, lo, hi, tol=lcfg.golden_tol)
    value, l_star, vals, diag = best
    scan_diag = {"l_profile": profile, "l_grid_points": len(grid),
                 "l_golden_evals": n_golden, "l_flat": bool(flat),
                 "warnings": warnings, "inner": diag}
    return float(value), float(l_star), vals, scan_diag


# ---------------------------------------------------------------------------
# Quasiconvexification surrogate (nonconvex integrands in periodic forms)
# ---------------------------------------------------------------------------

class QuasiconvexSurrogate:
    """Pointwise quasiconvexification estimates on a small sub-mesh.

    Re-integrating a found minimizer through the relaxed integrand is the
    honest way to report periodic-form values for nonconvex W; this
    surrogate makes it affordable by quantizing the gradient argument to
    a fixed lattice, solving the unit-cube problem on a coarse sub-mesh
    and caching.  When the heterogeneity does not vary in x3 the cache
    key drops x3.  Results are deterministic because the solve is.
    """

    def __init__(self, W, spec: CellProblemSpec):
        self.W = W
        self.spec = spec
        n = spec.surrogate_submesh
        self.mesh = CellMesh(n, n, n, boundary_mode=FULLY_PERIODIC)
        self.quant = spec.surrogate_quant
        b = W.modulation.bounds()
        self.x3_free = b is not None and b[0] == b[1]
        self.cache: dict = {}
        self.hits = 0
        self.misses = 0

    def value(self, x3: float, F) -> float:
        F = np.asarray(F, dtype=float).reshape(3, 3)
        Fq = np.round(F / self.quant) * self.quant
        x3_key = 0.0 if self.x3_free else round(float(x3), 9)
        key = (x3_key, tuple(np.round(Fq, 9).ravel()))
        if key in self.cache:
            self.hits += 1
            return self.cache[key]
        self.misses += 1
        x0 = MaterialPoint(self.spec.x0.x_alpha, float(x3))
        sub = replace(self.spec, mesh=self.mesh, z=None, x0=x0)
        sol = quasiconvexify(self.W, Fq, sub)
        self.cache[key] = sol.value
        return sol.value

    def integral(self, values_full, mesh, spec, fbar, z, scale) -> float:
        """Surrogate counterpart of the cell energy at a given field."""
        ctx = EnergyContext(self.W, mesh, transverse_scale=scale, prefactor=0.5,
                            x_mode="frozen", x0=spec.x0,
                            inplane_offset=fbar, transverse_offset=z)
        G = ctx._gradients(values_full)
        q3 = mesh.quad_coords()[2]
        wq = ctx._wq
        total = 0.0
        for i in range(mesh.n1):
            for j in range(mesh.n2):
                for k in range(mesh.n3):
                    for q in range(wq.size):
                        total += wq[q] * self.value(q3[i, j, k, q], G[i, j, k, q])
        return 0.5 * total

    def stats(self):
        return {"submesh": self.mesh.n1, "quant": self.quant,
                "hits": self.hits, "misses": self.misses}


def _relaxed_value(W, spec, value, vals, mesh, z, l_star, diag):
    """Re-evaluate a nonconvex minimizer through the relaxed integrand.

    The descent ran with W itself, so ``value`` is an upper bound for the
    relaxed cell problem; integrating the quasiconvexification surrogate
    along the found field can only tighten it.  Convex families pass
    through unchanged (their relaxed integrand is W).
    """
    diag["nonconvex_integrand"] = not W.is_convex
    if W.is_convex:
        return value
    surrogate = QuasiconvexSurrogate(W, spec)
    sur_val = surrogate.integral(vals, mesh, spec, spec.fbar, z, l_star)
    diag["surrogate"] = surrogate.stats()
    diag["raw_integrand_value"] = value
    diag["surrogate_value"] = sur_val
    return min(value, sur_val)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def membrane_density(W: StoredEnergyDensity, spec: CellProblemSpec,
                     warm_start: DiscreteField | None = None) -> CellSolution:
    """Membrane energy density (lateral-zero form) at (x0, fbar).

    Minimizes (1/2) Int W(x0, x3; fbar + D_alpha phi | L D_3 phi) over
    perturbations vanishing on the lateral faces and over L in the search
    window.  Diagnostics record the L profile, the zero-field upper bound
    and per-start convergence.
    """
    mesh = replace(spec.mesh, boundary_mode=LATERAL_ZERO)
    warm0 = None if warm_start is None else warm_start.values

    def solve_at(L, warm_values):
        return _solve_fixed(W, mesh, spec, spec.fbar, None, L, "frozen",
                            warm_values=warm_values)

    value, l_star, vals, diag = _l_scan(solve_at, spec.l_search, warm0)
    upper0 = EnergyContext(W, mesh, l_star, 0.5, "frozen", spec.x0,
                           spec.fbar, None).value(np.zeros(mesh.node_shape + (3,)))
    diag["upper_bound_zero_field"] = upper0
    if value > upper0 + spec.tol:
        raise CellSolveError("membrane value exceeds its zero-field upper bound",
                             best_value=value, diagnostics=diag)
    field = DiscreteField(mesh, vals)
    return CellSolution(float(value), l_star, field, diag,
                        _spec_hash(W, spec, "membrane"))


def membrane_density_periodic(W: StoredEnergyDensity, spec: CellProblemSpec,
                              warm_start: DiscreteField | None = None) -> CellSolution:
    """Membrane density in the laterally periodic relaxed form.

    For convex families the relaxed integrand equals W and both membrane
    forms agree up to discretization.  For nonconvex families the
    perturbation is found with W (a valid upper bound) and the value is
    re-evaluated through the pointwise quasiconvexification surrogate;
    the flag ``nonconvex_integrand`` marks such runs.
    """
    mesh = replace(spec.mesh, boundary_mode=LATERAL_PERIODIC)
    warm0 = None if warm_start is None else warm_start.values

    def solve_at(L, warm_values):
        return _solve_fixed(W, mesh, spec, spec.fbar, None, L, "frozen",
                            warm_values=warm_values)

    value, l_star, vals, diag = _l_scan(solve_at, spec.l_search, warm0)
    value = _relaxed_value(W, spec, value, vals, mesh, None, l_star, diag)
    field = DiscreteField(mesh, vals)
    return CellSolution(float(value), l_star, field, diag,
                        _spec_hash(W, spec, "membrane-periodic"))


def _check_split_bounds(W, spec, value, z, diag):
    """Record (and for p = 2 enforce) the additive growth sandwich."""
    g = W.growth
    fbar_p = float(np.sum(spec.fbar ** 2)) ** (g.p / 2.0)
    z_p = 0.0 if z is None else float(np.sum(np.asarray(z) ** 2)) ** (g.p / 2.0)
    upper = g.beta_upper * (fbar_p + z_p + 1.0)
    diag["split_upper_bound"] = upper
    if value < -spec.tol:
        raise CellSolveError("cell density came out negative", best_value=value,
                             diagnostics=diag)
    if value > upper + spec.tol:
        if g.p == 2.0:
            raise CellSolveError(
                f"cell density {value} violates the growth upper bound {upper}",
                best_value=value, diagnostics=diag)
        # The additive split of |F|^p is exact only at p = 2; for other
        # exponents the bound is advisory.
        diag.setdefault("warnings", []).append("split-upper-bound-loose-p")


def cosserat_density(W: StoredEnergyDensity, spec: CellProblemSpec,
                     warm_start: DiscreteField | None = None) -> CellSolution:
    """Cosserat-membrane density at (x0, fbar, z).

    Laterally periodic cell problem with the in-plane mean of the scaled
    transverse average pinned to z.  The constraint is absorbed into the
    parametrization phi = (x3 / L) z + psi with psi projected to zero
    trace-difference mean, so the inner problem stays unconstrained.  The
    returned field is phi including the affine lift; its constraint
    residual is checked at 1e-12.
    """
    if spec.z is None:
        raise ValueError("cosserat_density needs spec.z")
    mesh = replace(spec.mesh, boundary_mode=LATERAL_PERIODIC)
    z = spec.z
    warm0 = None if warm_start is None else warm_start.values

    def solve_at(L, warm_values):
        return _solve_fixed(W, mesh, spec, spec.fbar, z, L, "frozen",
                            constrained=True, warm_values=warm_values)

    value, l_star, vals, diag = _l_scan(solve_at, spec.l_search, warm0)
    value = _relaxed_value(W, spec, value, vals, mesh, z, l_star, diag)
    _check_split_bounds(W, spec, value, z, diag)
    x3_nodes = mesh.node_coords()[2]
    phi = vals + x3_nodes[None, None, :, None] * (z / l_star)[None, None, None, :]
    field = DiscreteField(mesh, phi, {"target": [float(v) for v in z],
                                      "scale": l_star / 2.0})
    resid = field.constraint_residual()
    diag["constraint_residual"] = resid
    if resid > 1e-12 * (1.0 + float(np.linalg.norm(z))):
        raise CellSolveError("transverse-average constraint violated",
                             best_value=value, diagnostics=diag)
    return CellSolution(float(value), l_star, field, diag,
                        _spec_hash(W, spec, "cosserat"))


def minimize_over_z(W: StoredEnergyDensity, spec: CellProblemSpec,
                    warm_start: DiscreteField | None = None):
    """Minimize the Cosserat density over the transverse vector z.

    The transverse vector enters the same smooth objective as the cell
    field, so both are descended jointly, which is equivalent to the
    nested minimization and shares its warm starts.  Ties in value
    resolve to the candidate of smallest |z|.  The growth sandwich
    confines any minimizer to a computable ball; a b0 outside it is
    flagged ``b0-outside-coercivity-radius``.

    Returns (CellSolution, b0).
    """
    mesh = replace(spec.mesh, boundary_mode=LATERAL_PERIODIC)
    x3_nodes = mesh.node_coords()[2]
    cfg = spec.inner.solver()
    nfree = mesh.n1 * mesh.n2 * (mesh.n3 + 1) * 3

    z_starts = [("z0", np.zeros(3))]
    try:
        _, z_fiber = W.fiber_infimum(spec.x0, spec.fbar)
        z_starts.append(("zf", z_fiber))
    except Exception:
        pass
    g = W.growth
    radius = ((g.beta_upper / g.beta_lower)
              * (float(np.sum(spec.fbar ** 2)) ** (g.p / 2.0) + 1.0)) ** (1.0 / g.p)

    warm0 = None
    if warm_start is not None:
        meta = warm_start.constraint_meta or {}
        z_meta = np.asarray(meta.get("target", np.zeros(3)), dtype=float)
        warm0 = np.concatenate([pack(warm_start.values, mesh), z_meta])

    def solve_at(L, warm_values):
        ctx = EnergyContext(W, mesh, transverse_scale=L, prefactor=0.5,
                            x_mode="frozen", x0=spec.x0,
                            inplane_offset=spec.fbar, transverse_offset=None)

        def fun(vec):
            psi = _apply_projector(unpack(vec[:nfree], mesh), mesh, x3_nodes)
            ctx.transverse_offset = vec[nfree:]
            val, graw, _, dz = ctx.value_and_grad(psi, offset_grads=True)
            graw = _projector_adjoint(graw, mesh, x3_nodes)
            return val, np.concatenate(
                [pack(reduce_gradient(graw, mesh), mesh), dz])

        starts = []
        if warm_values is not None:
            starts.append(("warm", warm_values))
        for flabel, fvals in _base_starts(W, mesh, spec, spec.fbar, L):
            fvec = pack(fvals, mesh)
            z_combos = z_starts if (not W.is_convex or flabel == "zero") else z_starts[:1]
            for zlabel, z0 in z_combos:
                starts.append((f"{flabel}/{zlabel}",
                               np.concatenate([fvec, z0])))
        best = None
        cands = []
        summaries = []
        for label, x0vec in starts:
            res = minimize_lbfgs(fun, x0vec, cfg)
            summaries.append({"start": label, "value": res.value,
                              "iterations": res.iterations, "status": res.status})
            cands.append(res)
            if best is None or res.value < best.value - 1e-12 * (1.0 + abs(best.value)):
                best = res
        tie_tol = 1e-9 * (1.0 + abs(best.value))
        tie = [r for r in cands if r.value <= best.value + tie_tol]
        best = min(tie, key=lambda r: float(np.linalg.norm(r.x[nfree:])))
        diag = {"starts": summaries, "grad_norm": best.grad_norm,
                "iterations": sum(s["iterations"] for s in summaries),
                "status": best.status}
        return best.value, best.x, diag

    value, l_star, joint, diag = _l_scan(solve_at, spec.l_search, warm0)
    psi = _apply_projector(unpack(joint[:nfree], mesh), mesh, x3_nodes)
    b0 = joint[nfree:].copy()
    value = _relaxed_value(W, spec, value, psi, mesh, b0, l_star, diag)
    diag["coercivity_radius"] = radius
    if float(np.linalg.norm(b0)) > radius + 1e-6:
        diag.setdefault("warnings", []).append("b0-outside-coercivity-radius")
    _check_split_bounds(W, spec, value, b0, diag)
    phi = psi + x3_nodes[None, None, :, None] * (b0 / l_star)[None, None, None, :]
    field = DiscreteField(mesh, phi, {"target": [float(v) for v in b0],
                                      "scale": l_star / 2.0})
    diag["constraint_residual"] = field.constraint_residual()
    sol = CellSolution(float(value), l_star, field, diag,
                       _spec_hash(W, spec, "minimize-over-z"))
    return sol, b0


def quasiconvexify(W: StoredEnergyDensity, F, spec: CellProblemSpec,
                   warm_start: DiscreteField | None = None) -> CellSolution:
    """Quasiconvexification of W(x0; .) at a full 3x3 gradient F.

    Unit-cube cell problem with periodic perturbations; the periodic and
    Dirichlet infima of a quasiconvexification coincide, and the periodic
    discrete space reaches fine laminates without boundary layers, so the
    value converges from above under refinement.  The heterogeneity is
    frozen at x0 entirely, including x3.
    """
    F = np.asarray(F, dtype=float).reshape(3, 3)
    mesh = replace(spec.mesh, boundary_mode=FULLY_PERIODIC,
                   origin=(0.0, 0.0), lengths=(1.0, 1.0))
    # The grid spans x3 in (-1, 1); mapping the unit cube onto it doubles
    # the transverse derivative and halves the measure, which the scale 2
    # together with the 1/2 energy prefactor implements.
    warm0 = None if warm_start is None else warm_start.values
    value, vals, diag = _solve_fixed(W, mesh, spec, F[:, :2], F[:, 2], 2.0,
                                     "point", warm_values=warm0)
    w_at_f = W.evaluate(spec.x0, F)
    diag["pointwise_value"] = w_at_f
    if value > w_at_f + spec.tol:
        raise CellSolveError("quasiconvexification exceeds the pointwise value",
                             best_value=value, diagnostics=diag)
    field = DiscreteField(mesh, vals)
    return CellSolution(float(value), None, field, diag,
                        _spec_hash(W, spec, "quasiconvexify"))


def lamination_upper_bound(W: StoredEnergyDensity, F, x0=None, direction=None,
                           t_max=None, grid=33) -> float:
    """First-order lamination bound on the quasiconvexification at F.

    Minimizes s W(F + (1-s) t R) + (1-s) W(F - s t R) over volume
    fractions s in [0, 1] and offsets t >= 0, where R is a unit rank-one
    matrix.  ``direction`` may supply the pair (a, n); by default a
    coarse set of axis and diagonal directions is scanned and two-well
    families contribute their own rank-one axis.  Always at most
    W(x0; F) since t = 0 is admissible.
    """
    F = np.asarray(F, dtype=float).reshape(3, 3)
    x0 = x0 or MaterialPoint((0.5, 0.5), 0.0)
    a_mod = float(W.modulation_values(np.asarray(x0.x_alpha), np.asarray(x0.x3)))

    def energy(M):
        return a_mod * float(W.family.energy(M))

    if t_max is None:
        wells = getattr(W.family, "wells", ())
        wmax = max((float(np.abs(A).max()) for A in wells), default=0.0)
        t_max = 2.0 * (float(np.linalg.norm(F)) + 3.0 * wmax + 1.0)

    pairs = []
    if direction is not None:
        pairs.append((np.asarray(direction[0], dtype=float),
                      np.asarray(direction[1], dtype=float)))
    else:
        fam_pair = getattr(W.family, "rank_one", None)
        if fam_pair is not None:
            pairs.append(fam_pair)
        eyes = [np.eye(3)[i] for i in range(3)]
        diags = [(eyes[0] + eyes[1]) / np.sqrt(2.0),
                 (eyes[0] - eyes[1]) / np.sqrt(2.0)]
        for a_vec in eyes:
            for n_vec in eyes + diags:
                pairs.append((a_vec, n_vec))

    best = energy(F)
    for a_vec, n_vec in pairs:
        R = np.outer(a_vec, n_vec)
        nrm = float(np.linalg.norm(R))
        if nrm < 1e-14:
            continue
        R = R / nrm

        def lam(s, t):
            return (s * energy(F + (1.0 - s) * t * R)
                    + (1.0 - s) * energy(F - s * t * R))

        s_grid = np.linspace(0.0, 1.0, 21)
        t_grid = np.linspace(0.0, t_max, grid)
        vals = np.array([[lam(s, t) for t in t_grid] for s in s_grid])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        s0, t0 = float(s_grid[i]), float(t_grid[j])
        for _ in range(3):
            t0, _ = golden_section(lambda t: lam(s0, t),
                                   max(t0 - t_max / grid, 0.0),
                                   min(t0 + t_max / grid, t_max), tol=1e-6)
            s0, _ = golden_section(lambda s: lam(s, t0),
                                   max(s0 - 0.05, 0.0), min(s0 + 0.05, 1.0),
                                   tol=1e-6)
        best = min(best, lam(s0, t0))
    return float(best)


def refinement_ladder(op, W: StoredEnergyDensity, spec: CellProblemSpec,
                      levels: int):
    """Solve a cell operation on dyadically nested meshes with warm starts.

    Injected coarse minimizers join the start list on every refined mesh,
    so the reported values are non-increasing up to solver tolerance.
    ``op`` is one of the cell operations taking (W, spec, warm_start).
    Returns the list of solutions, coarsest first.
    """
    out = []
    sol = op(W, spec)
    out.append(sol)
    for _ in range(levels - 1):
        spec = replace(spec, mesh=refine_mesh(spec.mesh))
        warm = inject(sol.field)
        sol = op(W, spec, warm_start=warm)
        out.append(sol)
    return out
