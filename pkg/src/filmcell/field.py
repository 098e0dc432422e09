"""Structured-grid discretization of vector fields on the rescaled slab.

Meshes cover a rectangle times the fixed thickness interval (-1, 1) with
n1 x n2 x n3 trilinear hexahedral cells.  Both the through-thickness
unit cell Q' x (-1, 1) and thin-film cylinders omega x (-1, 1) use the
same machinery; only the in-plane rectangle differs.

The central kinematic object is the scaled gradient

    G(u; s) = ( D_alpha u | s * D_3 u ),

a 3x3 matrix per quadrature point whose first two columns are in-plane
derivatives and whose third column is the transverse derivative times a
scale (1/eps for thin films, the cell length L for cell problems).

Boundary modes:
  * ``lateral-zero``      zero values on the four lateral faces,
  * ``lateral-periodic``  identification of opposite lateral faces,
  * ``fully-periodic``    identification in all three directions
                          (homogeneous unit-cube problems),
  * ``lateral-affine``    lateral faces pinned to a caller datum.

Top and bottom faces are always traction-free (no constraint).
Gradients of the discrete energy are exact: ``energy_gradient`` is the
transpose of the assembly chain, with constrained nodes carrying zero
and periodic twins folded onto their representatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .integrand import MaterialPoint, StoredEnergyDensity

__all__ = [
    "LATERAL_ZERO", "LATERAL_PERIODIC", "LATERAL_AFFINE", "FULLY_PERIODIC",
    "CellMesh", "DiscreteField",
    "affine_values", "scaled_gradient",
    "energy_integral", "energy_gradient", "EnergyContext",
    "transverse_average", "refine_mesh", "inject",
    "pack", "unpack", "reduce_gradient", "free_size",
    "dump_grid_text", "read_grid_text",
]

LATERAL_ZERO = "lateral-zero"
LATERAL_PERIODIC = "lateral-periodic"
LATERAL_AFFINE = "lateral-affine"
FULLY_PERIODIC = "fully-periodic"

_MODES = (LATERAL_ZERO, LATERAL_PERIODIC, LATERAL_AFFINE, FULLY_PERIODIC)

# Corner c <-> bit triple (ci, cj, ck), ci = x1-side etc.
_CORNERS = [(c >> 2 & 1, c >> 1 & 1, c & 1) for c in range(8)]


def _reference_rule(quadrature: str):
    """Per-axis points and weights on the reference interval [0, 1]."""
    if quadrature == "gauss2":
        off = 1.0 / (2.0 * np.sqrt(3.0))
        return np.array([0.5 - off, 0.5 + off]), np.array([0.5, 0.5])
    if quadrature == "midpoint":
        return np.array([0.5]), np.array([1.0])
    raise ValueError(f"unknown quadrature rule {quadrature!r}")


_ASSEMBLY_CACHE: dict = {}


def _assembly(quadrature: str):
    """Reference shape values/derivatives at quadrature points (cached)."""
    if quadrature in _ASSEMBLY_CACHE:
        return _ASSEMBLY_CACHE[quadrature]
    t, w = _reference_rule(quadrature)
    npt = t.size
    nq = npt ** 3
    xi = np.empty((nq, 3))
    wq = np.empty(nq)
    q = 0
    for a in range(npt):
        for b in range(npt):
            for c in range(npt):
                xi[q] = (t[a], t[b], t[c])
                wq[q] = w[a] * w[b] * w[c]
                q += 1
    shp = np.empty((nq, 8))
    dshp = np.empty((nq, 8, 3))
    for ci, (bi, bj, bk) in enumerate(_CORNERS):
        l1 = np.where(bi, xi[:, 0], 1.0 - xi[:, 0])
        l2 = np.where(bj, xi[:, 1], 1.0 - xi[:, 1])
        l3 = np.where(bk, xi[:, 2], 1.0 - xi[:, 2])
        d1 = np.where(bi, 1.0, -1.0)
        d2 = np.where(bj, 1.0, -1.0)
        d3 = np.where(bk, 1.0, -1.0)
        shp[:, ci] = l1 * l2 * l3
        dshp[:, ci, 0] = d1 * l2 * l3
        dshp[:, ci, 1] = l1 * d2 * l3
        dshp[:, ci, 2] = l1 * l2 * d3
    out = {"xi": xi, "wq": wq, "shape": shp, "dshape": dshp}
    _ASSEMBLY_CACHE[quadrature] = out
    return out


@dataclass(frozen=True)
class CellMesh:
    """Structured mesh of a rectangle times (-1, 1).

    n1, n2, n3 count cells per direction (n3 >= 2 so the mid-plane is a
    mesh face); ``origin``/``lengths`` fix the in-plane rectangle.  The
    default rectangle is the unit cell Q' = (0, 1)^2.
    """

    n1: int
    n2: int
    n3: int
    origin: tuple = (0.0, 0.0)
    lengths: tuple = (1.0, 1.0)
    boundary_mode: str = LATERAL_ZERO
    quadrature: str = "gauss2"

    def __post_init__(self):
        if min(self.n1, self.n2) < 1 or self.n3 < 2:
            raise ValueError("need n1, n2 >= 1 and n3 >= 2")
        if self.boundary_mode not in _MODES:
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        if self.lengths[0] <= 0 or self.lengths[1] <= 0:
            raise ValueError("in-plane lengths must be positive")
        _reference_rule(self.quadrature)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))

    # -- geometry -----------------------------------------------------------

    @property
    def spacings(self):
        return (self.lengths[0] / self.n1, self.lengths[1] / self.n2, 2.0 / self.n3)

    @property
    def cell_volume(self):
        h1, h2, h3 = self.spacings
        return h1 * h2 * h3

    @property
    def volume(self):
        return self.lengths[0] * self.lengths[1] * 2.0

    @property
    def area(self):
        return self.lengths[0] * self.lengths[1]

    @property
    def node_shape(self):
        return (self.n1 + 1, self.n2 + 1, self.n3 + 1)

    def node_coords(self):
        """Arrays (x1, x2, x3) of node coordinates with broadcastable shapes."""
        h1, h2, h3 = self.spacings
        x1 = self.origin[0] + h1 * np.arange(self.n1 + 1)
        x2 = self.origin[1] + h2 * np.arange(self.n2 + 1)
        x3 = -1.0 + h3 * np.arange(self.n3 + 1)
        return x1, x2, x3

    def quad_coords(self):
        """Coordinates of all quadrature points, each of shape (n1,n2,n3,nq)."""
        asm = _assembly(self.quadrature)
        xi = asm["xi"]
        h1, h2, h3 = self.spacings
        i = np.arange(self.n1)[:, None, None, None]
        j = np.arange(self.n2)[None, :, None, None]
        k = np.arange(self.n3)[None, None, :, None]
        q1 = self.origin[0] + (i + xi[None, None, None, :, 0]) * h1
        q2 = self.origin[1] + (j + xi[None, None, None, :, 1]) * h2
        q3 = -1.0 + (k + xi[None, None, None, :, 2]) * h3
        shape = (self.n1, self.n2, self.n3, xi.shape[0])
        return (np.broadcast_to(q1, shape).copy(),
                np.broadcast_to(q2, shape).copy(),
                np.broadcast_to(q3, shape).copy())

    def quad_weights(self):
        """Physical weight of every quadrature point; sums to the slab volume."""
        asm = _assembly(self.quadrature)
        w = asm["wq"] * self.cell_volume
        return np.broadcast_to(w, (self.n1, self.n2, self.n3, w.size)).copy()


@dataclass
class DiscreteField:
    """Nodal 3-vector field on a CellMesh.

    ``constraint_meta`` optionally records a transverse-average target
    (a 3-vector ``target`` plus the scale used), checked to 1e-12 by
    ``constraint_residual``.
    """

    mesh: CellMesh
    values: np.ndarray
    constraint_meta: dict | None = None

    def __post_init__(self):
        expected = self.mesh.node_shape + (3,)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")

    @classmethod
    def zeros(cls, mesh: CellMesh):
        return cls(mesh, np.zeros(mesh.node_shape + (3,)))

    @classmethod
    def from_function(cls, mesh: CellMesh, fn):
        x1, x2, x3 = mesh.node_coords()
        X1 = x1[:, None, None]
        X2 = x2[None, :, None]
        X3 = x3[None, None, :]
        vals = np.asarray(fn(X1, X2, X3), dtype=float)
        vals = np.broadcast_to(vals, mesh.node_shape + (3,)).copy()
        return cls(mesh, vals)

    def copy(self):
        return DiscreteField(self.mesh, self.values.copy(),
                             None if self.constraint_meta is None
                             else dict(self.constraint_meta))

    def constraint_residual(self) -> float:
        """Deviation of the transverse average from its declared target."""
        if not self.constraint_meta or "target" not in self.constraint_meta:
            return 0.0
        target = np.asarray(self.constraint_meta["target"], dtype=float)
        scale = float(self.constraint_meta.get("scale", 1.0))
        avg = area_mean_transverse_average(self, scale)
        return float(np.linalg.norm(avg - target))


def affine_values(mesh: CellMesh, fbar, z=None):
    """Nodal values of the affine map x -> fbar . x_alpha (+ x3 * z)."""
    fbar = np.asarray(fbar, dtype=float).reshape(3, 2)
    x1, x2, x3 = mesh.node_coords()
    vals = (fbar[:, 0][None, None, None, :] * x1[:, None, None, None]
            + fbar[:, 1][None, None, None, :] * x2[None, :, None, None])
    vals = np.broadcast_to(vals, mesh.node_shape + (3,)).copy()
    if z is not None:
        z = np.asarray(z, dtype=float).reshape(3)
        vals += x3[None, None, :, None] * z[None, None, None, :]
    return vals


# ---------------------------------------------------------------------------
# Gradients and integrals
# ---------------------------------------------------------------------------

def _gather_corners(values, mesh):
    """Corner values per cell, shape (n1, n2, n3, 8, 3)."""
    n1, n2, n3 = mesh.n1, mesh.n2, mesh.n3
    out = np.empty((n1, n2, n3, 8, 3))
    for c, (ci, cj, ck) in enumerate(_CORNERS):
        out[:, :, :, c, :] = values[ci:ci + n1, cj:cj + n2, ck:ck + n3, :]
    return out


def scaled_gradient(field: DiscreteField, transverse_scale: float = 1.0):
    """Scaled gradients at quadrature points, shape (n1, n2, n3, nq, 3, 3).

    Entry [..., d, a] is the derivative of component d along direction a,
    with the transverse direction a = 2 multiplied by ``transverse_scale``.
    """
    return _scaled_gradient_arrays(field.values, field.mesh, transverse_scale)


def _scaled_gradient_arrays(values, mesh, transverse_scale):
    asm = _assembly(mesh.quadrature)
    h = mesh.spacings
    dshape = asm["dshape"] / np.asarray(h)[None, None, :]
    corners = _gather_corners(values, mesh)
    G = np.einsum("ijkcd,qca->ijkqda", corners, dshape, optimize=True)
    G[..., 2] *= transverse_scale
    return G


class EnergyContext:
    """Precomputed assembly data for repeated energy/gradient evaluation.

    Freezing the in-plane heterogeneity coordinate (``x_mode='frozen'``)
    evaluates the modulation at ``x0.x_alpha`` for every quadrature point
    while keeping the true x3; ``x_mode='full'`` uses the physical
    in-plane coordinates.  Constant offsets are added to the gradient
    before evaluating W: ``inplane_offset`` (3x2) to the membrane block,
    ``transverse_offset`` (3,) to the scaled transverse column, so cell
    problems keep their perturbation fields literally zero-valued on the
    constrained boundary.
    """

    def __init__(self, W: StoredEnergyDensity, mesh: CellMesh,
                 transverse_scale=1.0, prefactor=1.0, x_mode="full",
                 x0: MaterialPoint | None = None,
                 inplane_offset=None, transverse_offset=None):
        if x_mode not in ("full", "frozen", "point"):
            raise ValueError("x_mode must be 'full', 'frozen' or 'point'")
        if x_mode in ("frozen", "point") and x0 is None:
            raise ValueError("frozen and point modes need a material point x0")
        self.W = W
        self.mesh = mesh
        self.transverse_scale = float(transverse_scale)
        self.prefactor = float(prefactor)
        asm = _assembly(mesh.quadrature)
        h = mesh.spacings
        self._dshape = asm["dshape"] / np.asarray(h)[None, None, :]
        self._wq = asm["wq"] * mesh.cell_volume
        q1, q2, q3 = mesh.quad_coords()
        if x_mode == "point":
            # Both coordinates frozen: the heterogeneity is sampled once.
            xa = np.asarray(x0.x_alpha, dtype=float)
            const = float(W.modulation_values(xa, np.asarray(x0.x3)))
            self.modv = np.full(q3.shape, const)
        else:
            if x_mode == "frozen":
                xa = np.empty(q3.shape + (2,))
                xa[..., 0] = x0.x_alpha[0]
                xa[..., 1] = x0.x_alpha[1]
            else:
                xa = np.stack([q1, q2], axis=-1)
            self.modv = W.modulation_values(xa, q3)
        self.inplane_offset = (None if inplane_offset is None
                               else np.asarray(inplane_offset, dtype=float).reshape(3, 2))
        self.transverse_offset = (None if transverse_offset is None
                                  else np.asarray(transverse_offset, dtype=float).reshape(3))

    def _gradients(self, values):
        corners = _gather_corners(values, self.mesh)
        G = np.einsum("ijkcd,qca->ijkqda", corners, self._dshape, optimize=True)
        G[..., 2] *= self.transverse_scale
        if self.inplane_offset is not None:
            G[..., :2] += self.inplane_offset
        if self.transverse_offset is not None:
            G[..., 2] += self.transverse_offset
        return G

    def value(self, values) -> float:
        G = self._gradients(values)
        e = self.W.energy_array(self.modv, G)
        return self.prefactor * float(np.einsum("ijkq,q->", e, self._wq))

    def value_and_grad(self, values, offset_grads=False):
        """Energy and its exact gradient w.r.t. raw nodal values (full shape).

        With ``offset_grads=True`` additionally returns the derivatives of
        the energy w.r.t. the constant in-plane offset (3x2 array) and the
        constant transverse offset (3-vector); these drive outer descents
        over the offsets (joint transverse-vector minimization, density
        sources for the limit functional).
        """
        G = self._gradients(values)
        e = self.W.energy_array(self.modv, G)
        val = self.prefactor * float(np.einsum("ijkq,q->", e, self._wq))
        S = self.W.stress_array(self.modv, G)
        S *= (self.prefactor * self._wq)[None, None, None, :, None, None]
        d_off = None
        if offset_grads:
            total = np.einsum("ijkqda->da", S)
            d_off = (total[:, :2].copy(), total[:, 2].copy())
        S[..., 2] *= self.transverse_scale
        T = np.einsum("ijkqda,qca->ijkcd", S, self._dshape, optimize=True)
        grad = np.zeros(self.mesh.node_shape + (3,))
        n1, n2, n3 = self.mesh.n1, self.mesh.n2, self.mesh.n3
        for c, (ci, cj, ck) in enumerate(_CORNERS):
            grad[ci:ci + n1, cj:cj + n2, ck:ck + n3, :] += T[:, :, :, c, :]
        if offset_grads:
            return val, grad, d_off[0], d_off[1]
        return val, grad


def energy_integral(W, field: DiscreteField, transverse_scale=1.0, prefactor=1.0,
                    x_mode="full", x0=None, inplane_offset=None,
                    transverse_offset=None) -> float:
    """Quadrature value of prefactor * Int W(x; G(u; scale) + offsets) dx."""
    ctx = EnergyContext(W, field.mesh, transverse_scale, prefactor, x_mode, x0,
                        inplane_offset, transverse_offset)
    return ctx.value(field.values)


def energy_gradient(W, field: DiscreteField, transverse_scale=1.0, prefactor=1.0,
                    x_mode="full", x0=None, inplane_offset=None,
                    transverse_offset=None):
    """Exact gradient of ``energy_integral`` w.r.t. free nodal values.

    Returned with full nodal shape: constrained nodes carry zero, and in
    the periodic modes the twin-face contributions are folded onto the
    representative nodes.
    """
    ctx = EnergyContext(W, field.mesh, transverse_scale, prefactor, x_mode, x0,
                        inplane_offset, transverse_offset)
    _, grad = ctx.value_and_grad(field.values)
    return reduce_gradient(grad, field.mesh)


# ---------------------------------------------------------------------------
# Boundary modes: packing free dofs and reducing gradients
# ---------------------------------------------------------------------------

def free_size(mesh: CellMesh) -> int:
    n1, n2, n3 = mesh.n1, mesh.n2, mesh.n3
    if mesh.boundary_mode in (LATERAL_ZERO, LATERAL_AFFINE):
        return max(n1 - 1, 0) * max(n2 - 1, 0) * (n3 + 1) * 3
    if mesh.boundary_mode == LATERAL_PERIODIC:
        return n1 * n2 * (n3 + 1) * 3
    return n1 * n2 * n3 * 3


def pack(values, mesh: CellMesh):
    """Extract the free degrees of freedom as a flat vector."""
    n1, n2, n3 = mesh.n1, mesh.n2, mesh.n3
    if mesh.boundary_mode in (LATERAL_ZERO, LATERAL_AFFINE):
        return values[1:n1, 1:n2, :, :].ravel().copy()
    if mesh.boundary_mode == LATERAL_PERIODIC:
        return values[:n1, :n2, :, :].ravel().copy()
    return values[:n1, :n2, :n3, :].ravel().copy()


def unpack(vec, mesh: CellMesh, datum=None):
    """Rebuild full nodal values from a free-dof vector.

    ``datum`` supplies the pinned boundary values in ``lateral-affine``
    mode (full nodal array); other modes ignore it.
    """
    n1, n2, n3 = mesh.n1, mesh.n2, mesh.n3
    if mesh.boundary_mode in (LATERAL_ZERO, LATERAL_AFFINE):
        if mesh.boundary_mode == LATERAL_AFFINE:
            if datum is None:
                raise ValueError("lateral-affine mode needs a boundary datum")
            values = datum.copy()
        else:
            values = np.zeros(mesh.node_shape + (3,))
        values[1:n1, 1:n2, :, :] = vec.reshape(n1 - 1, n2 - 1, n3 + 1, 3)
        return values
    values = np.zeros(mesh.node_shape + (3,))
    if mesh.boundary_mode == LATERAL_PERIODIC:
        values[:n1, :n2, :, :] = vec.reshape(n1, n2, n3 + 1, 3)
        values[n1, :, :, :] = values[0, :, :, :]
        values[:, n2, :, :] = values[:, 0, :, :]
        return values
    values[:n1, :n2, :n3, :] = vec.reshape(n1, n2, n3, 3)
    values[n1, :, :, :] = values[0, :, :, :]
    values[:, n2, :, :] = values[:, 0, :, :]
    values[:, :, n3, :] = values[:, :, 0, :]
    return values


def reduce_gradient(grad, mesh: CellMesh):
    """Fold a raw nodal gradient onto the free parametrization.

    Periodic twins accumulate onto representatives; constrained nodes are
    zeroed.  The result has full nodal shape and satisfies
    ``pack(reduce_gradient(g)) == d(energy)/d(packed dofs)``.
    """
    g = grad.copy()
    n1, n2, n3 = mesh.n1, mesh.n2, mesh.n3
    if mesh.boundary_mode in (LATERAL_ZERO, LATERAL_AFFINE):
        g[0, :, :, :] = 0.0
        g[n1, :, :, :] = 0.0
        g[:, 0, :, :] = 0.0
        g[:, n2, :, :] = 0.0
        return g
    g[0, :, :, :] += g[n1, :, :, :]
    g[n1, :, :, :] = 0.0
    g[:, 0, :, :] += g[:, n2, :, :]
    g[:, n2, :, :] = 0.0
    if mesh.boundary_mode == FULLY_PERIODIC:
        g[:, :, 0, :] += g[:, :, n3, :]
        g[:, :, n3, :] = 0.0
    return g


# ---------------------------------------------------------------------------
# Transverse average, refinement, serialization
# ---------------------------------------------------------------------------

def transverse_average(field: DiscreteField, scale: float):
    """Nodal field scale * Int_{-1}^{1} D_3 u dx3 / ... per lateral position.

    The trapezoidal x3-average of D_3 u telescopes exactly, so the result
    equals ``scale * (u(., 1) - u(., -1))`` nodewise; with
    ``scale = 1/(2 eps)`` this is the Cosserat vector of a thin-film
    state.  Shape (n1+1, n2+1, 3).
    """
    u = field.values
    return float(scale) * (u[:, :, -1, :] - u[:, :, 0, :])


def area_mean_transverse_average(field: DiscreteField, scale: float):
    """In-plane area mean of ``transverse_average`` (trapezoid weights)."""
    mesh = field.mesh
    ta = transverse_average(field, scale)
    w1 = np.ones(mesh.n1 + 1)
    w1[0] = w1[-1] = 0.5
    w2 = np.ones(mesh.n2 + 1)
    w2[0] = w2[-1] = 0.5
    w = w1[:, None] * w2[None, :]
    return np.einsum("ij,ijd->d", w, ta) / w.sum()


def refine_mesh(mesh: CellMesh) -> CellMesh:
    """Dyadic refinement: every cell splits into 8."""
    return replace(mesh, n1=2 * mesh.n1, n2=2 * mesh.n2, n3=2 * mesh.n3)


def inject(field: DiscreteField, fine_mesh: CellMesh | None = None) -> DiscreteField:
    """Embed a field into the dyadically refined mesh.

    New nodes take the trilinear interpolant values, so the injected
    field represents the same function and every energy integral that
    the quadrature evaluates exactly is preserved to roundoff.
    """
    mesh = field.mesh
    fine = fine_mesh or refine_mesh(mesh)
    if (fine.n1, fine.n2, fine.n3) != (2 * mesh.n1, 2 * mesh.n2, 2 * mesh.n3):
        raise ValueError("inject expects the dyadic refinement of the coarse mesh")
    u = field.values
    for axis in range(3):
        n_old = u.shape[axis]
        shape = list(u.shape)
        shape[axis] = 2 * n_old - 1
        out = np.zeros(shape)
        sl_even = [slice(None)] * u.ndim
        sl_even[axis] = slice(0, None, 2)
        out[tuple(sl_even)] = u
        sl_odd = [slice(None)] * u.ndim
        sl_odd[axis] = slice(1, None, 2)
        sl_lo = [slice(None)] * u.ndim
        sl_lo[axis] = slice(0, n_old - 1)
        sl_hi = [slice(None)] * u.ndim
        sl_hi[axis] = slice(1, n_old)
        out[tuple(sl_odd)] = 0.5 * (u[tuple(sl_lo)] + u[tuple(sl_hi)])
        u = out
    return DiscreteField(fine, u,
                         None if field.constraint_meta is None
                         else dict(field.constraint_meta))


def dump_grid_text(field: DiscreteField, path):
    """Write nodal values as text lines ``i j k u1 u2 u3``.

    A commented header records the mesh so external tools can rebuild the
    structured grid.
    """
    mesh = field.mesh
    with open(path, "w") as fh:
        fh.write("# filmcell structured grid field v1\n")
        fh.write(f"# cells {mesh.n1} {mesh.n2} {mesh.n3}\n")
        fh.write(f"# origin {mesh.origin[0]!r} {mesh.origin[1]!r}\n")
        fh.write(f"# lengths {mesh.lengths[0]!r} {mesh.lengths[1]!r}\n")
        fh.write("# columns i j k u1 u2 u3\n")
        for i in range(mesh.n1 + 1):
            for j in range(mesh.n2 + 1):
                for k in range(mesh.n3 + 1):
                    u = field.values[i, j, k]
                    fh.write(f"{i} {j} {k} {float(u[0])!r} "
                             f"{float(u[1])!r} {float(u[2])!r}\n")


def read_grid_text(path, mesh: CellMesh) -> DiscreteField:
    """Inverse of ``dump_grid_text`` for a known mesh."""
    values = np.zeros(mesh.node_shape + (3,))
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            i, j, k = int(parts[0]), int(parts[1]), int(parts[2])
            values[i, j, k] = [float(parts[3]), float(parts[4]), float(parts[5])]
    return DiscreteField(mesh, values)
