"""Trilinear fields, scaled gradients, and energy assembly."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filmcell.field import (FULLY_PERIODIC, LATERAL_AFFINE, LATERAL_PERIODIC,
                            LATERAL_ZERO, CellMesh, DiscreteField,
                            EnergyContext, affine_values, energy_gradient,
                            energy_integral, free_size, inject, pack,
                            read_grid_text, reduce_gradient, refine_mesh,
                            scaled_gradient, transverse_average, unpack)
from filmcell.integrand import MaterialPoint, pnorm_density, two_well_density
from oracles import rel_err

W2 = pnorm_density(2.0)


def rand_field(mesh, rng, scale=0.1):
    return DiscreteField(mesh, scale * rng.normal(
        size=mesh.node_shape + (3,)))


def test_mesh_geometry():
    mesh = CellMesh(2, 3, 4, origin=(1.0, 2.0), lengths=(2.0, 3.0))
    x1, x2, x3 = mesh.node_coords()
    assert x1[0] == 1.0 and x1[-1] == 3.0 and len(x1) == 3
    assert x2[0] == 2.0 and x2[-1] == 5.0 and len(x2) == 4
    assert x3[0] == -1.0 and x3[-1] == 1.0 and len(x3) == 5
    assert mesh.node_shape == (3, 4, 5)


def test_affine_values_reproduce_gradient():
    mesh = CellMesh(3, 2, 2)
    fbar = np.array([[0.3, -0.1], [0.0, 0.5], [0.2, 0.0]])
    z = np.array([0.1, -0.2, 0.4])
    field = DiscreteField(mesh, affine_values(mesh, fbar, z))
    G = scaled_gradient(field)
    want = np.concatenate([fbar, z[:, None]], axis=1)
    assert np.max(np.abs(G - want)) < 1e-13


def test_scaled_gradient_transverse_scale():
    mesh = CellMesh(2, 2, 2)
    z = np.array([0.0, 0.0, 1.0])
    field = DiscreteField(mesh, affine_values(mesh, np.zeros((3, 2)), z))
    G = scaled_gradient(field, transverse_scale=4.0)
    assert G[..., 2, 2] == pytest.approx(4.0)


def test_energy_integral_affine_quadratic():
    # exact for |F|^2: the integrand is constant at an affine state
    mesh = CellMesh(3, 3, 3)
    fbar = np.array([[0.5, 0.0], [0.0, -0.3], [0.1, 0.2]])
    field = DiscreteField(mesh, affine_values(mesh, fbar))
    val = energy_integral(W2, field)
    # measure of the cell is 2 (unit square times (-1, 1))
    assert val == pytest.approx(2.0 * np.sum(fbar ** 2), rel=1e-12)
    val_half = energy_integral(W2, field, prefactor=0.5)
    assert val_half == pytest.approx(np.sum(fbar ** 2), rel=1e-12)


def test_energy_gradient_matches_fd():
    mesh = CellMesh(2, 2, 2, boundary_mode=LATERAL_ZERO)
    rng = np.random.default_rng(0)
    vec = 0.1 * rng.normal(size=free_size(mesh))
    field = DiscreteField(mesh, unpack(vec, mesh))
    grad = energy_gradient(W2, field, transverse_scale=1.7)
    red = pack(grad, mesh)
    h = 1e-6
    for k in rng.choice(len(vec), size=8, replace=False):
        vp, vm = vec.copy(), vec.copy()
        vp[k] += h
        vm[k] -= h
        fp = energy_integral(W2, DiscreteField(mesh, unpack(vp, mesh)),
                             transverse_scale=1.7)
        fm = energy_integral(W2, DiscreteField(mesh, unpack(vm, mesh)),
                             transverse_scale=1.7)
        assert rel_err(red[k], (fp - fm) / (2 * h)) < 1e-6


@pytest.mark.parametrize("mode,expect", [
    (LATERAL_ZERO, lambda m: (m.n1 - 1) * (m.n2 - 1) * (m.n3 + 1) * 3),
    (LATERAL_PERIODIC, lambda m: m.n1 * m.n2 * (m.n3 + 1) * 3),
    (LATERAL_AFFINE, lambda m: (m.n1 - 1) * (m.n2 - 1) * (m.n3 + 1) * 3),
    (FULLY_PERIODIC, lambda m: m.n1 * m.n2 * m.n3 * 3),
])
def test_free_size_by_mode(mode, expect):
    mesh = CellMesh(3, 4, 2, boundary_mode=mode)
    assert free_size(mesh) == expect(mesh)


@pytest.mark.parametrize("mode", [LATERAL_ZERO, LATERAL_PERIODIC,
                                  LATERAL_AFFINE, FULLY_PERIODIC])
def test_pack_unpack_round_trip(mode):
    mesh = CellMesh(3, 2, 2, boundary_mode=mode)
    rng = np.random.default_rng(5)
    vec = rng.normal(size=free_size(mesh))
    datum = affine_values(mesh, np.array([[0.2, 0.0], [0.0, 0.1], [0.0, 0.0]]))
    values = unpack(vec, mesh, datum if mode == LATERAL_AFFINE else None)
    back = pack(values, mesh)
    assert np.allclose(back, vec, atol=1e-14)


def test_periodic_unpack_ties_faces():
    mesh = CellMesh(3, 3, 2, boundary_mode=LATERAL_PERIODIC)
    rng = np.random.default_rng(6)
    values = unpack(rng.normal(size=free_size(mesh)), mesh)
    assert np.array_equal(values[0], values[-1])
    assert np.array_equal(values[:, 0], values[:, -1])


def test_transverse_average_of_ramp():
    mesh = CellMesh(2, 2, 4)
    z = np.array([0.2, -0.4, 1.0])
    field = DiscreteField(mesh, affine_values(mesh, np.zeros((3, 2)), z))
    # nodal map scale * (u(top) - u(bottom)); the ramp gives z back
    got = transverse_average(field, 0.5)
    assert got.shape == (3, 3, 3)
    assert np.allclose(got, np.broadcast_to(z, got.shape), atol=1e-13)


def test_energy_context_frozen_vs_full():
    lam = pnorm_density(2.0)
    from filmcell.integrand import TransverseLaminate
    lam = pnorm_density(2.0, modulation=TransverseLaminate((1.0, 3.0), (0.0,)))
    mesh = CellMesh(2, 2, 2)
    fbar = np.array([[0.4, 0.0], [0.0, 0.0], [0.0, 0.0]])
    field = DiscreteField(mesh, affine_values(mesh, fbar))
    full = EnergyContext(lam, mesh).value(field.values)
    frozen = EnergyContext(lam, mesh, x_mode="frozen",
                           x0=MaterialPoint((0.5, 0.5), 0.0)).value(field.values)
    # full mode reads the laminate through the thickness: mean level 2;
    # frozen mode still tracks x3 (only x_alpha is pinned), same here
    assert full == pytest.approx(2.0 * 2.0 * 0.16, rel=1e-12)
    assert frozen == pytest.approx(full, rel=1e-12)


def test_energy_context_offsets_shift_the_argument():
    mesh = CellMesh(2, 2, 2, boundary_mode=LATERAL_PERIODIC)
    fbar = np.array([[0.3, 0.1], [0.0, -0.2], [0.4, 0.0]])
    z = np.array([0.25, 0.0, -0.5])
    ctx = EnergyContext(W2, mesh, x_mode="frozen",
                        x0=MaterialPoint((0.5, 0.5), 0.0),
                        inplane_offset=fbar, transverse_offset=z)
    val = ctx.value(np.zeros(mesh.node_shape + (3,)))
    assert val == pytest.approx(2.0 * (np.sum(fbar ** 2) + np.sum(z ** 2)),
                                rel=1e-12)


def test_energy_context_offset_gradients():
    mesh = CellMesh(2, 2, 2, boundary_mode=LATERAL_PERIODIC)
    rng = np.random.default_rng(7)
    psi = 0.05 * rng.normal(size=mesh.node_shape + (3,))
    psi[0] = psi[-1]
    psi[:, 0] = psi[:, -1]
    fbar = 0.3 * rng.normal(size=(3, 2))
    z = 0.3 * rng.normal(size=3)

    def value_at(fb, zz):
        ctx = EnergyContext(W2, mesh, x_mode="frozen",
                            x0=MaterialPoint((0.5, 0.5), 0.0),
                            inplane_offset=fb, transverse_offset=zz)
        return ctx.value(psi)

    ctx = EnergyContext(W2, mesh, x_mode="frozen",
                        x0=MaterialPoint((0.5, 0.5), 0.0),
                        inplane_offset=fbar, transverse_offset=z)
    _, _, dF, dz = ctx.value_and_grad(psi, offset_grads=True)
    h = 1e-6
    for d in range(3):
        for a in range(2):
            e = np.zeros((3, 2))
            e[d, a] = h
            fd = (value_at(fbar + e, z) - value_at(fbar - e, z)) / (2 * h)
            assert rel_err(dF[d, a], fd) < 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd = (value_at(fbar, z + e) - value_at(fbar, z - e)) / (2 * h)
        assert rel_err(dz[d], fd) < 1e-6


def test_refine_and_inject_preserve_function():
    mesh = CellMesh(2, 2, 2)
    fine = refine_mesh(mesh)
    assert (fine.n1, fine.n2, fine.n3) == (4, 4, 4)
    rng = np.random.default_rng(8)
    field = rand_field(mesh, rng)
    up = inject(field)
    # trilinear functions are reproduced exactly at the fine nodes
    assert np.allclose(up.values[::2, ::2, ::2], field.values, atol=1e-14)
    v = energy_integral(W2, field)
    v_up = energy_integral(W2, up)
    assert v_up == pytest.approx(v, rel=1e-12)


def test_grid_text_round_trip(tmp_path):
    mesh = CellMesh(2, 3, 2)
    rng = np.random.default_rng(9)
    field = rand_field(mesh, rng)
    path = tmp_path / "field.grid"
    from filmcell.field import dump_grid_text
    dump_grid_text(field, path)
    back = read_grid_text(path, mesh)
    assert np.array_equal(back.values, field.values)


def test_nonconvex_energy_assembly_positive():
    A = np.diag([0.5, 0.0, 0.0])
    W = two_well_density(A)
    mesh = CellMesh(2, 2, 2)
    rng = np.random.default_rng(10)
    field = rand_field(mesh, rng)
    assert energy_integral(W, field) >= 0.0


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_reduce_gradient_is_adjoint_of_unpack(seed):
    # <grad, unpack(e)> == <pack(reduce(grad)), e> for all basis e
    mesh = CellMesh(2, 2, 2, boundary_mode=LATERAL_PERIODIC)
    rng = np.random.default_rng(seed)
    grad = rng.normal(size=mesh.node_shape + (3,))
    vec = rng.normal(size=free_size(mesh))
    lhs = float(np.sum(grad * unpack(vec, mesh)))
    rhs = float(pack(reduce_gradient(grad, mesh), mesh) @ vec)
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))
