"""Tests for density table building, interpolation, and the file format."""

import numpy as np
import pytest

from filmcell.cell import CellProblemSpec, membrane_density
from filmcell.field import CellMesh
from filmcell.integrand import GrowthSpec, MaterialPoint, pnorm_density
from filmcell.tabulate import (
    DensityTable,
    ExtrapolationError,
    SampleGrid,
    TableParseError,
    build_table,
    check_z_convexity,
    export_csv,
    interpolate_with_gradient,
    load_table,
    query,
    save_table,
    table_integrand,
)

FROZEN = ("frozen", 0.0)
W_QUAD = pnorm_density(p=2.0)
TEMPLATE = CellProblemSpec(fbar=np.zeros((3, 2)), mesh=CellMesh(2, 2, 2))


def membrane_grid(points=((0.5, 0.5),), count=3):
    return SampleGrid(
        x_points=points,
        f_axes=(("range", -0.5, 0.5, count),) + (FROZEN,) * 5,
    )


def cosserat_grid(count=3):
    return SampleGrid(
        x_points=((0.5, 0.5),),
        f_axes=(
            ("range", -0.5, 0.5, count),
            FROZEN, FROZEN,
            ("range", -0.4, 0.4, 2),
            FROZEN, FROZEN,
        ),
        z_axes=(FROZEN, FROZEN, ("range", -0.5, 0.5, count)),
    )


def test_axis_validation():
    with pytest.raises(ValueError, match="at least two"):
        SampleGrid(((0.5, 0.5),), (("range", 0.0, 1.0, 1),) + (FROZEN,) * 5)
    with pytest.raises(ValueError, match="lo < hi"):
        SampleGrid(((0.5, 0.5),), (("range", 1.0, 0.0, 3),) + (FROZEN,) * 5)
    with pytest.raises(ValueError, match="unknown axis"):
        SampleGrid(((0.5, 0.5),), (("linspace", 0.0, 1.0, 3),) + (FROZEN,) * 5)
    with pytest.raises(ValueError, match="six entries"):
        SampleGrid(((0.5, 0.5),), (FROZEN,) * 5)
    with pytest.raises(ValueError, match="three entries"):
        SampleGrid(((0.5, 0.5),), (FROZEN,) * 6, z_axes=(FROZEN,) * 2)
    with pytest.raises(ValueError, match="sample point"):
        SampleGrid((), (FROZEN,) * 6)


def test_kind_validation():
    with pytest.raises(ValueError, match="membrane.*cosserat"):
        build_table(W_QUAD, membrane_grid(), "effective", TEMPLATE)
    with pytest.raises(ValueError, match="need z axes"):
        build_table(W_QUAD, membrane_grid(), "cosserat", TEMPLATE)
    with pytest.raises(ValueError, match="no z axes"):
        build_table(W_QUAD, cosserat_grid(), "membrane", TEMPLATE)


def test_grid_shape_and_node_args():
    grid = cosserat_grid(count=3)
    assert grid.shape == (1, 3, 1, 1, 2, 1, 1, 1, 1, 3)
    assert grid.node_count == 18
    x_alpha, fbar, z = grid.node_args(0)
    assert x_alpha == (0.5, 0.5)
    assert fbar[0, 0] == -0.5 and fbar[1, 1] == -0.4
    assert z[2] == -0.5
    # last node sits at the top corner of every active axis
    _, fbar, z = grid.node_args(grid.node_count - 1)
    assert fbar[0, 0] == 0.5 and fbar[1, 1] == 0.4 and z[2] == 0.5


def test_grid_config_round_trip():
    grid = cosserat_grid()
    assert SampleGrid.from_config(grid.to_config()) == grid


def test_build_membrane_nodes_exact():
    grid = membrane_grid()
    table = build_table(W_QUAD, grid, "membrane", TEMPLATE)
    assert table.pending == 0 and table.invalid == 0
    assert table.provenance["integrand_hash"] == W_QUAD.content_hash()
    for f00, want in [(-0.5, 0.25), (0.0, 0.0), (0.5, 0.25)]:
        fbar = np.zeros((3, 2))
        fbar[0, 0] = f00
        assert abs(query(table, (0.5, 0.5), fbar) - want) < 1e-10
    assert table.summary() == {
        "kind": "membrane", "nodes": 3, "pending": 0, "invalid": 0,
        "integrand_hash": W_QUAD.content_hash()}


def test_fully_frozen_grid_matches_direct_solve():
    fbar = np.array([[0.3, 0.1], [0.0, -0.2], [0.1, 0.0]])
    axes = tuple(("frozen", float(v)) for v in fbar.ravel())
    grid = SampleGrid(((0.25, 0.75),), axes)
    table = build_table(W_QUAD, grid, "membrane", TEMPLATE)
    from dataclasses import replace
    spec = replace(TEMPLATE, fbar=fbar, x0=MaterialPoint((0.25, 0.75), 0.0))
    direct = membrane_density(W_QUAD, spec)
    assert table.values.ravel()[0] == direct.value
    assert query(table, (0.25, 0.75), fbar) == direct.value


def test_threaded_build_matches_serial():
    grid = cosserat_grid()
    serial = build_table(W_QUAD, grid, "cosserat", TEMPLATE, threads=1)
    threaded = build_table(W_QUAD, grid, "cosserat", TEMPLATE, threads=3)
    assert np.array_equal(serial.values, threaded.values)
    assert np.array_equal(serial.mask, threaded.mask)


def test_node_limit_and_resume_bitwise():
    grid = cosserat_grid()
    fresh = build_table(W_QUAD, grid, "cosserat", TEMPLATE)
    part = build_table(W_QUAD, grid, "cosserat", TEMPLATE, node_limit=7)
    assert part.pending == grid.node_count - 7
    done = build_table(W_QUAD, grid, "cosserat", TEMPLATE, resume=part)
    assert done.pending == 0
    assert np.array_equal(done.values, fresh.values)
    assert np.array_equal(done.mask, fresh.mask)
    # progress reporting covers exactly the remaining nodes
    seen = []
    build_table(W_QUAD, grid, "cosserat", TEMPLATE, resume=part,
                progress=lambda d, t: seen.append((d, t)))
    assert seen[0] == (1, grid.node_count - 7)
    assert seen[-1] == (grid.node_count - 7, grid.node_count - 7)


def test_resume_rejects_mismatched_provenance():
    grid = cosserat_grid()
    part = build_table(W_QUAD, grid, "cosserat", TEMPLATE, node_limit=2)
    other = pnorm_density(p=2.0, scale=2.0)
    with pytest.raises(ValueError, match="provenance"):
        build_table(other, grid, "cosserat", TEMPLATE, resume=part)
    with pytest.raises(ValueError, match="grid"):
        build_table(W_QUAD, cosserat_grid(count=4), "cosserat", TEMPLATE,
                    resume=part)


def test_query_interpolates_between_nodes():
    table = build_table(W_QUAD, membrane_grid(), "membrane", TEMPLATE)
    fbar = np.zeros((3, 2))
    fbar[0, 0] = 0.25
    # chord of the quadratic between the nodes at 0 and 0.5
    assert abs(query(table, (0.5, 0.5), fbar) - 0.125) < 1e-10


def test_query_second_sample_point():
    grid = membrane_grid(points=((0.2, 0.2), (0.8, 0.8)))
    table = build_table(W_QUAD, grid, "membrane", TEMPLATE)
    fbar = np.zeros((3, 2))
    fbar[0, 0] = 0.5
    assert abs(query(table, (0.8, 0.8), fbar) - 0.25) < 1e-10


def test_query_argument_errors():
    mem = build_table(W_QUAD, membrane_grid(), "membrane", TEMPLATE)
    cos = build_table(W_QUAD, cosserat_grid(), "cosserat", TEMPLATE)
    fbar = np.zeros((3, 2))
    with pytest.raises(ValueError, match="x_alpha"):
        query(mem, (0.9, 0.9), fbar)
    off = fbar.copy()
    off[0, 1] = 0.3
    with pytest.raises(ExtrapolationError, match="frozen at"):
        query(mem, (0.5, 0.5), off)
    big = fbar.copy()
    big[0, 0] = 2.0
    with pytest.raises(ExtrapolationError, match="outside"):
        query(mem, (0.5, 0.5), big)
    with pytest.raises(ValueError, match="no z"):
        query(mem, (0.5, 0.5), fbar, z=np.zeros(3))
    with pytest.raises(ValueError, match="pass a z"):
        query(cos, (0.5, 0.5), fbar)


def test_interpolation_gradient_matches_differences():
    table = build_table(W_QUAD, cosserat_grid(count=4), "cosserat", TEMPLATE)
    fbar = np.zeros((3, 2))
    fbar[0, 0] = 0.13
    fbar[1, 1] = -0.2
    z = np.array([0.0, 0.0, 0.17])
    val, dF, dz = interpolate_with_gradient(table, (0.5, 0.5), fbar, z)
    h = 1e-7
    for idx in [(0, 0), (1, 1)]:
        delta = np.zeros((3, 2))
        delta[idx] = h
        fd = (query(table, (0.5, 0.5), fbar + delta, z)
              - query(table, (0.5, 0.5), fbar - delta, z)) / (2 * h)
        assert abs(fd - dF[idx]) < 1e-6
    fd = (query(table, (0.5, 0.5), fbar, z + [0, 0, h])
          - query(table, (0.5, 0.5), fbar, z - [0, 0, h])) / (2 * h)
    assert abs(fd - dz[2]) < 1e-6
    # frozen axes carry no slope
    assert dF[0, 1] == 0.0 and dF[2, 0] == 0.0
    assert dz[0] == 0.0 and dz[1] == 0.0


def test_save_load_round_trip(tmp_path):
    table = build_table(W_QUAD, cosserat_grid(), "cosserat", TEMPLATE)
    path = tmp_path / "table.fct"
    save_table(table, path)
    assert path.read_bytes().startswith(b"filmcell-table")
    back = load_table(path)
    assert back.grid == table.grid
    assert back.kind == table.kind
    assert np.array_equal(back.values, table.values)
    assert np.array_equal(back.mask, table.mask)
    assert back.provenance == table.provenance


@pytest.mark.parametrize("tamper,message", [
    (lambda d: d.replace(b"filmcell-table", b"some-other-file"), "bad magic"),
    (lambda d: d.replace(b"filmcell-table 1", b"filmcell-table 99"),
     "format version"),
    (lambda d: d.replace(b"end-header\n", b"end-heater\n"), "sentinel"),
    (lambda d: d[:-8], "truncated value block"),
    (lambda d: d[:-1] + bytes([d[-1] ^ 0xFF]), "checksum mismatch"),
])
def test_load_rejects_corruption(tmp_path, tamper, message):
    table = build_table(W_QUAD, membrane_grid(), "membrane", TEMPLATE)
    path = tmp_path / "table.fct"
    save_table(table, path)
    (tmp_path / "bad.fct").write_bytes(tamper(path.read_bytes()))
    with pytest.raises(TableParseError, match=message):
        load_table(tmp_path / "bad.fct")


def test_load_rejects_bad_mask(tmp_path):
    table = build_table(W_QUAD, membrane_grid(), "membrane", TEMPLATE)
    good = tmp_path / "table.fct"
    save_table(table, good)
    data = good.read_bytes()
    mask_hex = bytes(table.mask.ravel().astype(np.uint8)).hex()
    short = tmp_path / "short.fct"
    short.write_bytes(data.replace(f"mask: {mask_hex}".encode(),
                                   b"mask: 0101"))
    with pytest.raises(TableParseError, match="mask length"):
        load_table(short)
    codes = tmp_path / "codes.fct"
    codes.write_bytes(data.replace(f"mask: {mask_hex}".encode(),
                                   b"mask: 010107"))
    with pytest.raises(TableParseError, match="unknown codes"):
        load_table(codes)


def test_lying_lower_bound_invalidates_nodes():
    # the claimed quartic coercivity overtakes the true quadratic
    # density beyond |Fbar| = 1, so the outer nodes fail the sandwich
    # audit while the inner span stays usable
    liar = pnorm_density(p=2.0, growth=GrowthSpec(4.0, 0.9, 10.0))
    grid = SampleGrid(((0.5, 0.5),),
                      (("range", -2.0, 2.0, 5),) + (FROZEN,) * 5)
    table = build_table(liar, grid, "membrane", TEMPLATE)
    assert list(table.mask.ravel()) == [2, 1, 1, 1, 2]
    fbar = np.zeros((3, 2))
    fbar[0, 0] = 0.5
    assert abs(query(table, (0.5, 0.5), fbar) - 0.5) < 1e-10
    fbar[0, 0] = 1.5
    with pytest.raises(ValueError, match="cannot interpolate"):
        query(table, (0.5, 0.5), fbar)


def test_check_z_convexity_reports():
    table = build_table(W_QUAD, cosserat_grid(), "cosserat", TEMPLATE)
    report = check_z_convexity(table)
    assert report["violations"] == 0
    assert report["checked"] > 0
    assert report["worst_excess"] <= 1e-8
    # no z axes: nothing to check
    mem = build_table(W_QUAD, membrane_grid(), "membrane", TEMPLATE)
    assert check_z_convexity(mem)["checked"] == 0
    # a bump in the middle of a z line is a genuine violation
    bumped = DensityTable(table.grid, table.kind, table.values.copy(),
                          table.mask.copy(), table.provenance)
    mid = [0] * bumped.values.ndim
    mid[-1] = 1
    bumped.values[tuple(mid)] += 1.0
    report = check_z_convexity(bumped)
    assert report["violations"] >= 1
    assert report["worst_excess"] > 0.1


def test_export_csv(tmp_path):
    table = build_table(W_QUAD, cosserat_grid(), "cosserat", TEMPLATE)
    path = tmp_path / "table.csv"
    export_csv(table, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ("x1,x2,f00,f01,f10,f11,f20,f21,z0,z1,z2,value,mask")
    assert len(lines) == 1 + table.grid.node_count
    first = lines[1].split(",")
    assert float(first[0]) == 0.5
    assert float(first[2]) == -0.5
    assert int(first[-1]) == 1
    # round-trippable floats by construction
    x_alpha, fbar, z = table.grid.node_args(0)
    assert float(first[11]) == table.values.ravel()[0]


def test_table_integrand_round_trip():
    table = build_table(W_QUAD, membrane_grid(), "membrane", TEMPLATE)
    W2 = table_integrand(table)
    assert W2.content_hash() == W_QUAD.content_hash()
    pt = MaterialPoint((0.5, 0.5), 0.0)
    F = np.array([[0.3, 0.0, 0.1], [0.0, 0.2, 0.0], [0.0, 0.0, -0.4]])
    assert W2.evaluate(pt, F) == W_QUAD.evaluate(pt, F)
