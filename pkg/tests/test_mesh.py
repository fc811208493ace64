import io

import numpy as np
import pytest
from fractions import Fraction

from fourierdd.mesh import (Mesh, MeshFamilySpec, interface_edge_partition,
                            locate_points, ns_mesh_family, poisson_mesh_pair,
                            retag_boundary, structured_rect_mesh,
                            triangle_areas, write_mesh_text,
                            NS_SUBDOMAIN_RECTS, NS_SUBDOMAIN_SIZES)


@pytest.mark.parametrize("rect,nx,ny,nv,nt", [
    ((0, 1, 0, 1), 1, 1, 4, 2),
    ((0, 1, 0, 1), 20, 20, 441, 800),
    ((0, 0.5, 0, 1), 10, 21, 242, 420),
])
def test_structured_counts(rect, nx, ny, nv, nt):
    m = structured_rect_mesh(rect, nx, ny)
    assert m.num_vertices == nv
    assert m.num_triangles == nt


@pytest.mark.parametrize("nx,ny", [(0, 1), (1, 0), (-2, 3)])
def test_structured_rejects_bad_counts(nx, ny):
    with pytest.raises(ValueError):
        structured_rect_mesh((0, 1, 0, 1), nx, ny)


@pytest.mark.parametrize("rect,nx,ny", [
    ((0, 1, 0, 1), 1, 1),
    ((0, 0.5, 0, 1), 3, 7),
    ((0.5, 1.0, 0.25, 0.5), 4, 2),
])
def test_mesh_invariants(rect, nx, ny):
    m = structured_rect_mesh(rect, nx, ny)
    areas = triangle_areas(m)
    assert np.all(areas > 0), "triangles must be counterclockwise"
    target = (rect[1] - rect[0]) * (rect[3] - rect[2])
    assert abs(areas.sum() - target) <= 1e-12 * target
    # each boundary edge belongs to one triangle, interior edges to two
    counts = {}
    for a, b, c in m.triangles:
        for e in ((a, b), (b, c), (c, a)):
            counts[tuple(sorted(e))] = counts.get(tuple(sorted(e)), 0) + 1
    boundary = {tuple(sorted(e)) for e, _ in m.boundary_edges}
    for e, n in counts.items():
        assert n == (1 if e in boundary else 2)
    assert boundary <= set(counts)
    lo = m.vertices.min(axis=0)
    hi = m.vertices.max(axis=0)
    assert lo[0] >= rect[0] - 1e-14 and hi[0] <= rect[1] + 1e-14
    assert lo[1] >= rect[2] - 1e-14 and hi[1] <= rect[3] + 1e-14


def test_poisson_pair_conforming_rows():
    m1, m2 = poisson_mesh_pair(20, conforming=True)
    assert m2.ny == 20 and m2.nx == 10
    assert m1.ny == 20 and m1.nx == 10


def test_poisson_pair_nonconforming_rows():
    m1, m2 = poisson_mesh_pair(20, conforming=False)
    assert m2.ny == 21
    iv1 = {tuple(v) for v in m1.vertices if abs(v[0] - 0.5) < 1e-14}
    iv2 = {tuple(v) for v in m2.vertices if abs(v[0] - 0.5) < 1e-14}
    assert len(iv1) == 21 and len(iv2) == 22
    assert iv1 != iv2


def test_poisson_pair_minimal():
    m1, m2 = poisson_mesh_pair(2, conforming=True)
    assert m1.num_triangles == 4 and m2.num_triangles == 4   # 1x2 cells each


def test_poisson_pair_rejects_odd():
    with pytest.raises(ValueError):
        poisson_mesh_pair(7)
    with pytest.raises(ValueError):
        MeshFamilySpec("poisson_two_domain", 7)


def test_ns_family_refinement():
    meshes = ns_mesh_family(Fraction(1, 16))
    for mesh, rect, size in zip(meshes, NS_SUBDOMAIN_RECTS, NS_SUBDOMAIN_SIZES):
        hx = (rect[1] - rect[0]) / mesh.nx
        assert abs(hx - float(Fraction(1, 16) * size)) < 1e-14
        areas = triangle_areas(mesh)
        assert np.all(areas > 0)
        target = (rect[1] - rect[0]) * (rect[3] - rect[2])
        assert abs(areas.sum() - target) <= 1e-12


def test_ns_family_counts_h_quarter():
    meshes = ns_mesh_family(Fraction(1, 4))
    total = sum(m.num_triangles for m in meshes)
    assert total == sum(2 * m.nx * m.ny for m in meshes)
    # bottom corners meshed at h/2
    assert meshes[1].nx == 4 and meshes[1].ny == 2
    assert meshes[3].nx == 4 and meshes[3].ny == 2


def test_ns_family_rejects_bad_h():
    with pytest.raises(ValueError):
        ns_mesh_family(Fraction(2, 3))
    with pytest.raises(ValueError):
        ns_mesh_family(Fraction(1, 3))
    with pytest.raises(ValueError):
        ns_mesh_family(Fraction(1, 6))   # 0.25 not divisible by 1/6


def test_ns_family_interface_tags():
    meshes = ns_mesh_family(Fraction(1, 4))
    assert "interface:1" in meshes[0].boundary_tags()
    part = interface_edge_partition(meshes[0], "interface:1")
    assert abs(part.length - 1.0) < 1e-12
    part2 = interface_edge_partition(meshes[2], "interface:1")
    assert abs(part2.length - 0.5) < 1e-12


def test_interface_partition_spans():
    m1, _ = poisson_mesh_pair(2)
    part = interface_edge_partition(m1, "interface:0")
    spans = [(e.s0, e.s1) for e in part.edges]
    assert spans == [(0.0, 0.5), (0.5, 1.0)]


def test_interface_partition_tiles():
    m1, _ = poisson_mesh_pair(20)
    part = interface_edge_partition(m1, "interface:0")
    assert len(part.edges) == 20
    assert abs(sum(e.s1 - e.s0 for e in part.edges) - 1.0) < 1e-12
    for prev, nxt in zip(part.edges, part.edges[1:]):
        assert prev.s1 == pytest.approx(nxt.s0, abs=1e-14)
        assert prev.v1 == nxt.v0


def test_interface_partition_missing_tag():
    m = structured_rect_mesh((0, 1, 0, 1), 2, 2)
    with pytest.raises(ValueError, match="not present"):
        interface_edge_partition(m, "interface:0")


def test_interface_partition_noncontiguous():
    m = structured_rect_mesh((0, 1, 0, 1), 1, 3)
    m = retag_boundary(m, "gap", lambda x, y: abs(x) < 1e-12 and (y < 1 / 3 or y > 2 / 3))
    with pytest.raises(ValueError, match="contiguous"):
        interface_edge_partition(m, "gap")


def test_locate_points_roundtrip():
    m = structured_rect_mesh((0, 0.5, 0.25, 1.0), 3, 5)
    rng = np.random.default_rng(7)
    pts = np.column_stack([rng.uniform(0, 0.5, 50), rng.uniform(0.25, 1.0, 50)])
    tri, ref = locate_points(m, pts)
    v = m.vertices[m.triangles[tri]]
    rec = (v[:, 0] * (1 - ref[:, 0] - ref[:, 1])[:, None]
           + v[:, 1] * ref[:, 0][:, None] + v[:, 2] * ref[:, 1][:, None])
    assert np.abs(rec - pts).max() < 1e-12


def test_mesh_export():
    m = structured_rect_mesh((0, 1, 0, 1), 1, 1)
    buf = io.StringIO()
    write_mesh_text(m, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "vertices 4 triangles 2"
    assert len(lines) == 1 + 4 + 2
    assert lines[1].split() == ["0", "0"]


def test_family_spec_dispatch():
    spec = MeshFamilySpec("poisson_two_domain", 4)
    m1, m2 = spec.build(conforming=False)
    assert m2.ny == 5
    with pytest.raises(ValueError):
        MeshFamilySpec("something_else", 4)
