import numpy as np
import pytest
from numpy.testing import assert_allclose

from tangentflow.assemble import quad_data
from tangentflow.geometry import MeshOnly, Sphere, Torus
from tangentflow.mesh import (
    MeshError,
    TriMesh,
    build_mesh,
    icosahedron,
    load_mesh,
    mesh_metrics,
    octahedron,
    quadrature_rule,
    refine,
    validate_mesh,
    write_off,
)

OCTA_OFF = """OFF
# regular octahedron
6 8 12
1 0 0
-1 0 0
0 1 0
0 -1 0
0 0 1
0 0 -1
3 0 2 4
3 2 1 4
3 1 3 4
3 3 0 4
3 2 0 5
3 1 2 5
3 3 1 5
3 0 3 5
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _is_consistently_oriented(mesh):
    directed = set()
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            if (a, b) in directed:
                return False
            directed.add((a, b))
    return all((b, a) in directed for a, b in directed)


def test_load_octahedron_off(tmp_path):
    m = load_mesh(_write(tmp_path, "octa.off", OCTA_OFF))
    assert (m.n_vertices, m.n_triangles, m.n_edges) == (6, 8, 12)
    assert m.euler_characteristic() == 2


def test_load_icosahedron_obj(tmp_path):
    ico = icosahedron()
    lines = ["# icosahedron", "o ico"] + [f"v {x} {y} {z}" for x, y, z in ico.vertices]
    lines += ["vn 0 0 1"] + [f"f {a + 1}//1 {b + 1}//1 {c + 1}//1" for a, b, c in ico.triangles]
    m = load_mesh(_write(tmp_path, "ico.obj", "\n".join(lines) + "\n"))
    assert (m.n_vertices, m.n_triangles) == (12, 20)
    assert m.euler_characteristic() == 2


def test_obj_quads_are_split(tmp_path):
    # cube with quad faces
    v = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    f = [(1, 4, 3, 2), (5, 6, 7, 8), (1, 2, 6, 5), (2, 3, 7, 6), (3, 4, 8, 7), (4, 1, 5, 8)]
    text = "\n".join([f"v {a} {b} {c}" for a, b, c in v] + ["f " + " ".join(map(str, q)) for q in f])
    m = load_mesh(_write(tmp_path, "cube.obj", text))
    assert m.n_triangles == 12
    assert m.total_area() == pytest.approx(6.0)


def test_open_mesh_names_boundary_edge(tmp_path):
    lines = OCTA_OFF.strip().splitlines()
    lines[2] = "6 7 12"
    del lines[-1]  # drop triangle 0 3 5
    with pytest.raises(MeshError) as err:
        load_mesh(_write(tmp_path, "open.off", "\n".join(lines) + "\n"))
    assert "boundary edge" in str(err.value)
    assert err.value.edge in {(0, 3), (3, 5), (0, 5)}


def test_non_manifold_edge_rejected():
    o = octahedron()
    t = np.concatenate([o.triangles, [[0, 2, 5]]])
    with pytest.raises(MeshError, match="non-manifold"):
        validate_mesh(TriMesh(o.vertices, t, MeshOnly()))


def test_out_of_range_index_rejected(tmp_path):
    bad = OCTA_OFF.replace("3 0 3 5", "3 0 3 9")
    with pytest.raises(MeshError, match="out of range"):
        load_mesh(_write(tmp_path, "bad.off", bad))


def test_unreadable_file_and_format(tmp_path):
    with pytest.raises(MeshError):
        load_mesh(_write(tmp_path, "mesh.stl", "solid"))
    with pytest.raises((MeshError, OSError, ValueError)):
        load_mesh(_write(tmp_path, "broken.off", "OFF\n3 1\n0 0 0\n"))


def test_orientation_repair(tmp_path):
    lines = OCTA_OFF.strip().splitlines()
    lines[9] = "3 0 4 2"  # flip the first triangle
    m = load_mesh(_write(tmp_path, "flip.off", "\n".join(lines) + "\n"))
    assert _is_consistently_oriented(m)
    assert m.enclosed_volume() > 0


def test_refine_octahedron_on_unit_sphere():
    m1 = refine(octahedron(Sphere()))
    assert (m1.n_vertices, m1.n_triangles) == (18, 32)
    assert_allclose(np.linalg.norm(m1.vertices, axis=1), 1.0, atol=1e-12)
    m2 = refine(m1)
    assert (m2.n_vertices, m2.n_triangles) == (66, 128)


def test_mesh_only_refinement_keeps_midpoints_on_chords():
    o = octahedron()
    flat = TriMesh(o.vertices, o.triangles, MeshOnly())
    r = refine(flat)
    e = o.edges[0]
    mid = 0.5 * (o.vertices[e[0]] + o.vertices[e[1]])
    assert np.min(np.linalg.norm(r.vertices - mid, axis=1)) < 1e-15
    assert np.linalg.norm(mid) < 1.0


def test_refinement_preserves_topology():
    for m in (icosahedron(), build_mesh(Torus(2.0, 1.0), 0)):
        chi = m.euler_characteristic()
        r = refine(refine(m))
        validate_mesh(r, repair=False)
        assert r.euler_characteristic() == chi
        assert _is_consistently_oriented(r)
    assert build_mesh(Torus(2.0, 1.0), 1).euler_characteristic() == 0


def test_mesh_size_halves_and_area_converges():
    s = Sphere()
    hs, errs = [], []
    for lvl in range(1, 6):
        met = mesh_metrics(build_mesh(s, lvl))
        hs.append(met.h_max)
        errs.append(abs(met.area_total - 4 * np.pi))
        assert met.h_min <= met.h_max
    ratios = np.array(hs[1:]) / np.array(hs[:-1])
    assert np.all((ratios >= 0.45) & (ratios <= 0.55))
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert np.all(np.abs(orders - 2.0) < 0.2)


def test_flat_reference_triangle_area():
    tri = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    assert mesh_metrics(tri).area_total == pytest.approx(0.5)


def test_unprojected_refinement_stays_on_coarse_faces():
    ico = icosahedron()
    m = TriMesh(ico.vertices, ico.triangles, MeshOnly())
    gaps = []
    for _ in range(3):
        m = refine(m)
        gaps.append(np.max(1.0 - np.linalg.norm(m.vertices, axis=1)))
    # flat refinement never approaches the sphere
    assert min(gaps) > 0.05
    assert_allclose(m.total_area(), ico.total_area(), rtol=1e-12)


def test_projected_geometry_error_is_second_order():
    s = Sphere()
    gaps = []
    for lvl in range(1, 5):
        m = build_mesh(s, lvl)
        cent = m.vertices[m.triangles].mean(axis=1)
        gaps.append(np.max(s.distance(cent)))
        assert np.max(s.distance(m.vertices)) <= 1e-12
    assert_allclose(np.array(gaps[1:]) / gaps[:-1], 0.25, atol=0.03)


@pytest.mark.parametrize("order", [4, 6])
def test_quadrature_weights_sum_to_area(order):
    m = build_mesh(Torus(2.0, 1.0), 1)
    pts, w = quadrature_rule(order)
    assert w.sum() == pytest.approx(1.0)
    assert_allclose(pts.sum(axis=1), 1.0, atol=1e-15)
    flat = TriMesh(m.vertices, m.triangles, MeshOnly())
    qd = quad_data(flat, 1, order)
    assert qd.weights.sum() == pytest.approx(flat.total_area(), rel=1e-13)


def test_quadrature_exact_for_polynomials():
    # integrate x^a y^b over the reference triangle: a! b! / (a + b + 2)!
    from math import factorial
    for order in (4, 6):
        pts, w = quadrature_rule(order)
        x, y = pts[:, 1], pts[:, 2]
        for a in range(order + 1):
            for b in range(order + 1 - a):
                exact = factorial(a) * factorial(b) / factorial(a + b + 2)
                assert 0.5 * np.sum(w * x ** a * y ** b) == pytest.approx(exact, rel=1e-12)


def test_off_round_trip(tmp_path):
    m = build_mesh(Sphere(), 1)
    write_off(m, tmp_path / "m.off")
    back = load_mesh(tmp_path / "m.off")
    assert_allclose(back.vertices, m.vertices, atol=0)
    assert np.array_equal(back.triangles, m.triangles)
