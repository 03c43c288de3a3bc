import numpy as np
import pytest
import torch

from forcefit import geometry as geo
from forcefit.utils import as_tensor


# ---------------------------------------------------------------------------
# independent oracles


def oracle_point_triangle_distance(p, a, b, c):
    """Closest distance from p to triangle (a,b,c) by direct enumeration.

    Solves the unconstrained projection onto the triangle plane; if the
    barycentric solution leaves the triangle, minimizes over all three edges
    parametrically. Independent of the region-based production code.
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    e0, e1 = b - a, c - a
    g = np.array([[e0 @ e0, e0 @ e1], [e0 @ e1, e1 @ e1]])
    rhs = np.array([e0 @ (p - a), e1 @ (p - a)])
    best = np.inf
    if np.linalg.det(g) > 1e-30:
        s, t = np.linalg.solve(g, rhs)
        if s >= 0 and t >= 0 and s + t <= 1:
            best = np.linalg.norm(p - (a + s * e0 + t * e1))
    for q0, q1 in ((a, b), (a, c), (b, c)):
        d = q1 - q0
        t = np.clip(d @ (p - q0) / max(d @ d, 1e-300), 0.0, 1.0)
        best = min(best, np.linalg.norm(p - (q0 + t * d)))
    return best


def oracle_unsigned_distance(p, mesh):
    return min(
        oracle_point_triangle_distance(
            p, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]
        )
        for t in mesh.triangles
    )


def oracle_is_inside(p, mesh, direction=None):
    """Ray-parity containment test (Moller-Trumbore), independent of signing."""
    p = np.asarray(p, dtype=np.float64)
    d = np.array([0.5773501, 0.5773502, 0.577350031]) if direction is None else direction
    d = d / np.linalg.norm(d)
    hits = 0
    for t in mesh.triangles:
        a, b, c = mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]
        e1, e2 = b - a, c - a
        h = np.cross(d, e2)
        det = e1 @ h
        if abs(det) < 1e-14:
            continue
        f = 1.0 / det
        s = p - a
        u = f * (s @ h)
        if u < 0 or u > 1:
            continue
        q = np.cross(s, e1)
        v = f * (d @ q)
        if v < 0 or u + v > 1:
            continue
        if f * (e2 @ q) > 1e-12:
            hits += 1
    return hits % 2 == 1


# ---------------------------------------------------------------------------
# vertex normals


def test_flat_square_normals_all_up():
    sq = geo.make_flat_square()
    n = geo.compute_vertex_normals(sq.vertices, sq.triangles)
    assert np.allclose(n, [[0, 0, 1]] * 4)


def test_single_triangle_normals_equal_face_normal():
    tri = geo.make_single_triangle()
    n = geo.compute_vertex_normals(tri.vertices, tri.triangles)
    assert np.allclose(n, [[0, 0, 1]] * 3)


def test_cube_corner_normal_is_diagonal():
    # corner-anchored triangulation makes all three faces contribute equal
    # area at the (-,-,-) corner, so the area-weighted normal is the diagonal
    box = geo.make_box([0.5, 0.5, 0.5], divisions=2, corner_anchored=True)
    corner = np.where(np.all(np.isclose(box.vertices, [-0.5, -0.5, -0.5]), axis=1))[0][0]
    n = box.vertex_normals[corner]
    expect = -np.ones(3) / np.sqrt(3.0)
    assert np.linalg.norm(n - expect) < 1e-6


def test_cube_corner_normal_matches_hand_weighted_average():
    box = geo.make_box([0.5, 0.5, 0.5], divisions=2, corner_anchored=True)
    corner = np.where(np.all(np.isclose(box.vertices, [-0.5, -0.5, -0.5]), axis=1))[0][0]
    acc = np.zeros(3)
    for t in box.triangles:
        if corner in t:
            a, b, c = box.vertices[t[0]], box.vertices[t[1]], box.vertices[t[2]]
            cr = np.cross(b - a, c - a)
            acc += cr / 2.0 * (cr / np.linalg.norm(cr) / (np.linalg.norm(cr) / 2.0))
    # simpler statement of the same thing: area-weighted unit normals
    acc2 = np.zeros(3)
    for t in box.triangles:
        if corner in t:
            a, b, c = box.vertices[t[0]], box.vertices[t[1]], box.vertices[t[2]]
            cr = np.cross(b - a, c - a)
            acc2 += np.linalg.norm(cr) / 2.0 * cr / np.linalg.norm(cr)
    assert np.allclose(box.vertex_normals[corner], acc2 / np.linalg.norm(acc2))


def test_degenerate_vertex_normal_raises():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])  # collinear
    t = np.array([[0, 1, 2]])
    with pytest.raises(geo.GeometryError, match="degenerate vertex normal"):
        geo.compute_vertex_normals(v, t)


def test_degenerate_triangle_contributes_nothing():
    sq = geo.make_flat_square()
    base = geo.compute_vertex_normals(sq.vertices, sq.triangles)
    t = np.vstack([sq.triangles, [[0, 1, 1]]])  # zero-area sliver
    with_sliver = geo.compute_vertex_normals(sq.vertices, t)
    assert np.allclose(with_sliver, base)
    # a vertex touching only degenerate triangles has no defined normal
    v2 = np.vstack([sq.vertices, sq.vertices[0] + [1e-15, 0, 0]])
    t2 = np.vstack([sq.triangles, [[0, 4, 4]]])
    with pytest.raises(geo.GeometryError, match="degenerate vertex normal"):
        geo.compute_vertex_normals(v2, t2)


# ---------------------------------------------------------------------------
# signed distance


def test_point_above_and_below_square():
    sq = geo.make_flat_square()
    assert geo.signed_distance_to_mesh(np.array([0.0, 0.0, 0.01]), sq).distance == pytest.approx(0.01, abs=1e-12)
    assert geo.signed_distance_to_mesh(np.array([0.0, 0.0, -0.01]), sq).distance == pytest.approx(-0.01, abs=1e-12)


def test_cube_corner_pseudo_normal_query():
    box = geo.make_box([0.5, 0.5, 0.5], divisions=2)
    corner = np.array([0.5, 0.5, 0.5])
    pn = np.ones(3) / np.sqrt(3.0)  # corner pseudo-normal of an axis-aligned box
    p = corner + 0.005 * pn
    res = geo.signed_distance_to_mesh(p, box)
    assert res.distance == pytest.approx(0.005, abs=1e-6)
    # oracle: brute force over all triangles with the independent formulas
    assert abs(res.distance) == pytest.approx(oracle_unsigned_distance(p, box), abs=1e-12)
    assert np.allclose(res.closest_point, corner, atol=1e-9)


def test_closest_point_consistency_invariant():
    # |distance| equals the euclidean distance to the reported closest point
    rng = np.random.default_rng(3)
    sp = geo.make_icosphere(0.7, 1)
    for _ in range(50):
        p = rng.normal(size=3)
        r = geo.signed_distance_to_mesh(p, sp)
        assert abs(abs(r.distance) - np.linalg.norm(p - r.closest_point)) < 1e-9


def test_unsigned_distance_matches_oracle_random():
    rng = np.random.default_rng(11)
    meshes = [geo.make_icosphere(0.5, 1), geo.make_box([0.4, 0.3, 0.5], 2),
              geo.make_cylinder(0.3, 0.8, 10, 3)]
    for mesh in meshes:
        pts = rng.normal(scale=0.7, size=(40, 3))
        got = geo.signed_distances_to_mesh(pts, mesh)
        for p, d in zip(pts, got.distance):
            assert abs(d) == pytest.approx(oracle_unsigned_distance(p, mesh), abs=1e-10)


def test_sign_matches_ray_parity_oracle():
    rng = np.random.default_rng(7)
    for mesh in (geo.make_icosphere(0.6, 2), geo.make_box([0.5, 0.4, 0.3], 2)):
        pts = rng.uniform(-0.9, 0.9, size=(120, 3))
        got = geo.signed_distances_to_mesh(pts, mesh)
        for p, d in zip(pts, got.distance):
            if abs(d) < 1e-4:
                continue  # stay off the surface where parity is fragile
            assert (d < 0) == oracle_is_inside(p, mesh), f"point {p} dist {d}"


def test_reflection_symmetry():
    mesh = geo.make_box([0.4, 0.3, 0.5], 2)
    rng = np.random.default_rng(5)
    pts = rng.normal(scale=0.6, size=(30, 3))
    base = geo.signed_distances_to_mesh(pts, mesh).distance
    for axis in range(3):
        refl = np.eye(3)
        refl[axis, axis] = -1.0
        v = mesh.vertices @ refl
        t = mesh.triangles[:, [0, 2, 1]]  # keep outward winding after reflection
        mesh_r = geo.TriMesh(v, t)
        got = geo.signed_distances_to_mesh(pts @ refl, mesh_r).distance
        assert np.allclose(got, base, atol=1e-12)


def test_gradient_matches_finite_differences():
    mesh = geo.make_icosphere(0.5, 2)
    rng = np.random.default_rng(19)
    pts = rng.normal(scale=0.8, size=(100, 3))
    h = 1e-6
    pre = geo.mesh_query_batch(pts[None], mesh.vertices[None], mesh.topology)
    pts_t = as_tensor(pts[None], requires_grad=True)
    verts_t = as_tensor(mesh.vertices[None])
    d = geo.signed_distances_torch(pts_t, verts_t, mesh.triangles, pre.closest_triangle, pre.sign)
    d.sum().backward()
    grad = pts_t.grad.numpy()[0]
    for i in range(len(pts)):
        fd = np.zeros(3)
        for k in range(3):
            pp, pm = pts[i].copy(), pts[i].copy()
            pp[k] += h
            pm[k] -= h
            fd[k] = (
                geo.signed_distance_to_mesh(pp, mesh).distance
                - geo.signed_distance_to_mesh(pm, mesh).distance
            ) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-8)
        assert np.linalg.norm(grad[i] - fd) / denom < 1e-4


def test_gradient_wrt_mesh_vertices():
    mesh = geo.make_icosphere(0.4, 1)
    p = np.array([[0.0, 0.0, 0.9]])
    pre = geo.mesh_query_batch(p[None], mesh.vertices[None], mesh.topology)
    verts_t = as_tensor(mesh.vertices[None], requires_grad=True)
    d = geo.signed_distances_torch(as_tensor(p[None]), verts_t, mesh.triangles,
                                   pre.closest_triangle, pre.sign)
    d.sum().backward()
    g = verts_t.grad.numpy()[0]
    h = 1e-7
    hit = mesh.triangles[pre.closest_triangle[0, 0]]
    for vid in hit:
        for k in range(3):
            vp = mesh.vertices.copy()
            vm = mesh.vertices.copy()
            vp[vid, k] += h
            vm[vid, k] -= h
            fd = (
                geo.signed_distance_to_mesh(p[0], mesh.with_vertices(vp)).distance
                - geo.signed_distance_to_mesh(p[0], mesh.with_vertices(vm)).distance
            ) / (2 * h)
            assert g[vid, k] == pytest.approx(fd, abs=1e-5)


def test_empty_mesh_raises():
    mesh = geo.TriMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(geo.GeometryError, match="empty mesh"):
        geo.signed_distance_to_mesh(np.zeros(3), mesh)


def test_vertex_only_mode():
    sp = geo.make_icosphere(0.5, 1)
    pts = np.array([[0.0, 0.0, 0.9], [0.0, 0.0, 0.1]])
    q = geo.vertex_query_batch(pts[None], sp.vertices[None], sp.topology)
    # outside: distance to nearest vertex >= distance to surface, sign positive
    assert q.distance[0, 0] >= 0.4 - 1e-9
    assert q.distance[0, 1] < 0  # deep inside
    vids = q.closest_triangle[0]
    assert np.allclose(
        np.abs(q.distance[0]), np.linalg.norm(pts - sp.vertices[vids], axis=1)
    )


# ---------------------------------------------------------------------------
# sampling


def test_sample_all_vertices_identity():
    sp = geo.make_icosphere(1.0, 1)
    idx = geo.sample_vertices(sp.n_vertices, sp, seed=0)
    assert np.array_equal(idx, np.arange(sp.n_vertices))


def test_sample_deterministic():
    sp = geo.make_icosphere(1.0, 3)
    a = geo.sample_vertices(100, sp, seed=42)
    b = geo.sample_vertices(100, sp, seed=42)
    assert np.array_equal(a, b)
    assert len(np.unique(a)) == 100
    c = geo.sample_vertices(100, sp, seed=43)
    assert not np.array_equal(a, c)


def test_sample_count_above_n_clamps():
    sp = geo.make_icosphere(1.0, 0)
    idx = geo.sample_vertices(10_000, sp, seed=1)
    assert np.array_equal(idx, np.arange(sp.n_vertices))


def test_sample_rejects_zero():
    with pytest.raises(geo.GeometryError):
        geo.sample_vertices(0, geo.make_flat_square(), seed=0)


# ---------------------------------------------------------------------------
# OBJ I/O


def test_obj_roundtrip(tmp_path):
    mesh = geo.make_box([0.2, 0.3, 0.4], 2)
    path = tmp_path / "box.obj"
    geo.save_obj(mesh, path)
    back = geo.load_obj(path)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.vertices, mesh.vertices)


def test_obj_rejects_quads(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(geo.GeometryError, match="triangles"):
        geo.load_obj(path)


def test_obj_ignores_other_lines(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("# comment\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1//1 2//1 3//1\n")
    mesh = geo.load_obj(path)
    assert mesh.n_vertices == 3 and len(mesh.triangles) == 1


# ---------------------------------------------------------------------------
# mesh container


def test_trimesh_rejects_bad_indices():
    with pytest.raises(geo.GeometryError):
        geo.TriMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))


def test_update_vertices_refreshes_normals():
    sq = geo.make_flat_square()
    n0 = sq.vertex_normals.copy()
    rot = np.array([[1.0, 0, 0], [0, 0, -1], [0, 1.0, 0]])  # +90 deg about x
    sq.update_vertices(sq.vertices @ rot.T)
    assert np.allclose(sq.vertex_normals, n0 @ rot.T)


def test_validate_orphan_vertex():
    mesh = geo.TriMesh(np.vstack([geo.make_flat_square().vertices, [5, 5, 5.0]]),
                       geo.make_flat_square().triangles)
    with pytest.raises(geo.GeometryError, match="no triangle"):
        mesh.validate()
