"""Triangle meshes and signed-distance queries.

Distances are exact point-to-triangle minima over the whole mesh; the sign
comes from an angle-weighted pseudo-normal test at the closest feature
(face, edge or vertex), so it is well defined on edges and corners of
watertight meshes. Negative distance means penetration.

The closest-triangle search is a fused numba kernel (bounding-sphere culling
with warm starts); the differentiable re-evaluation against the selected
triangle lives in torch, so gradients follow the currently-closest triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from numba import njit

from .utils import safe_norm

DEGENERATE_AREA = 1e-12  # m^2; smaller triangles are skipped everywhere


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# mesh container


@dataclass
class TriMesh:
    """Triangle mesh with cached vertex normals and topology.

    vertices are meters; triangles index into them (CCW winding = outward).
    Queries are read-only and safe to run concurrently; `update_vertices`
    mutates and must not race with queries.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    _normals: np.ndarray | None = field(default=None, repr=False, compare=False)
    _topology: "MeshTopology | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise GeometryError("triangles must be (m, 3)")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise GeometryError("triangle index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise GeometryError("negative triangle index")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def vertex_normals(self) -> np.ndarray:
        if self._normals is None:
            self._normals = compute_vertex_normals(self.vertices, self.triangles)
        return self._normals

    @property
    def topology(self) -> "MeshTopology":
        if self._topology is None:
            self._topology = MeshTopology.build(self.triangles, self.n_vertices)
        return self._topology

    def update_vertices(self, vertices: np.ndarray) -> None:
        """Replace vertex positions after deformation; caches are dropped."""
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise GeometryError("vertex count must not change")
        self.vertices = vertices
        self._normals = None  # topology survives, normals do not

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        posed = TriMesh(vertices, self.triangles)
        posed._topology = self.topology  # shared: triangles identical
        return posed

    def validate(self) -> None:
        counts = np.zeros(self.n_vertices, dtype=np.int64)
        np.add.at(counts, self.triangles.ravel(), 1)
        if (counts == 0).any():
            raise GeometryError("vertex belongs to no triangle")
        n = self.vertex_normals
        if not np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6):
            raise GeometryError("cached vertex normals are not unit length")


@dataclass
class MeshTopology:
    """Connectivity that depends only on the triangle array."""

    triangles: np.ndarray
    edges: np.ndarray          # (E, 2) sorted vertex pairs
    face_edge_ids: np.ndarray  # (M, 3) edge id per slot (ab, ac, bc)
    n_vertices: int

    @staticmethod
    def build(triangles: np.ndarray, n_vertices: int) -> "MeshTopology":
        tri = np.asarray(triangles, dtype=np.int64)
        pairs = np.concatenate(
            [tri[:, [0, 1]], tri[:, [0, 2]], tri[:, [1, 2]]], axis=0
        )
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        face_edge_ids = inverse.reshape(3, -1).T.copy()
        return MeshTopology(tri, edges, np.ascontiguousarray(face_edge_ids), n_vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; orientation follows triangle winding.

    Degenerate triangles (area < 1e-12 m^2) contribute nothing; a vertex with
    only degenerate incident triangles is an error.
    """
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    # |cross| = 2 * area; the cross product itself is already area-weighted
    area2 = np.linalg.norm(cross, axis=1)
    cross[area2 < 2.0 * DEGENERATE_AREA] = 0.0
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, t[:, k], cross)
    norms = np.linalg.norm(acc, axis=1)
    if (norms < 1e-20).any():
        raise GeometryError("degenerate vertex normal")
    return acc / norms[:, None]


# ---------------------------------------------------------------------------
# fused query kernels

# feature codes returned by the closest-point search
FEAT_FACE = 0
FEAT_VERT_A, FEAT_VERT_B, FEAT_VERT_C = 1, 2, 3
FEAT_EDGE_AB, FEAT_EDGE_AC, FEAT_EDGE_BC = 4, 5, 6


@njit(cache=True, fastmath=False)
def _closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Exact closest point on one triangle; returns (qx, qy, qz, feature)."""
    abx = bx - ax; aby = by - ay; abz = bz - az
    acx = cx - ax; acy = cy - ay; acz = cz - az
    apx = px - ax; apy = py - ay; apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az, FEAT_VERT_A
    bpx = px - bx; bpy = py - by; bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz, FEAT_VERT_B
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return ax + t * abx, ay + t * aby, az + t * abz, FEAT_EDGE_AB
    cpx = px - cx; cpy = py - cy; cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz, FEAT_VERT_C
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return ax + t * acx, ay + t * acy, az + t * acz, FEAT_EDGE_AC
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + t * (cx - bx), by + t * (cy - by), bz + t * (cz - bz), FEAT_EDGE_BC
    den = va + vb + vc
    v = vb / den
    w = vc / den
    return (
        ax + abx * v + acx * w,
        ay + aby * v + acy * w,
        az + abz * v + acz * w,
        FEAT_FACE,
    )


@njit(cache=True, fastmath=False)
def _surface_frames_kernel(verts, tris, face_edge_ids, n_edges):
    """Per-frame face normals + angle-weighted vertex/edge pseudo-normals."""
    B, V = verts.shape[0], verts.shape[1]
    M = tris.shape[0]
    face_n = np.zeros((B, M, 3), np.float64)
    valid = np.zeros((B, M), np.bool_)
    cent = np.empty((B, M, 3), np.float64)
    rad = np.empty((B, M), np.float64)
    vert_pn = np.zeros((B, V, 3), np.float64)
    edge_pn = np.zeros((B, n_edges, 3), np.float64)
    for fb in range(B):
        for m in range(M):
            ia, ib, ic = tris[m, 0], tris[m, 1], tris[m, 2]
            ax, ay, az = verts[fb, ia, 0], verts[fb, ia, 1], verts[fb, ia, 2]
            bx, by, bz = verts[fb, ib, 0], verts[fb, ib, 1], verts[fb, ib, 2]
            cx, cy, cz = verts[fb, ic, 0], verts[fb, ic, 1], verts[fb, ic, 2]
            cent[fb, m, 0] = (ax + bx + cx) / 3.0
            cent[fb, m, 1] = (ay + by + cy) / 3.0
            cent[fb, m, 2] = (az + bz + cz) / 3.0
            r2 = 0.0
            for (qx, qy, qz) in ((ax, ay, az), (bx, by, bz), (cx, cy, cz)):
                dx = qx - cent[fb, m, 0]
                dy = qy - cent[fb, m, 1]
                dz = qz - cent[fb, m, 2]
                rr = dx * dx + dy * dy + dz * dz
                if rr > r2:
                    r2 = rr
            rad[fb, m] = np.sqrt(r2)
            e1x, e1y, e1z = bx - ax, by - ay, bz - az
            e2x, e2y, e2z = cx - ax, cy - ay, cz - az
            nx = e1y * e2z - e1z * e2y
            ny = e1z * e2x - e1x * e2z
            nz = e1x * e2y - e1y * e2x
            nn = np.sqrt(nx * nx + ny * ny + nz * nz)
            if nn < 2.0 * DEGENERATE_AREA:
                continue
            valid[fb, m] = True
            nx /= nn; ny /= nn; nz /= nn
            face_n[fb, m, 0] = nx
            face_n[fb, m, 1] = ny
            face_n[fb, m, 2] = nz
            # corner angles weight the vertex pseudo-normals
            for k in range(3):
                i0 = tris[m, k]
                i1 = tris[m, (k + 1) % 3]
                i2 = tris[m, (k + 2) % 3]
                ux = verts[fb, i1, 0] - verts[fb, i0, 0]
                uy = verts[fb, i1, 1] - verts[fb, i0, 1]
                uz = verts[fb, i1, 2] - verts[fb, i0, 2]
                wx = verts[fb, i2, 0] - verts[fb, i0, 0]
                wy = verts[fb, i2, 1] - verts[fb, i0, 1]
                wz = verts[fb, i2, 2] - verts[fb, i0, 2]
                nu = np.sqrt(ux * ux + uy * uy + uz * uz)
                nw = np.sqrt(wx * wx + wy * wy + wz * wz)
                if nu < 1e-30 or nw < 1e-30:
                    continue
                cosang = (ux * wx + uy * wy + uz * wz) / (nu * nw)
                if cosang > 1.0:
                    cosang = 1.0
                elif cosang < -1.0:
                    cosang = -1.0
                ang = np.arccos(cosang)
                vert_pn[fb, i0, 0] += ang * nx
                vert_pn[fb, i0, 1] += ang * ny
                vert_pn[fb, i0, 2] += ang * nz
            for k in range(3):
                e = face_edge_ids[m, k]
                edge_pn[fb, e, 0] += nx
                edge_pn[fb, e, 1] += ny
                edge_pn[fb, e, 2] += nz
    return face_n, valid, cent, rad, vert_pn, edge_pn


@njit(cache=True, fastmath=False)
def _search_kernel(points, verts, tris, valid, cent, rad):
    """Exact closest triangle per query point, ties broken by lowest index."""
    B, N = points.shape[0], points.shape[1]
    M = tris.shape[0]
    out_idx = np.full((B, N), -1, np.int64)
    out_cp = np.zeros((B, N, 3), np.float64)
    out_feat = np.zeros((B, N), np.int8)
    for fb in range(B):
        for n in range(N):
            px, py, pz = points[fb, n, 0], points[fb, n, 1], points[fb, n, 2]
            best = np.inf
            sb = np.inf
            bi = -1
            bqx = bqy = bqz = 0.0
            bfeat = 0
            # warm start from the spatially previous query's winner
            wi = -1
            if n > 0:
                wi = out_idx[fb, n - 1]
            elif fb > 0:
                wi = out_idx[fb - 1, n]
            if wi >= 0 and valid[fb, wi]:
                ia, ib, ic = tris[wi, 0], tris[wi, 1], tris[wi, 2]
                qx, qy, qz, feat = _closest_on_triangle(
                    px, py, pz,
                    verts[fb, ia, 0], verts[fb, ia, 1], verts[fb, ia, 2],
                    verts[fb, ib, 0], verts[fb, ib, 1], verts[fb, ib, 2],
                    verts[fb, ic, 0], verts[fb, ic, 1], verts[fb, ic, 2],
                )
                dx = px - qx; dy = py - qy; dz = pz - qz
                best = dx * dx + dy * dy + dz * dz
                sb = np.sqrt(best)
                bi = wi; bqx, bqy, bqz = qx, qy, qz; bfeat = feat
            for m in range(M):
                if not valid[fb, m]:
                    continue
                dcx = px - cent[fb, m, 0]
                dcy = py - cent[fb, m, 1]
                dcz = pz - cent[fb, m, 2]
                dc2 = dcx * dcx + dcy * dcy + dcz * dcz
                lim = sb + rad[fb, m]
                if dc2 > lim * lim:
                    continue
                ia, ib, ic = tris[m, 0], tris[m, 1], tris[m, 2]
                qx, qy, qz, feat = _closest_on_triangle(
                    px, py, pz,
                    verts[fb, ia, 0], verts[fb, ia, 1], verts[fb, ia, 2],
                    verts[fb, ib, 0], verts[fb, ib, 1], verts[fb, ib, 2],
                    verts[fb, ic, 0], verts[fb, ic, 1], verts[fb, ic, 2],
                )
                dx = px - qx; dy = py - qy; dz = pz - qz
                dd = dx * dx + dy * dy + dz * dz
                if dd < best or (dd == best and m < bi):
                    best = dd
                    sb = np.sqrt(dd)
                    bi = m
                    bqx, bqy, bqz = qx, qy, qz
                    bfeat = feat
            out_idx[fb, n] = bi
            out_cp[fb, n, 0] = bqx
            out_cp[fb, n, 1] = bqy
            out_cp[fb, n, 2] = bqz
            out_feat[fb, n] = bfeat
    return out_idx, out_cp, out_feat


# ---------------------------------------------------------------------------
# batched signed distance (numpy in / numpy out)


@dataclass
class MeshQueryBatch:
    """Closest-feature data for a batch of query points over B frames."""

    distance: np.ndarray          # (B, N), signed
    closest_point: np.ndarray     # (B, N, 3)
    closest_triangle: np.ndarray  # (B, N)
    feature: np.ndarray           # (B, N) int8 feature codes
    sign: np.ndarray              # (B, N) in {-1, +1}


def mesh_query_batch(
    points: np.ndarray, vertices: np.ndarray, topo: MeshTopology
) -> MeshQueryBatch:
    """Signed distances from points[B,N,3] to the mesh posed as vertices[B,V,3]."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    if topo.triangles.shape[0] == 0:
        raise GeometryError("empty mesh")
    face_n, valid, cent, rad, vert_pn, edge_pn = _surface_frames_kernel(
        vertices, topo.triangles, topo.face_edge_ids, topo.n_edges
    )
    if not valid.any():
        raise GeometryError("empty mesh")
    tri_idx, cp, feat = _search_kernel(points, vertices, topo.triangles, valid, cent, rad)
    if (tri_idx < 0).any():
        raise GeometryError("empty mesh")

    B = np.arange(points.shape[0])[:, None]
    pn = face_n[B, tri_idx]
    tris_hit = topo.triangles[tri_idx]  # (B, N, 3)
    for code, col in ((FEAT_VERT_A, 0), (FEAT_VERT_B, 1), (FEAT_VERT_C, 2)):
        mask = feat == code
        if mask.any():
            vids = tris_hit[..., col]
            pn = np.where(mask[..., None], np.take_along_axis(
                vert_pn, vids[..., None].repeat(3, -1), axis=1), pn)
    edge_slots = ((FEAT_EDGE_AB, 0), (FEAT_EDGE_AC, 1), (FEAT_EDGE_BC, 2))
    face_edges_hit = topo.face_edge_ids[tri_idx]  # (B, N, 3)
    for code, slot in edge_slots:
        mask = feat == code
        if mask.any():
            eids = face_edges_hit[..., slot]
            pn = np.where(mask[..., None], np.take_along_axis(
                edge_pn, eids[..., None].repeat(3, -1), axis=1), pn)

    offset = points - cp
    sign = np.where(np.einsum("bnk,bnk->bn", offset, pn) < 0.0, -1.0, 1.0)
    dist = sign * np.linalg.norm(offset, axis=-1)
    return MeshQueryBatch(dist, cp, tri_idx, feat, sign)


@dataclass
class SignedDistanceResult:
    """One signed-distance query; negative distance means penetration."""

    distance: float
    closest_point: np.ndarray
    closest_triangle: int


def signed_distance_to_mesh(point: np.ndarray, mesh: TriMesh) -> SignedDistanceResult:
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (3,):
        raise GeometryError("point must be a 3-vector")
    if not np.isfinite(point).all():
        raise GeometryError("point must be finite")
    q = mesh_query_batch(point[None, None, :], mesh.vertices[None], mesh.topology)
    return SignedDistanceResult(
        float(q.distance[0, 0]), q.closest_point[0, 0], int(q.closest_triangle[0, 0])
    )


def signed_distances_to_mesh(points: np.ndarray, mesh: TriMesh) -> MeshQueryBatch:
    points = np.asarray(points, dtype=np.float64)
    q = mesh_query_batch(points[None], mesh.vertices[None], mesh.topology)
    return MeshQueryBatch(
        q.distance[0], q.closest_point[0], q.closest_triangle[0], q.feature[0], q.sign[0]
    )


def vertex_query_batch(
    points: np.ndarray, vertices: np.ndarray, topo: MeshTopology
) -> MeshQueryBatch:
    """Vertex-only comparison mode: distance to the nearest mesh vertex.

    Sign uses the angle-weighted pseudo-normal of that vertex. closest_triangle
    reports the nearest vertex id instead of a triangle id.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    if topo.triangles.shape[0] == 0:
        raise GeometryError("empty mesh")
    _, _, _, _, vert_pn, _ = _surface_frames_kernel(
        vertices, topo.triangles, topo.face_edge_ids, topo.n_edges
    )
    d2 = ((points[:, :, None, :] - vertices[:, None, :, :]) ** 2).sum(-1)
    vid = d2.argmin(axis=2)
    cp = np.take_along_axis(vertices, vid[..., None].repeat(3, -1), axis=1)
    pn = np.take_along_axis(vert_pn, vid[..., None].repeat(3, -1), axis=1)
    offset = points - cp
    sign = np.where(np.einsum("bnk,bnk->bn", offset, pn) < 0.0, -1.0, 1.0)
    dist = sign * np.linalg.norm(offset, axis=-1)
    feat = np.zeros(vid.shape, dtype=np.int8)
    return MeshQueryBatch(dist, cp, vid, feat, sign)


# ---------------------------------------------------------------------------
# differentiable re-evaluation (torch)


def _safe_div(num: torch.Tensor, den: torch.Tensor) -> torch.Tensor:
    tiny = torch.full_like(den, 1e-30)
    den = torch.where(den.abs() < 1e-30, tiny, den)
    return num / den


def closest_point_on_triangle_torch(
    p: torch.Tensor, a: torch.Tensor, b: torch.Tensor, c: torch.Tensor
) -> torch.Tensor:
    """Vectorized closest point on triangles; differentiable in all inputs."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    den = va + vb + vc
    v_face = _safe_div(vb, den).unsqueeze(-1)
    w_face = _safe_div(vc, den).unsqueeze(-1)
    out = a + ab * v_face + ac * w_face

    t_bc = _safe_div(d4 - d3, (d4 - d3) + (d5 - d6)).unsqueeze(-1)
    cond = ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)).unsqueeze(-1)
    out = torch.where(cond, b + t_bc * (c - b), out)

    t_ac = _safe_div(d2, d2 - d6).unsqueeze(-1)
    cond = ((vb <= 0) & (d2 >= 0) & (d6 <= 0)).unsqueeze(-1)
    out = torch.where(cond, a + t_ac * ac, out)

    cond = ((d6 >= 0) & (d5 <= d6)).unsqueeze(-1)
    out = torch.where(cond, c, out)

    t_ab = _safe_div(d1, d1 - d3).unsqueeze(-1)
    cond = ((vc <= 0) & (d1 >= 0) & (d3 <= 0)).unsqueeze(-1)
    out = torch.where(cond, a + t_ab * ab, out)

    cond = ((d3 >= 0) & (d4 <= d3)).unsqueeze(-1)
    out = torch.where(cond, b, out)

    cond = ((d1 <= 0) & (d2 <= 0)).unsqueeze(-1)
    out = torch.where(cond, a, out)
    return out


def signed_distances_torch(
    points_t: torch.Tensor,
    verts_t: torch.Tensor,
    triangles: np.ndarray,
    tri_idx: np.ndarray,
    sign: np.ndarray,
) -> torch.Tensor:
    """Differentiable signed distance to the pre-selected closest triangles.

    points_t: (B, N, 3), verts_t: (B, V, 3); tri_idx/sign come from a detached
    `mesh_query_batch` pre-pass on the same positions.
    """
    corners = triangles[tri_idx]  # (B, N, 3) vertex ids
    idx = torch.as_tensor(corners, dtype=torch.long)
    B, N, _ = idx.shape

    def gather(k: int) -> torch.Tensor:
        return torch.gather(verts_t, 1, idx[..., k].unsqueeze(-1).expand(B, N, 3))

    a, b, c = gather(0), gather(1), gather(2)
    cp = closest_point_on_triangle_torch(points_t, a, b, c)
    d = safe_norm(points_t - cp)
    return torch.as_tensor(sign, dtype=points_t.dtype) * d


def vertex_distances_torch(
    points_t: torch.Tensor,
    verts_t: torch.Tensor,
    vert_idx: np.ndarray,
    sign: np.ndarray,
) -> torch.Tensor:
    """Differentiable companion of `vertex_query_batch`."""
    idx = torch.as_tensor(vert_idx, dtype=torch.long)
    B, N = idx.shape
    cp = torch.gather(verts_t, 1, idx.unsqueeze(-1).expand(B, N, 3))
    d = safe_norm(points_t - cp)
    return torch.as_tensor(sign, dtype=points_t.dtype) * d


# ---------------------------------------------------------------------------
# sampling and OBJ I/O


def sample_vertices(count: int, mesh: TriMesh, seed: int) -> np.ndarray:
    """Uniform vertex sample without replacement; all vertices if count >= n."""
    if count < 1:
        raise GeometryError("count must be >= 1")
    n = mesh.n_vertices
    if count >= n:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=count, replace=False)).astype(np.int64)


def load_obj(path) -> TriMesh:
    """Wavefront OBJ subset: v and triangular f lines, 1-based indices."""
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: malformed vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise GeometryError(
                        f"{path}:{lineno}: only triangles are supported "
                        f"(face has {len(idx)} vertices)"
                    )
                tris.append([i - 1 for i in idx])
            # anything else (vn, vt, o, g, s, comments) is ignored
    if not verts or not tris:
        raise GeometryError(f"{path}: no usable geometry")
    return TriMesh(np.array(verts), np.array(tris))


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# primitive meshes (used by tests and the synthetic scene generator)


def weld_vertices(vertices: np.ndarray, triangles: np.ndarray, tol: float = 1e-9) -> TriMesh:
    key = np.round(np.asarray(vertices) / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return TriMesh(np.asarray(vertices)[first], inverse[np.asarray(triangles)])


def make_flat_square(size: float = 1.0, z: float = 0.0) -> TriMesh:
    s = size / 2.0
    v = np.array([[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]])
    t = np.array([[0, 1, 2], [0, 2, 3]])  # CCW facing +z
    return TriMesh(v, t)


def make_single_triangle() -> TriMesh:
    return TriMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]), np.array([[0, 1, 2]]))


def make_box(half_extents, divisions: int = 2, corner_anchored: bool = False) -> TriMesh:
    """Axis-aligned box; each face is a grid of `divisions`^2 quads.

    With corner_anchored=True every face diagonal is anchored at the face
    corner nearest (-x, -y, -z), which makes the three faces at that corner
    contribute equal triangle area to its vertex normal.
    """
    hx, hy, hz = np.broadcast_to(np.asarray(half_extents, dtype=np.float64), (3,))
    n = divisions
    verts: list[np.ndarray] = []
    tris: list[list[int]] = []
    axes = [
        (np.array([0.0, 1, 0]), np.array([0.0, 0, 1]), np.array([1.0, 0, 0]), hy, hz, hx),
        (np.array([0.0, 0, 1]), np.array([0.0, 1, 0]), np.array([-1.0, 0, 0]), hz, hy, hx),
        (np.array([0.0, 0, 1]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), hz, hx, hy),
        (np.array([1.0, 0, 0]), np.array([0.0, 0, 1]), np.array([0.0, -1, 0]), hx, hz, hy),
        (np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), np.array([0.0, 0, 1]), hx, hy, hz),
        (np.array([0.0, 1, 0]), np.array([1.0, 0, 0]), np.array([0.0, 0, -1]), hy, hx, hz),
    ]
    for u, v, w, su, sv, sw in axes:
        base = len(verts)
        for i in range(n + 1):
            for j in range(n + 1):
                pu = (-1.0 + 2.0 * i / n) * su
                pv = (-1.0 + 2.0 * j / n) * sv
                verts.append(pu * u + pv * v + sw * w)
        for i in range(n):
            for j in range(n):
                p00 = base + i * (n + 1) + j
                p01 = p00 + 1
                p10 = p00 + (n + 1)
                p11 = p10 + 1
                flip = False
                if corner_anchored:
                    # route the diagonal through the quad corner nearest (-1,-1,-1)
                    proj = [np.dot(verts[p], [1, 1, 1]) for p in (p00, p01, p10, p11)]
                    flip = int(np.argmin(proj)) in (1, 2)
                if flip:
                    tris.append([p00, p10, p01])
                    tris.append([p01, p10, p11])
                else:
                    tris.append([p00, p10, p11])
                    tris.append([p00, p11, p01])
    return weld_vertices(np.array(verts), np.array(tris))


def make_icosphere(radius: float = 1.0, subdivisions: int = 2) -> TriMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    verts = [row for row in v]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}
        new_t = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        for a, b, c in t:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_t += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        t = np.array(new_t)
    return TriMesh(np.array(verts) * radius, t)


def make_cylinder(radius: float, height: float, n_seg: int = 16, n_rings: int = 4) -> TriMesh:
    """Closed cylinder with axis +z, centered at the origin."""
    ang = 2 * np.pi * np.arange(n_seg) / n_seg
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    verts = []
    for k in range(n_rings + 1):
        z = -height / 2 + height * k / n_rings
        verts += [[x, y, z] for x, y in ring]
    tris = []
    for k in range(n_rings):
        for s in range(n_seg):
            p00 = k * n_seg + s
            p01 = k * n_seg + (s + 1) % n_seg
            p10 = p00 + n_seg
            p11 = p01 + n_seg
            tris += [[p00, p01, p11], [p00, p11, p10]]
    bot = len(verts)
    verts.append([0.0, 0.0, -height / 2])
    top = len(verts)
    verts.append([0.0, 0.0, height / 2])
    for s in range(n_seg):
        tris.append([bot, (s + 1) % n_seg, s])
        base = n_rings * n_seg
        tris.append([top, base + s, base + (s + 1) % n_seg])
    return TriMesh(np.array(verts), np.array(tris))


def signed_volume(mesh: TriMesh) -> float:
    """Positive for closed CCW-outward meshes; a winding sanity check."""
    v = mesh.vertices
    t = mesh.triangles
    return float(np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6.0)
