"""Pose parameterization: rigid object transforms and the skinned hand.

Object DoF is 6 per frame (axis-angle rotation + translation). Hand DoF is
21 per frame: the same 6 rigid entries plus 15 articulation coefficients that
map linearly to per-joint rotations of a linear-blend-skinning model. A
procedurally built five-digit hand stands in for an externally supplied
skinning model; both go through the same SKINMODEL file format.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .geometry import TriMesh, compute_vertex_normals
from .utils import DTYPE, as_tensor, to_numpy

N_POSE_COEFFS = 15
N_REPORTED_JOINTS = 21


class KinematicsError(ValueError):
    pass


def axis_angle_to_matrix(aa) -> torch.Tensor:
    """Rodrigues rotation for axis-angle vectors of shape (..., 3).

    Uses the series expansion of sin(t)/t and (1-cos(t))/t^2 below t=1e-4 so
    values and gradients stay finite through zero rotation.
    """
    aa = torch.as_tensor(aa, dtype=DTYPE)
    theta_sq = (aa * aa).sum(-1)
    theta = torch.sqrt(theta_sq.clamp_min(1e-24))
    small = theta < 1e-4
    theta_safe = torch.where(small, torch.ones_like(theta), theta)
    a = torch.where(small, 1.0 - theta_sq / 6.0, torch.sin(theta_safe) / theta_safe)
    b = torch.where(
        small, 0.5 - theta_sq / 24.0, (1.0 - torch.cos(theta_safe)) / theta_safe**2
    )
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], dim=-1
    ).reshape(aa.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=DTYPE).expand(k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def matrix_to_axis_angle(r: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues; handles the small-angle and near-pi branches."""
    r = np.asarray(r, dtype=np.float64)
    cos_t = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-8:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # axis from the dominant column of (R + I) / 2
        m = (r + np.eye(3)) / 2.0
        k = np.argmax(np.diag(m))
        axis = m[:, k] / np.sqrt(max(m[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        return theta * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta * axis / (2.0 * np.sin(theta))


# ---------------------------------------------------------------------------
# DoF containers


@dataclass
class ObjectDoF:
    """Per-frame rigid transform, stacked to (T, 6)."""

    axis_angle: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.axis_angle = np.atleast_2d(np.asarray(self.axis_angle, dtype=np.float64))
        self.translation = np.atleast_2d(np.asarray(self.translation, dtype=np.float64))
        if self.axis_angle.shape != self.translation.shape or self.axis_angle.shape[1] != 3:
            raise KinematicsError("axis_angle and translation must both be (T, 3)")
        if not (np.isfinite(self.axis_angle).all() and np.isfinite(self.translation).all()):
            raise KinematicsError("non-finite DoF")

    @property
    def n_frames(self) -> int:
        return len(self.axis_angle)

    def to_matrix(self) -> np.ndarray:
        return np.concatenate([self.axis_angle, self.translation], axis=1)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "ObjectDoF":
        m = np.atleast_2d(np.asarray(m, dtype=np.float64))
        if m.shape[1] != 6:
            raise KinematicsError("object DoF rows must have 6 entries")
        return ObjectDoF(m[:, :3], m[:, 3:6])


@dataclass
class HandDoF:
    """Rigid transform + 15 articulation coefficients per frame, (T, 21)."""

    axis_angle: np.ndarray
    translation: np.ndarray
    pose_coeffs: np.ndarray

    def __post_init__(self):
        self.axis_angle = np.atleast_2d(np.asarray(self.axis_angle, dtype=np.float64))
        self.translation = np.atleast_2d(np.asarray(self.translation, dtype=np.float64))
        self.pose_coeffs = np.atleast_2d(np.asarray(self.pose_coeffs, dtype=np.float64))
        t = len(self.axis_angle)
        if self.translation.shape != (t, 3) or self.pose_coeffs.shape != (t, N_POSE_COEFFS):
            raise KinematicsError("hand DoF shapes inconsistent")
        for a in (self.axis_angle, self.translation, self.pose_coeffs):
            if not np.isfinite(a).all():
                raise KinematicsError("non-finite DoF")

    @property
    def n_frames(self) -> int:
        return len(self.axis_angle)

    def to_matrix(self) -> np.ndarray:
        return np.concatenate([self.axis_angle, self.translation, self.pose_coeffs], axis=1)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "HandDoF":
        m = np.atleast_2d(np.asarray(m, dtype=np.float64))
        if m.shape[1] != 6 + N_POSE_COEFFS:
            raise KinematicsError("hand DoF rows must have 21 entries")
        return HandDoF(m[:, :3], m[:, 3:6], m[:, 6:])


# ---------------------------------------------------------------------------
# skinned hand model


@dataclass
class DigitInfo:
    name: str
    joint_ids: tuple[int, int, int]
    coeff_ids: tuple[int, int, int]  # curl, tip curl, spread
    vertex_ids: np.ndarray
    tip_vertex: int


@dataclass
class SkinnedHandModel:
    rest_mesh: TriMesh
    joint_rest: np.ndarray       # (J, 3)
    joint_parent: np.ndarray     # (J,), -1 for the root, parents precede children
    skin_weights: np.ndarray     # (n, J), rows sum to 1
    pose_basis: np.ndarray       # (15, J, 3) coefficient -> per-joint axis-angle
    joint_regressor: np.ndarray  # (21, n) posed vertices -> reported joints
    digits: list[DigitInfo] = field(default_factory=list)
    _tensors: dict | None = field(default=None, repr=False, compare=False)

    @property
    def n_joints(self) -> int:
        return len(self.joint_rest)

    def validate(self) -> None:
        w = self.skin_weights
        if (w < -1e-12).any():
            raise KinematicsError("negative skin weight")
        if not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
            raise KinematicsError("skin weight rows must sum to 1")
        p = self.joint_parent
        if p[0] != -1 or (p[1:] >= np.arange(1, len(p))).any() or (p[1:] < 0).any():
            raise KinematicsError("joint parents must form a rooted tree (parents first)")
        if self.pose_basis.shape != (N_POSE_COEFFS, self.n_joints, 3):
            raise KinematicsError("pose basis shape mismatch")
        if self.joint_regressor.shape != (N_REPORTED_JOINTS, self.rest_mesh.n_vertices):
            raise KinematicsError("joint regressor shape mismatch")

    def tensors(self) -> dict:
        if self._tensors is None:
            self._tensors = {
                "rest": as_tensor(self.rest_mesh.vertices),
                "joint_rest": as_tensor(self.joint_rest),
                "weights": as_tensor(self.skin_weights),
                "basis": as_tensor(self.pose_basis),
                "regressor": as_tensor(self.joint_regressor),
            }
        return self._tensors


# ---------------------------------------------------------------------------
# posing


def pose_object_torch(aa_t: torch.Tensor, trans_t: torch.Tensor,
                      rest_verts: torch.Tensor, rest_normals: torch.Tensor):
    """Rigid pose for all frames: verts (T,V,3) and rotated normals."""
    r = axis_angle_to_matrix(aa_t)  # (T,3,3)
    verts = torch.einsum("tab,vb->tva", r, rest_verts) + trans_t[:, None, :]
    normals = torch.einsum("tab,vb->tva", r, rest_normals)
    return verts, normals


def pose_object_all(dof: ObjectDoF, rest: TriMesh):
    verts, normals = pose_object_torch(
        as_tensor(dof.axis_angle), as_tensor(dof.translation),
        as_tensor(rest.vertices), as_tensor(rest.vertex_normals),
    )
    return to_numpy(verts), to_numpy(normals)


def pose_object(dof: ObjectDoF, rest: TriMesh, frame: int = 0) -> TriMesh:
    verts, _ = pose_object_all(dof, rest)
    return rest.with_vertices(verts[frame])


def skinning_apply(rot: torch.Tensor, trans: torch.Tensor,
                   weights: torch.Tensor, rest: torch.Tensor) -> torch.Tensor:
    """Blend per-joint affine transforms: rot (T,J,3,3), trans (T,J,3)."""
    blended_rot = torch.einsum("vj,tjab->tvab", weights, rot)
    blended_trans = torch.einsum("vj,tjb->tvb", weights, trans)
    return torch.einsum("tvab,vb->tva", blended_rot, rest) + blended_trans


def forward_kinematics(joint_rot: torch.Tensor, joint_rest: torch.Tensor,
                       parents: np.ndarray):
    """Compose local joint rotations down the tree.

    joint_rot: (T,J,3,3) local rotations about each joint's rest position.
    Returns global (rot (T,J,3,3), joint positions (T,J,3)).
    """
    J = joint_rot.shape[1]
    rots = [joint_rot[:, 0]]
    pos = [joint_rest[0].expand_as(joint_rot[:, 0, :, 0])]
    for j in range(1, J):
        p = parents[j]
        off = joint_rest[j] - joint_rest[p]
        rots.append(rots[p] @ joint_rot[:, j])
        pos.append(pos[p] + torch.einsum("tab,b->ta", rots[p], off))
    return torch.stack(rots, dim=1), torch.stack(pos, dim=1)


def pose_hand_torch(aa_t, trans_t, coeffs_t, model: SkinnedHandModel):
    """LBS pose for all frames; returns (verts (T,n,3), joints (T,21,3))."""
    ten = model.tensors()
    joint_aa = torch.einsum("tk,kjc->tjc", coeffs_t, ten["basis"])
    local_rot = axis_angle_to_matrix(joint_aa)  # (T,J,3,3)
    g_rot, g_pos = forward_kinematics(local_rot, ten["joint_rest"], model.joint_parent)
    # S_j(x) = R_j (x - rest_j) + pos_j
    skin_trans = g_pos - torch.einsum("tjab,jb->tja", g_rot, ten["joint_rest"])
    skinned = skinning_apply(g_rot, skin_trans, ten["weights"], ten["rest"])
    r = axis_angle_to_matrix(aa_t)
    verts = torch.einsum("tab,tvb->tva", r, skinned) + trans_t[:, None, :]
    joints = torch.einsum("rv,tvc->trc", ten["regressor"], verts)
    return verts, joints


def pose_hand_all(dof: HandDoF, model: SkinnedHandModel):
    verts, joints = pose_hand_torch(
        as_tensor(dof.axis_angle), as_tensor(dof.translation),
        as_tensor(dof.pose_coeffs), model,
    )
    return to_numpy(verts), to_numpy(joints)


def pose_hand(dof: HandDoF, model: SkinnedHandModel, frame: int = 0):
    verts, joints = pose_hand_all(dof, model)
    return model.rest_mesh.with_vertices(verts[frame]), joints[frame]


# ---------------------------------------------------------------------------
# procedural hand surrogate

_FINGERS = [
    # name, base x, length scale, base radius
    ("index", -0.030, 0.97, 0.0072),
    ("middle", -0.010, 1.06, 0.0075),
    ("ring", 0.010, 1.00, 0.0072),
    ("pinky", 0.030, 0.82, 0.0062),
]
_SEGMENTS = (0.033, 0.023, 0.018)  # proximal, middle, distal (scaled per digit)
_RING_SIZE = 12
_BLEND_HALF_WIDTH = 0.004


def _digit_geometry(base, direction, lengths, r0, blunt=False):
    """Tube vertices for one digit; returns (verts, tris, stations, tip_id).

    blunt digits (the thumb) keep a wide pad at the tip instead of tapering
    to a point.
    """
    d = np.asarray(direction, dtype=np.float64)
    d /= np.linalg.norm(d)
    ref = np.array([1.0, 0, 0]) if abs(d[0]) < 0.9 else np.array([0.0, 0, 1])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    l1, l2, l3 = lengths
    total = l1 + l2 + l3
    if blunt:
        stations = [
            (0.0, r0), (0.33 * l1, r0), (0.66 * l1, r0), (l1, 0.98 * r0),
            (l1 + 0.5 * l2, 0.96 * r0), (l1 + l2, 0.94 * r0),
            (l1 + l2 + 0.45 * l3, 0.92 * r0), (l1 + l2 + 0.85 * l3, 0.88 * r0),
            (total + 0.3 * r0, 0.70 * r0), (total + 0.6 * r0, 0.40 * r0),
        ]
    else:
        stations = [
            (0.0, r0), (0.33 * l1, r0), (0.66 * l1, 0.98 * r0), (l1, 0.94 * r0),
            (l1 + 0.5 * l2, 0.90 * r0), (l1 + l2, 0.86 * r0),
            (l1 + l2 + 0.45 * l3, 0.80 * r0), (l1 + l2 + 0.8 * l3, 0.72 * r0),
            (total, 0.5 * r0), (total + 0.35 * r0, 0.22 * r0),
        ]
    verts = []
    phis = 2 * np.pi * np.arange(_RING_SIZE) / _RING_SIZE
    for s, r in stations:
        center = base + d * s
        for phi in phis:
            verts.append(center + r * (np.cos(phi) * u + np.sin(phi) * v))
    tris = []
    for k in range(len(stations) - 1):
        for i in range(_RING_SIZE):
            p00 = k * _RING_SIZE + i
            p01 = k * _RING_SIZE + (i + 1) % _RING_SIZE
            p10 = p00 + _RING_SIZE
            p11 = p01 + _RING_SIZE
            tris += [[p00, p01, p11], [p00, p11, p10]]
    apex = len(verts)
    verts.append(base + d * (total + (0.85 if blunt else 0.65) * r0))
    last = (len(stations) - 1) * _RING_SIZE
    for i in range(_RING_SIZE):
        tris.append([apex, last + i, last + (i + 1) % _RING_SIZE])
    root_center = len(verts)
    verts.append(base.copy())
    for i in range(_RING_SIZE):
        tris.append([root_center, (i + 1) % _RING_SIZE, i])
    arc = np.array([s for s, _ in stations])
    return np.array(verts), np.array(tris), arc, apex


def _digit_weights(arc_lengths, n_verts, l1, l12, joint_ids, n_joints):
    """Crossfaded weights root->j1->j2->j3 along the digit axis."""
    w = np.zeros((n_verts, n_joints))
    j1, j2, j3 = joint_ids
    owners = [0, j1, j2, j3]  # 0 = root joint id
    bounds = [0.0, l1, l12]
    delta = _BLEND_HALF_WIDTH
    for vi in range(n_verts):
        s = arc_lengths[vi]
        row = np.zeros(n_joints)
        seg = sum(s > b for b in bounds)  # 0..3 -> owner index
        row[owners[seg]] = 1.0
        for bi, b in enumerate(bounds):
            if abs(s - b) < delta:
                alpha = (s - (b - delta)) / (2 * delta)
                row[:] = 0.0
                row[owners[bi]] = 1.0 - alpha
                row[owners[bi + 1]] = alpha
                break
        w[vi] = row
    return w


def synthetic_hand() -> SkinnedHandModel:
    """Built-in five-digit hand: slab palm + tube digits, 16 joints.

    Local frame: palm spans y in [-0.09, 0], inner face toward +z, fingers
    extend +y, the thumb leaves the palm base pointing down-forward so that
    curling closes it against the fingers above the palm.
    """
    from .geometry import make_box

    palm = make_box((0.040, 0.045, 0.009), divisions=5)
    palm_verts = palm.vertices + np.array([0.0, -0.045, 0.0])
    verts = [palm_verts]
    tris = [palm.triangles]
    n_joints = 16
    joint_rest = np.zeros((n_joints, 3))
    joint_parent = np.full(n_joints, -1, dtype=np.int64)
    joint_rest[0] = (0.0, -0.045, 0.0)
    weights_blocks = [np.zeros((len(palm_verts), n_joints))]
    weights_blocks[0][:, 0] = 1.0

    digit_specs = []
    for name, bx, scale, r0 in _FINGERS:
        digit_specs.append(
            (name, np.array([bx, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
             tuple(s * scale for s in _SEGMENTS), r0,
             np.array([1.0, 0, 0]), np.array([0.0, 0, 1.0]))
        )
    digit_specs.append(
        ("thumb", np.array([0.0, -0.088, 0.010]), np.array([0.0, -0.72, 0.694]),
         (0.036, 0.027, 0.022), 0.0095,
         np.array([-1.0, 0, 0]), np.array([0.0, 0, 1.0]))
    )

    pose_basis = np.zeros((N_POSE_COEFFS, n_joints, 3))
    digits: list[DigitInfo] = []
    offset = len(palm_verts)
    next_joint = 1
    for di, (name, base, direction, lengths, r0, flex, splay) in enumerate(digit_specs):
        d = direction / np.linalg.norm(direction)
        j1, j2, j3 = next_joint, next_joint + 1, next_joint + 2
        next_joint += 3
        joint_rest[j1] = base
        joint_rest[j2] = base + d * lengths[0]
        joint_rest[j3] = base + d * (lengths[0] + lengths[1])
        joint_parent[j1], joint_parent[j2], joint_parent[j3] = 0, j1, j2
        dv, dt, arc, apex = _digit_geometry(base, d, lengths, r0, blunt=(name == "thumb"))
        arc_per_vertex = np.concatenate(
            [np.repeat(arc, _RING_SIZE), [arc[-1] + 0.3 * r0], [0.0]]
        )
        w = _digit_weights(arc_per_vertex, len(dv), lengths[0],
                           lengths[0] + lengths[1], (j1, j2, j3), n_joints)
        verts.append(dv)
        tris.append(dt + offset)
        weights_blocks.append(w)
        c_curl, c_tip, c_spread = 3 * di, 3 * di + 1, 3 * di + 2
        pose_basis[c_curl, j1] = 0.55 * flex
        pose_basis[c_curl, j2] = 0.80 * flex
        pose_basis[c_curl, j3] = 0.65 * flex
        pose_basis[c_tip, j2] = 0.45 * flex
        pose_basis[c_tip, j3] = 0.80 * flex
        pose_basis[c_spread, j1] = 0.30 * splay
        digits.append(DigitInfo(
            name, (j1, j2, j3), (c_curl, c_tip, c_spread),
            np.arange(offset, offset + len(dv)), offset + apex,
        ))
        offset += len(dv)

    all_verts = np.concatenate(verts)
    all_tris = np.concatenate(tris)
    all_weights = np.concatenate(weights_blocks)
    mesh = TriMesh(all_verts, all_tris)

    regressor = np.zeros((N_REPORTED_JOINTS, len(all_verts)))
    for j in range(n_joints):
        d2 = ((all_verts - joint_rest[j]) ** 2).sum(1)
        near = np.argsort(d2)[:6]
        wts = 1.0 / (np.sqrt(d2[near]) + 1e-4)
        regressor[j, near] = wts / wts.sum()
    for di, info in enumerate(digits):
        tip_ring = info.vertex_ids[-2 - _RING_SIZE: -1]  # last ring + apex
        regressor[n_joints + di, tip_ring] = 1.0 / len(tip_ring)

    model = SkinnedHandModel(
        rest_mesh=mesh,
        joint_rest=joint_rest,
        joint_parent=joint_parent,
        skin_weights=all_weights,
        pose_basis=pose_basis,
        joint_regressor=regressor,
        digits=digits,
    )
    model.validate()
    return model


# ---------------------------------------------------------------------------
# SKINMODEL file format

_MAGIC = "SKINMODEL 1"


def save_skin_model(model: SkinnedHandModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MAGIC + "\n")
        v = model.rest_mesh.vertices
        fh.write(f"vertices {len(v)}\n")
        for row in v:
            fh.write(f"{float(row[0])!r} {float(row[1])!r} {float(row[2])!r}\n")
        t = model.rest_mesh.triangles
        fh.write(f"triangles {len(t)}\n")
        for row in t:
            fh.write(f"{row[0]} {row[1]} {row[2]}\n")
        fh.write(f"joints {model.n_joints}\n")
        for j in range(model.n_joints):
            p = model.joint_rest[j]
            fh.write(f"{model.joint_parent[j]} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        vi, ji = np.nonzero(model.skin_weights)
        fh.write(f"weights {len(vi)}\n")
        for a, b in zip(vi, ji):
            fh.write(f"{a} {b} {float(model.skin_weights[a, b])!r}\n")
        ki, ji, ci = np.nonzero(model.pose_basis)
        entries = sorted(set(zip(ki.tolist(), ji.tolist())))
        fh.write(f"pose_basis {len(entries)}\n")
        for k, j in entries:
            row = model.pose_basis[k, j]
            fh.write(f"{k} {j} {float(row[0])!r} {float(row[1])!r} {float(row[2])!r}\n")
        ri, vi = np.nonzero(model.joint_regressor)
        fh.write(f"regressor {len(ri)}\n")
        for a, b in zip(ri, vi):
            fh.write(f"{a} {b} {float(model.joint_regressor[a, b])!r}\n")
        fh.write("end\n")


def load_skin_model(path) -> SkinnedHandModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise KinematicsError(f"{path}: not a {_MAGIC} file")
    pos = 1

    def expect(keyword):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != keyword:
            raise KinematicsError(f"{path}: expected '{keyword} <count>' at line {pos + 1}")
        pos += 1
        return int(parts[1])

    n = expect("vertices")
    verts = np.array([[float(x) for x in lines[pos + i].split()] for i in range(n)])
    pos += n
    m = expect("triangles")
    tris = np.array([[int(x) for x in lines[pos + i].split()] for i in range(m)])
    pos += m
    nj = expect("joints")
    parents = np.empty(nj, dtype=np.int64)
    joint_rest = np.empty((nj, 3))
    for i in range(nj):
        parts = lines[pos + i].split()
        parents[i] = int(parts[0])
        joint_rest[i] = [float(x) for x in parts[1:4]]
    pos += nj
    nw = expect("weights")
    weights = np.zeros((n, nj))
    for i in range(nw):
        a, b, w = lines[pos + i].split()
        weights[int(a), int(b)] = float(w)
    pos += nw
    nb = expect("pose_basis")
    basis = np.zeros((N_POSE_COEFFS, nj, 3))
    for i in range(nb):
        parts = lines[pos + i].split()
        basis[int(parts[0]), int(parts[1])] = [float(x) for x in parts[2:5]]
    pos += nb
    nr = expect("regressor")
    regressor = np.zeros((N_REPORTED_JOINTS, n))
    for i in range(nr):
        a, b, w = lines[pos + i].split()
        regressor[int(a), int(b)] = float(w)
    pos += nr
    if pos >= len(lines) or lines[pos].strip() != "end":
        raise KinematicsError(f"{path}: missing 'end'")
    model = SkinnedHandModel(TriMesh(verts, tris), joint_rest, parents,
                             weights, basis, regressor)
    model.validate()
    return model
