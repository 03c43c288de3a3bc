"""Synthetic static-grasp scenes with known truth and an equilibrium oracle.

A grasp is built in the hand's local frame: the object is placed in the
closing region, each digit's curl coefficient is root-found until the digit
just touches the object surface (a fraction of a millimeter of clearance),
and the assembly is rotated into one of two world orientations (palm under
the object, or palm sideways so friction must carry the weight). The scene
then carries binary contact truth (with an excluded margin band) and a
certificate of per-contact forces whose mean balances gravity exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (
    TriMesh,
    make_box,
    make_cylinder,
    make_icosphere,
    signed_distances_to_mesh,
)
from .kinematics import (
    HandDoF,
    ObjectDoF,
    SkinnedHandModel,
    axis_angle_to_matrix,
    matrix_to_axis_angle,
    pose_hand,
    synthetic_hand,
)
from .scene import (
    TRUTH_CONTACT,
    TRUTH_EXCLUDED,
    TRUTH_FREE,
    EquilibriumCertificate,
    SceneTrajectory,
)
from .utils import to_numpy

logger = logging.getLogger("forcefit")

SHAPES = ("sphere", "box", "cylinder")
STYLES = ("pinch", "wrap")
ORIENTATIONS = ("side", "up")

CONTACT_LABEL_MM = 1.0   # truth-positive below this distance
FREE_LABEL_MM = 5.0      # truth-negative above this; in between is excluded

DEFAULT_SCENE_MASS = 0.04  # kg; keeps desk-scale grasps balanceable


class GraspError(RuntimeError):
    pass


class CertificateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# objects


def build_object(shape: str, rng: np.random.Generator) -> TriMesh:
    if shape == "sphere":
        return make_icosphere(rng.uniform(0.021, 0.027), 2)
    if shape == "box":
        he = rng.uniform([0.020, 0.018, 0.015], [0.027, 0.024, 0.019])
        return make_box(he, divisions=5)
    if shape == "cylinder":
        mesh = make_cylinder(rng.uniform(0.018, 0.023),
                             rng.uniform(0.050, 0.068), n_seg=16, n_rings=8)
        # lie the axis along x so digits wrap around the curved side
        rot = np.array([[0.0, 0, 1], [0.0, 1, 0], [-1.0, 0, 0]])
        return TriMesh(mesh.vertices @ rot.T, mesh.triangles)
    raise GraspError(f"unknown object shape '{shape}'")


# ---------------------------------------------------------------------------
# grasp construction in the hand frame


def _pose_local(model: SkinnedHandModel, coeffs: np.ndarray) -> TriMesh:
    dof = HandDoF(np.zeros((1, 3)), np.zeros((1, 3)), coeffs[None])
    mesh, _ = pose_hand(dof, model)
    return mesh


def _digit_submesh(model: SkinnedHandModel, digit) -> tuple[np.ndarray, np.ndarray]:
    """(vertex ids, re-indexed triangles) of one digit's closed tube."""
    ids = digit.vertex_ids
    lo, hi = ids[0], ids[-1]
    tris = model.rest_mesh.triangles
    mask = ((tris >= lo) & (tris <= hi)).all(axis=1)
    return ids, tris[mask] - lo


DIGIT_DEPTH_LIMIT = -0.0018  # digit vertices may mate this deep between
                             # object vertices (soft tissue, under the 2 mm cap)


def _digit_gap(model, coeffs, digit, obj_mesh, cache) -> tuple[float, float]:
    """(nearest object-vertex gap to the digit, nearest digit-vertex gap to
    the object). The first guarantees labeled contact vertices on coarse
    meshes; the second limits how deep the digit mates between them."""
    ids, tris = cache.setdefault(digit.name, _digit_submesh(model, digit))
    posed = _pose_local(model, coeffs)
    digit_mesh = TriMesh(posed.vertices[ids], tris)
    g_obj = float(signed_distances_to_mesh(obj_mesh.vertices, digit_mesh).distance.min())
    g_digit = float(signed_distances_to_mesh(posed.vertices[ids], obj_mesh).distance.min())
    return g_obj, g_digit


def _solve_digit_curl(model, coeffs, digit, obj_mesh, target: float,
                      tip_ratios=(0.45, 0.25, 0.0, 0.7, 1.0)):
    """Find (curl, tip_ratio) so the digit's gap to the object equals target.

    The tip ratio sets how much the distal joints coil relative to the main
    curl; scanning a few ratios lets digits reach objects their default
    sweep would miss. Returns None when no combination touches (or the open
    pose already overlaps: a bad placement).
    """
    c_curl, c_tip, _ = digit.coeff_ids
    cache: dict = {}

    def closing(c, ratio):
        # crosses zero when the object-vertex gap reaches `target` or the
        # digit has mated down to its depth limit, whichever happens first
        trial = coeffs.copy()
        trial[c_curl] = c
        trial[c_tip] = ratio * c
        g_obj, g_digit = _digit_gap(model, trial, digit, obj_mesh, cache)
        return min(g_obj - target, g_digit - DIGIT_DEPTH_LIMIT)

    grid = np.linspace(0.05, 2.8, 23)
    for ratio in tip_ratios:
        if closing(grid[0], ratio) < 0:
            return None  # overlapping before any curl: bad placement
        lo = hi = None
        for c in grid[1:]:
            if closing(c, ratio) < 0:
                lo, hi = c - (grid[1] - grid[0]), c
                break
        if lo is None:
            continue
        for _ in range(45):
            mid = 0.5 * (lo + hi)
            if closing(mid, ratio) < 0:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi), ratio
    return None


def _grasp_candidates(style: str, extents: np.ndarray):
    if style == "pinch":
        for z_c in (0.048, 0.052, 0.044, 0.056):
            for y_c in (-0.026, -0.023, -0.029):
                yield np.array([0.0, y_c, z_c])
    else:  # wrap: rest the object just above the palm's inner face
        z_c = 0.009 + extents[2] + 0.00025
        for y_c in (-0.024, -0.020, -0.028):
            yield np.array([0.0, y_c, z_c])


def _labels_for(obj_verts: np.ndarray, hand_mesh: TriMesh) -> np.ndarray:
    dists = signed_distances_to_mesh(obj_verts, hand_mesh).distance
    labels = np.full(len(dists), TRUTH_FREE, dtype=np.int8)
    labels[dists < FREE_LABEL_MM / 1000.0] = TRUTH_EXCLUDED
    labels[dists < CONTACT_LABEL_MM / 1000.0] = TRUTH_CONTACT
    return labels


def _solve_grasp(model: SkinnedHandModel, obj_mesh: TriMesh, style: str,
                 rng: np.random.Generator):
    """Find (coefficients, object center, labels) with opposing patches."""
    extents = np.abs(obj_mesh.vertices).max(axis=0)
    base = np.zeros(15)
    for d in model.digits:
        base[d.coeff_ids[0]] = 0.4
        base[d.coeff_ids[1]] = 0.18
        base[d.coeff_ids[2]] = rng.uniform(-0.08, 0.08)
    target = rng.uniform(0.00015, 0.00035)
    min_fingers = 2 if style == "pinch" else 1
    for center in _grasp_candidates(style, extents):
        placed = TriMesh(obj_mesh.vertices + center, obj_mesh.triangles)
        placed._topology = obj_mesh.topology
        coeffs = base.copy()
        touched_fingers = 0
        thumb_ok = False
        for digit in model.digits:
            sol = _solve_digit_curl(model, coeffs, digit, placed, target)
            if sol is None:
                continue
            curl, ratio = sol
            coeffs[digit.coeff_ids[0]] = curl
            coeffs[digit.coeff_ids[1]] = ratio * curl
            if digit.name == "thumb":
                thumb_ok = True
            else:
                touched_fingers += 1
        if not (thumb_ok and touched_fingers >= min_fingers):
            continue
        hand_mesh = _pose_local(model, coeffs)
        obj_d = signed_distances_to_mesh(placed.vertices, hand_mesh).distance
        hand_d = signed_distances_to_mesh(hand_mesh.vertices, placed).distance
        if obj_d.min() < -0.00195 or hand_d.min() < -0.00195:
            continue  # deeper than the soft-tissue allowance: reject placement
        labels = _labels_for(placed.vertices, hand_mesh)
        ids = np.where(labels == TRUTH_CONTACT)[0]
        if len(ids) < 2:
            continue
        normals = obj_mesh.vertex_normals[ids]
        if (normals @ normals.T).min() > -0.5:
            continue  # patches do not oppose
        return coeffs, center, labels, ids
    raise GraspError(f"could not construct a {style} grasp for this object")


_ORIENT = {
    # columns: where the hand-local x (finger spread), y (finger direction),
    # z (palm normal) axes land in world coordinates
    "up": np.array([[1.0, 0, 0], [0.0, 0, 1], [0.0, -1, 0]]),
    "side": np.array([[0.0, 0, 1], [1.0, 0, 0], [0.0, 1, 0]]),
}


# ---------------------------------------------------------------------------
# equilibrium certificate


def _tangent_basis(n: np.ndarray) -> np.ndarray:
    ref = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0.0, 1, 0])
    t1 = np.cross(n, ref)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=1)  # (3, 2)


def solve_certificate(normals: np.ndarray, mass: float, gravity: np.ndarray,
                      f_max: float, mu_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm contact forces whose mean cancels gravity.

    normals: (K, 3) outward object normals at the contact vertices. Returns
    (f_n, f_s) each (K, 3). Raises CertificateError when no admissible set of
    forces exists (e.g. frictionless side grips).
    """
    import cvxpy as cp

    k = len(normals)
    if k == 0:
        raise CertificateError("no equilibrium certificate (no contact vertices)")
    cap = 0.98 * f_max
    target = -float(k) * mass * np.asarray(gravity, dtype=np.float64)
    frames = np.stack([_tangent_basis(n) for n in normals])  # (K, 3, 2)

    a = cp.Variable(k)
    b = cp.Variable((k, 2))
    force_sum = -normals.T @ a
    for i in range(k):
        force_sum = force_sum + frames[i] @ b[i]
    constraints = [force_sum == target, a >= 0, a <= cap]
    constraints += [cp.norm(b[i]) <= mu_s * a[i] for i in range(k)]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(a) + cp.sum_squares(b)), constraints)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as err:  # pragma: no cover
        raise CertificateError(f"no equilibrium certificate (solver: {err})")
    if prob.status not in ("optimal", "optimal_inaccurate") or a.value is None:
        raise CertificateError(f"no equilibrium certificate (status {prob.status})")

    a_v = np.clip(np.asarray(a.value), 0.0, cap)
    b_v = np.asarray(b.value)
    # pull friction strictly inside the cone before polishing
    for i in range(k):
        nb = np.linalg.norm(b_v[i])
        lim = mu_s * a_v[i]
        if nb > lim:
            b_v[i] *= 0.0 if lim == 0.0 else lim / nb * (1 - 1e-12)

    # polish: exact least-squares correction on contacts with cone slack
    for _ in range(3):
        forces = -normals * a_v[:, None] + np.einsum("kij,kj->ki", frames, b_v)
        r = target - forces.sum(axis=0)
        if np.linalg.norm(r) < 1e-13:
            break
        slack = [i for i in range(k)
                 if 0.02 * cap < a_v[i] < 0.95 * cap
                 and np.linalg.norm(b_v[i]) < 0.9 * mu_s * a_v[i] + 1e-12]
        if not slack:
            slack = [i for i in range(k) if a_v[i] > 0.02 * cap]
        if not slack:
            raise CertificateError("no equilibrium certificate (no polish slack)")
        cols = []
        for i in slack:
            cols.append(-normals[i])
            cols.append(frames[i][:, 0])
            cols.append(frames[i][:, 1])
        a_mat = np.stack(cols, axis=1)  # (3, 3|slack|)
        delta = a_mat.T @ np.linalg.solve(a_mat @ a_mat.T, r)
        for j, i in enumerate(slack):
            a_v[i] += delta[3 * j]
            b_v[i] += delta[3 * j + 1: 3 * j + 3]

    # final strict cone contraction; the net-force damage is O(1e-10)/K
    for i in range(k):
        nb = np.linalg.norm(b_v[i])
        lim = mu_s * a_v[i]
        if nb > lim:
            b_v[i] *= 0.0 if lim == 0.0 else lim / nb * (1 - 1e-12)

    f_n = -normals * a_v[:, None]
    f_s = np.einsum("kij,kj->ki", frames, b_v)
    net = mass * np.asarray(gravity) + (f_n + f_s).sum(0) / k
    if np.linalg.norm(net) > 1e-9:
        raise CertificateError(
            f"no equilibrium certificate (residual {np.linalg.norm(net):.2e} N)")
    mags = np.linalg.norm(f_n, axis=1)
    fric = np.linalg.norm(f_s, axis=1)
    if (mags > f_max).any() or (fric > mu_s * mags * (1 + 1e-12) + 1e-15).any():
        raise CertificateError("no equilibrium certificate (constraint violation)")
    return f_n, f_s


# ---------------------------------------------------------------------------
# scene assembly


def generate_static_grasp(
    object_shape: str,
    grasp_style: str,
    frames: int,
    seed: int,
    mass: float | None = None,
    mu_s: float = 0.8,
    f_max: float = 5.0,
    frame_dt: float = 1.0 / 30.0,
    orientation: str | None = None,
    scene_id: str | None = None,
) -> SceneTrajectory:
    if frames < 3:
        raise GraspError("need at least 3 frames")
    if object_shape not in SHAPES:
        raise GraspError(f"shape must be one of {SHAPES}")
    if grasp_style not in STYLES:
        raise GraspError(f"grasp style must be one of {STYLES}")
    if orientation is None:
        orientation = "side" if grasp_style == "pinch" else "up"
    if orientation not in ORIENTATIONS:
        raise GraspError(f"orientation must be one of {ORIENTATIONS}")
    if mass is None:
        mass = DEFAULT_SCENE_MASS

    rng = np.random.default_rng(seed)
    hand = synthetic_hand()
    obj_mesh = build_object(object_shape, rng)
    coeffs, center_local, labels, contact_ids = _solve_grasp(
        hand, obj_mesh, grasp_style, rng)

    yaw = rng.uniform(-0.26, 0.26)
    r_yaw = to_numpy(axis_angle_to_matrix(np.array([0.0, yaw, 0.0])))
    r_world = r_yaw @ _ORIENT[orientation]
    aa_world = matrix_to_axis_angle(r_world)

    # constant-velocity drift keeps the motion smooth and acceleration-free
    if rng.random() < 0.5:
        velocity = np.zeros(3)
    else:
        velocity = rng.normal(size=3)
        velocity *= rng.uniform(0.002, 0.008) / np.linalg.norm(velocity)
    t = np.arange(frames)[:, None] * frame_dt
    base_shift = rng.normal(scale=0.002, size=3)
    hand_tr = base_shift + t * velocity
    obj_tr = hand_tr + (r_world @ center_local)

    object_dof = ObjectDoF(np.tile(aa_world, (frames, 1)), obj_tr)
    hand_dof = HandDoF(np.tile(aa_world, (frames, 1)), hand_tr,
                       np.tile(coeffs, (frames, 1)))

    world_normals = obj_mesh.vertex_normals[contact_ids] @ r_world.T

    gravity = np.array([0.0, -9.8, 0.0])
    f_n, f_s = solve_certificate(world_normals, mass, gravity, f_max, mu_s)
    certificate = EquilibriumCertificate(contact_ids, f_n, f_s)

    if scene_id is None:
        scene_id = f"{object_shape}-{grasp_style}-{orientation}-s{seed}"
    return SceneTrajectory(
        scene_id=scene_id,
        object_mesh=obj_mesh,
        hand_model=hand,
        object_dof=object_dof,
        hand_dof=hand_dof,
        mass=mass,
        frame_dt=frame_dt,
        contact_truth=labels,
        certificate=certificate,
    )


def parse_grasp_token(token: str) -> tuple[str, str | None]:
    """'pinch', 'wrap', or compound forms like 'wrap-side' / 'pinch-up'."""
    parts = token.split("-")
    style = parts[0]
    if style not in STYLES:
        raise GraspError(f"unknown grasp '{token}'")
    if len(parts) == 1:
        return style, None
    if len(parts) == 2 and parts[1] in ORIENTATIONS:
        return style, parts[1]
    raise GraspError(f"unknown grasp '{token}'")
