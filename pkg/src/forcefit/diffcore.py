"""End-to-end energy evaluation with reverse-mode gradients.

The full computation graph (pose -> signed distances -> contact
probabilities -> forces -> energy terms) is built in float64 torch, so one
backward pass yields exact derivatives of the implemented graph with respect
to every optimization variable, including the paths from contact
probabilities back into pose DoF. The closest-triangle selection and the
distance sign are non-differentiable and come from a detached pre-pass; the
gradient therefore follows the currently-closest triangle, which is the
subgradient choice away from the measure-zero equidistant sets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import geometry as geo
from .contact import ContactParams, contact_probability
from .energy import (
    EnergyBreakdown,
    EnergyWeights,
    e_deviation,
    e_force_reg,
    e_penetration,
    e_physics,
)
from .forces import (
    ForceField,
    PhysicsConstants,
    field_layers_from_flat,
    force_field_forward,
    friction_force,
    init_force_field,
    normal_force,
)
from .kinematics import HandDoF, ObjectDoF, pose_hand_torch, pose_object_torch
from .scene import SceneTrajectory
from .utils import as_tensor, to_numpy

N_COEFFS = 15


class EnergyNonFiniteError(RuntimeError):
    def __init__(self, term: str, value: float):
        super().__init__(f"energy term '{term}' is non-finite ({value})")
        self.term = term
        self.value = value


@dataclass
class BatchSpec:
    """Frames and sampled vertex ids evaluated together, at contact width z."""

    frames: np.ndarray
    object_vertex_ids: np.ndarray
    hand_vertex_ids: np.ndarray
    z: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.object_vertex_ids = np.asarray(self.object_vertex_ids, dtype=np.int64)
        self.hand_vertex_ids = np.asarray(self.hand_vertex_ids, dtype=np.int64)


@dataclass
class ParamLayout:
    """Flat layout: object DoF (T*6), hand rigid (T*6), finger coefficients
    (15 shared, or T*15), then the force-field parameters."""

    n_frames: int
    share_finger_pose: bool
    hidden_width: int
    field_params: int

    @property
    def n_coeff_params(self) -> int:
        return N_COEFFS if self.share_finger_pose else self.n_frames * N_COEFFS

    @property
    def object_slice(self) -> slice:
        return slice(0, self.n_frames * 6)

    @property
    def hand_rigid_slice(self) -> slice:
        s = self.n_frames * 6
        return slice(s, s + self.n_frames * 6)

    @property
    def coeff_slice(self) -> slice:
        s = self.n_frames * 12
        return slice(s, s + self.n_coeff_params)

    @property
    def field_slice(self) -> slice:
        s = self.n_frames * 12 + self.n_coeff_params
        return slice(s, s + self.field_params)

    @property
    def size(self) -> int:
        return self.field_slice.stop


@dataclass
class ParamVector:
    layout: ParamLayout
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.layout.size,):
            raise ValueError("parameter vector has wrong length")

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.data.copy())

    def object_dof(self) -> ObjectDoF:
        m = self.data[self.layout.object_slice].reshape(-1, 6)
        return ObjectDoF.from_matrix(m)

    def hand_dof(self) -> HandDoF:
        rigid = self.data[self.layout.hand_rigid_slice].reshape(-1, 6)
        coeffs = self.data[self.layout.coeff_slice]
        if self.layout.share_finger_pose:
            coeffs = np.tile(coeffs, (self.layout.n_frames, 1))
        else:
            coeffs = coeffs.reshape(-1, N_COEFFS)
        return HandDoF(rigid[:, :3], rigid[:, 3:], coeffs)

    def force_field(self) -> ForceField:
        return ForceField.from_flat(self.data[self.layout.field_slice],
                                    self.layout.hidden_width)

    @staticmethod
    def pack(scene: SceneTrajectory, field: ForceField,
             share_finger_pose: bool) -> "ParamVector":
        layout = ParamLayout(scene.n_frames, share_finger_pose,
                             field.hidden_width, field.n_params)
        coeffs = scene.hand_dof.pose_coeffs
        coeff_part = coeffs[0] if share_finger_pose else coeffs.ravel()
        data = np.concatenate([
            scene.object_dof.to_matrix().ravel(),
            np.concatenate([scene.hand_dof.axis_angle,
                            scene.hand_dof.translation], axis=1).ravel(),
            coeff_part,
            field.to_flat(),
        ])
        return ParamVector(layout, data)


@dataclass
class GradientReport:
    value: float
    gradient: np.ndarray
    breakdown: EnergyBreakdown


class EnergyModel:
    """Binds a scene to weights/constants and evaluates E and dE/dtheta."""

    def __init__(
        self,
        scene: SceneTrajectory,
        weights: EnergyWeights,
        consts: PhysicsConstants | None = None,
        p0: float = 0.5,
        share_finger_pose: bool = True,
        hidden_width: int = 64,
        sdf_mode: str = "surface",
    ):
        if sdf_mode not in ("surface", "vertex"):
            raise ValueError("sdf_mode must be 'surface' or 'vertex'")
        self.scene = scene
        self.weights = weights
        self.consts = consts if consts is not None else PhysicsConstants(
            mass=scene.mass, frame_dt=scene.frame_dt)
        self.p0 = p0
        self.share_finger_pose = share_finger_pose
        self.hidden_width = hidden_width
        self.sdf_mode = sdf_mode
        t = scene.n_frames
        if t < 3 and (weights.gamma_phy > 0 or weights.gamma_smooth > 0):
            raise ValueError("physics/smoothness terms need at least 3 frames")

        self._obj_rest = as_tensor(scene.object_mesh.vertices)
        self._obj_rest_normals = as_tensor(scene.object_mesh.vertex_normals)
        self._hand_model = scene.hand_model
        self._obj_topo = scene.object_mesh.topology
        self._hand_topo = scene.hand_model.rest_mesh.topology
        self._gravity = as_tensor(self.consts.gravity_vec)
        self._t_norm = np.arange(t) / max(t - 1, 1)

        # E_dev anchors: where every vertex started, for all frames
        with torch.no_grad():
            ov, _ = pose_object_torch(
                as_tensor(scene.object_dof.axis_angle),
                as_tensor(scene.object_dof.translation),
                self._obj_rest, self._obj_rest_normals)
            hv, _ = pose_hand_torch(
                as_tensor(scene.hand_dof.axis_angle),
                as_tensor(scene.hand_dof.translation),
                as_tensor(scene.hand_dof.pose_coeffs),
                scene.hand_model)
        self._obj_initial = to_numpy(ov)
        self._hand_initial = to_numpy(hv)
        self._field_center = self._obj_initial[0].mean(axis=0)

    # -- parameter plumbing -------------------------------------------------

    def make_field(self, seed: int) -> ForceField:
        return init_force_field(self.hidden_width, seed)

    def initial_params(self, field: ForceField | None = None,
                       field_seed: int = 0) -> ParamVector:
        if field is None:
            field = self.make_field(field_seed)
        return ParamVector.pack(self.scene, field, self.share_finger_pose)

    def scene_from_params(self, params: ParamVector) -> SceneTrajectory:
        return self.scene.with_dofs(params.object_dof(), params.hand_dof())

    # -- energy graph ---------------------------------------------------------

    def _active(self):
        w = self.weights
        return {
            "physics": w.gamma_phy > 0,
            "force_reg": w.gamma_fr > 0,
            "penetration": w.gamma_pen > 0,
            "deviation": w.gamma_dev > 0,
            "smooth": w.gamma_smooth > 0,
        }

    def _signed_distances(self, points_t, verts_t, topo, triangles):
        pts = to_numpy(points_t)
        vts = to_numpy(verts_t)
        if self.sdf_mode == "vertex":
            pre = geo.vertex_query_batch(pts, vts, topo)
            return geo.vertex_distances_torch(points_t, verts_t,
                                              pre.closest_triangle, pre.sign)
        pre = geo.mesh_query_batch(pts, vts, topo)
        return geo.signed_distances_torch(points_t, verts_t, triangles,
                                          pre.closest_triangle, pre.sign)

    def _graph(self, params_t: torch.Tensor, batch: BatchSpec):
        """Build the energy graph; returns dict of active term tensors."""
        layout_p = ParamLayout(self.scene.n_frames, self.share_finger_pose,
                               self.hidden_width, 0)
        t_total = self.scene.n_frames
        fr = batch.frames
        active = self._active()
        w = self.weights
        consts = self.consts

        obj_mat = params_t[layout_p.object_slice].reshape(t_total, 6)
        hand_mat = params_t[layout_p.hand_rigid_slice].reshape(t_total, 6)
        coeff_part = params_t[layout_p.coeff_slice]
        if self.share_finger_pose:
            coeffs = coeff_part.unsqueeze(0).expand(t_total, N_COEFFS)
        else:
            coeffs = coeff_part.reshape(t_total, N_COEFFS)

        need_forces = active["physics"] or active["force_reg"]
        need_obj_sdf = need_forces or active["penetration"]
        need_hand_sdf = active["penetration"]

        terms: dict[str, torch.Tensor] = {}

        # frames with well-defined acceleration inside this batch
        sel = fr[fr >= 2]

        # pose both meshes for the batch frames (full vertex sets: the
        # opposite side's surface queries need complete triangles)
        obj_verts = obj_normals = hand_verts = None
        if need_obj_sdf or active["deviation"] or need_hand_sdf:
            obj_verts, obj_normals = pose_object_torch(
                obj_mat[fr, :3], obj_mat[fr, 3:], self._obj_rest,
                self._obj_rest_normals)
        if need_obj_sdf or need_hand_sdf or active["deviation"]:
            hand_verts, _ = pose_hand_torch(
                hand_mat[fr, :3], hand_mat[fr, 3:], coeffs[fr], self._hand_model)

        obj_ids = batch.object_vertex_ids
        hand_ids = batch.hand_vertex_ids

        d_obj = None
        if need_obj_sdf:
            d_obj = self._signed_distances(
                obj_verts[:, obj_ids], hand_verts, self._hand_topo,
                self._hand_model.rest_mesh.triangles)

        if need_forces:
            p_c = contact_probability(d_obj, ContactParams(batch.z, self.p0))
            pos_in = obj_verts[:, obj_ids] - as_tensor(self._field_center)
            t_in = as_tensor(self._t_norm[fr])[:, None].expand(len(fr), len(obj_ids))
            layers = field_layers_from_flat(
                params_t[self.layout.field_slice], self.hidden_width)
            f_na, f_sa = force_field_forward(pos_in, t_in, layers)
            f_n = normal_force(p_c, f_na, obj_normals[:, obj_ids], consts.f_max)
            f_s = friction_force(f_n, f_sa, consts.mu_s)
            if active["force_reg"]:
                terms["force_reg"] = e_force_reg(f_n, f_s)
            if active["physics"] and len(sel):
                tr = obj_mat[:, 3:]
                acc = tr[sel] - 2.0 * tr[sel - 1] + tr[sel - 2]
                f_fd = consts.mass * acc / consts.frame_dt**2
                f_net = consts.mass * self._gravity + (f_n + f_s).sum(1) / len(obj_ids)
                sel_pos = np.searchsorted(fr, sel)
                terms["physics"] = e_physics(f_fd, f_net[sel_pos])

        if active["penetration"]:
            d_hand = self._signed_distances(
                hand_verts[:, hand_ids], obj_verts, self._obj_topo,
                self.scene.object_mesh.triangles)
            terms["penetration"] = e_penetration(d_obj, d_hand, w.d_pen)

        if active["deviation"]:
            obj_init = as_tensor(self._obj_initial[fr][:, obj_ids])
            hand_init = as_tensor(self._hand_initial[fr][:, hand_ids])
            terms["deviation"] = (e_deviation(obj_verts[:, obj_ids], obj_init)
                                  + e_deviation(hand_verts[:, hand_ids], hand_init))

        if active["smooth"] and len(sel):
            # object translation + hand root translation + reported joints
            needed = np.unique(np.concatenate([sel, sel - 1, sel - 2]))
            _, joints = pose_hand_torch(
                hand_mat[needed, :3], hand_mat[needed, 3:], coeffs[needed],
                self._hand_model)
            at = {t: i for i, t in enumerate(needed)}
            i0 = [at[t] for t in sel]
            i1 = [at[t - 1] for t in sel]
            i2 = [at[t - 2] for t in sel]
            acc_j = joints[i0] - 2.0 * joints[i1] + joints[i2]
            tr_o = obj_mat[:, 3:]
            tr_h = hand_mat[:, 3:]
            acc_o = tr_o[sel] - 2.0 * tr_o[sel - 1] + tr_o[sel - 2]
            acc_h = tr_h[sel] - 2.0 * tr_h[sel - 1] + tr_h[sel - 2]
            terms["smooth"] = (acc_j**2).sum() + (acc_o**2).sum() + (acc_h**2).sum()

        return terms

    @property
    def layout(self) -> ParamLayout:
        from .forces import field_layer_shapes

        n = sum(o * i + o for o, i in field_layer_shapes(self.hidden_width))
        return ParamLayout(self.scene.n_frames, self.share_finger_pose,
                           self.hidden_width, n)

    def _assemble(self, terms: dict) -> tuple[torch.Tensor | None, EnergyBreakdown]:
        w = self.weights
        gammas = {
            "physics": w.gamma_phy,
            "force_reg": w.gamma_fr,
            "penetration": w.gamma_pen,
            "deviation": w.gamma_dev,
            "smooth": w.gamma_smooth,
        }
        total_t = None
        values = {}
        for name, tensor in terms.items():
            v = float(tensor.detach())
            if not np.isfinite(v):
                raise EnergyNonFiniteError(name, v)
            values[name] = v
            contrib = gammas[name] * tensor
            total_t = contrib if total_t is None else total_t + contrib
        bd = EnergyBreakdown(
            physics=values.get("physics", 0.0),
            force_reg=values.get("force_reg", 0.0),
            penetration=values.get("penetration", 0.0),
            deviation=values.get("deviation", 0.0),
            smooth=values.get("smooth", 0.0),
            total=float(total_t.detach()) if total_t is not None else 0.0,
        )
        if total_t is not None and not np.isfinite(bd.total):
            raise EnergyNonFiniteError("total", bd.total)
        return total_t, bd

    def value(self, params: ParamVector, batch: BatchSpec):
        with torch.no_grad():
            terms = self._graph(as_tensor(params.data), batch)
            _, bd = self._assemble(terms)
        return bd.total, bd

    def value_and_grad(self, params: ParamVector, batch: BatchSpec) -> GradientReport:
        params_t = as_tensor(params.data, requires_grad=True)
        terms = self._graph(params_t, batch)
        total_t, bd = self._assemble(terms)
        if total_t is None:
            return GradientReport(0.0, np.zeros(params.layout.size), bd)
        total_t.backward()
        grad = (to_numpy(params_t.grad) if params_t.grad is not None
                else np.zeros(params.layout.size))
        if not np.isfinite(grad).all():
            raise EnergyNonFiniteError("gradient", float("nan"))
        return GradientReport(bd.total, grad, bd)


def evaluate_with_gradient(model: EnergyModel, params: ParamVector,
                           batch: BatchSpec) -> GradientReport:
    return model.value_and_grad(params, batch)


def finite_difference(fn, x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of a scalar function, coordinate by coordinate."""
    if h <= 0:
        raise ValueError("h must be positive")
    g = np.zeros_like(x, dtype=np.float64)
    for k in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


def finite_difference_gradient(model: EnergyModel, params: ParamVector,
                               batch: BatchSpec, h: float) -> np.ndarray:
    layout = params.layout

    def value_of(flat: np.ndarray) -> float:
        return model.value(ParamVector(layout, flat), batch)[0]

    return finite_difference(value_of, params.data, h)
