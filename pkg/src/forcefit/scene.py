"""Scene trajectories and the versioned SCENE text format.

A scene bundles the object's rest mesh, the hand skinning model, per-frame
DoF rows for both, the object mass and frame timestep, plus (optionally) a
ground-truth contact labeling and an equilibrium certificate. Mesh and hand
model live in sibling files referenced by relative path.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .geometry import TriMesh, load_obj, save_obj
from .kinematics import (
    HandDoF,
    ObjectDoF,
    SkinnedHandModel,
    load_skin_model,
    save_skin_model,
)

_MAGIC = "SCENE 1"

# contact-truth codes
TRUTH_FREE = 0
TRUTH_CONTACT = 1
TRUTH_EXCLUDED = -1  # margin band between contact and free


class SceneError(ValueError):
    pass


@dataclass
class EquilibriumCertificate:
    """Per-contact-vertex forces whose mean balances gravity exactly."""

    vertex_ids: np.ndarray  # (K,) object vertex indices
    f_n: np.ndarray         # (K, 3) Newtons
    f_s: np.ndarray         # (K, 3) Newtons

    def net_force(self, mass: float, gravity: np.ndarray) -> np.ndarray:
        k = len(self.vertex_ids)
        return mass * np.asarray(gravity) + (self.f_n + self.f_s).sum(0) / k


@dataclass
class SceneTrajectory:
    scene_id: str
    object_mesh: TriMesh
    hand_model: SkinnedHandModel
    object_dof: ObjectDoF
    hand_dof: HandDoF
    mass: float
    frame_dt: float
    contact_truth: np.ndarray | None = None
    certificate: EquilibriumCertificate | None = None

    def __post_init__(self):
        if self.mass <= 0 or self.frame_dt <= 0:
            raise SceneError("mass and frame_dt must be positive")
        if self.object_dof.n_frames != self.hand_dof.n_frames:
            raise SceneError("object and hand DoF must cover the same frames")
        if self.contact_truth is not None:
            self.contact_truth = np.asarray(self.contact_truth, dtype=np.int8)
            if len(self.contact_truth) != self.object_mesh.n_vertices:
                raise SceneError("contact truth length must match object vertices")

    @property
    def n_frames(self) -> int:
        return self.object_dof.n_frames

    def with_dofs(self, object_dof: ObjectDoF, hand_dof: HandDoF) -> "SceneTrajectory":
        return replace(self, object_dof=object_dof, hand_dof=hand_dof)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_scene(
    scene: SceneTrajectory,
    path,
    object_mesh_path: str | None = None,
    hand_model_path: str | None = None,
) -> None:
    """Write the scene; mesh/model assets are written next to it unless an
    existing relative path is supplied for reuse across scenes."""
    path = os.fspath(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    base = os.path.dirname(path) or "."
    if object_mesh_path is None:
        object_mesh_path = f"{stem}_object.obj"
        save_obj(scene.object_mesh, os.path.join(base, object_mesh_path))
    if hand_model_path is None:
        hand_model_path = f"{stem}_hand.skin"
        save_skin_model(scene.hand_model, os.path.join(base, hand_model_path))
    od = scene.object_dof.to_matrix()
    hd = scene.hand_dof.to_matrix()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"id {scene.scene_id}\n")
        fh.write(f"mass {_fmt(scene.mass)}\n")
        fh.write(f"frame_dt {_fmt(scene.frame_dt)}\n")
        fh.write(f"object_mesh {object_mesh_path}\n")
        fh.write(f"hand_model {hand_model_path}\n")
        fh.write(f"frames {scene.n_frames}\n")
        for t in range(scene.n_frames):
            row = np.concatenate([od[t], hd[t]])
            fh.write(" ".join(_fmt(x) for x in row) + "\n")
        if scene.contact_truth is not None:
            codes = {TRUTH_FREE: "0", TRUTH_CONTACT: "1", TRUTH_EXCLUDED: "x"}
            fh.write(f"contact_truth {len(scene.contact_truth)}\n")
            fh.write(" ".join(codes[int(c)] for c in scene.contact_truth) + "\n")
        if scene.certificate is not None:
            cert = scene.certificate
            fh.write(f"certificate {len(cert.vertex_ids)}\n")
            for i, vid in enumerate(cert.vertex_ids):
                row = np.concatenate([cert.f_n[i], cert.f_s[i]])
                fh.write(f"{int(vid)} " + " ".join(_fmt(x) for x in row) + "\n")
        fh.write("end\n")


def load_scene(path) -> SceneTrajectory:
    path = os.fspath(path)
    base = os.path.dirname(path) or "."
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise SceneError(f"{path}: not a {_MAGIC} file")
    pos = 1
    header: dict[str, str] = {}
    for key in ("id", "mass", "frame_dt", "object_mesh", "hand_model", "frames"):
        parts = lines[pos].split(None, 1)
        if len(parts) != 2 or parts[0] != key:
            raise SceneError(f"{path}: expected '{key} ...' at line {pos + 1}")
        header[key] = parts[1].strip()
        pos += 1
    n_frames = int(header["frames"])
    rows = np.empty((n_frames, 27))
    for t in range(n_frames):
        vals = [float(x) for x in lines[pos + t].split()]
        if len(vals) != 27:
            raise SceneError(f"{path}: frame row {t} must have 27 values")
        rows[t] = vals
    pos += n_frames
    contact_truth = None
    certificate = None
    while pos < len(lines):
        parts = lines[pos].split()
        if not parts:
            pos += 1
            continue
        if parts[0] == "end":
            break
        if parts[0] == "contact_truth":
            n = int(parts[1])
            toks = lines[pos + 1].split()
            if len(toks) != n:
                raise SceneError(f"{path}: contact truth expects {n} tokens")
            decode = {"0": TRUTH_FREE, "1": TRUTH_CONTACT, "x": TRUTH_EXCLUDED}
            contact_truth = np.array([decode[t] for t in toks], dtype=np.int8)
            pos += 2
        elif parts[0] == "certificate":
            k = int(parts[1])
            vids = np.empty(k, dtype=np.int64)
            f_n = np.empty((k, 3))
            f_s = np.empty((k, 3))
            for i in range(k):
                vals = lines[pos + 1 + i].split()
                vids[i] = int(vals[0])
                f_n[i] = [float(x) for x in vals[1:4]]
                f_s[i] = [float(x) for x in vals[4:7]]
            certificate = EquilibriumCertificate(vids, f_n, f_s)
            pos += 1 + k
        else:
            raise SceneError(f"{path}: unknown section '{parts[0]}'")
    else:
        raise SceneError(f"{path}: missing 'end'")

    mesh = load_obj(os.path.join(base, header["object_mesh"]))
    model = load_skin_model(os.path.join(base, header["hand_model"]))
    return SceneTrajectory(
        scene_id=header["id"],
        object_mesh=mesh,
        hand_model=model,
        object_dof=ObjectDoF.from_matrix(rows[:, :6]),
        hand_dof=HandDoF.from_matrix(rows[:, 6:]),
        mass=float(header["mass"]),
        frame_dt=float(header["frame_dt"]),
        contact_truth=contact_truth,
        certificate=certificate,
    )
