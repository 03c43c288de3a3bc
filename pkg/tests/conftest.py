import numpy as np
import pytest

from forcefit.diffcore import BatchSpec
from forcefit.geometry import make_icosphere, sample_vertices
from forcefit.kinematics import HandDoF, ObjectDoF, synthetic_hand
from forcefit.scene import SceneTrajectory

_HAND = None


def shared_hand():
    global _HAND
    if _HAND is None:
        _HAND = synthetic_hand()
    return _HAND


def make_tiny_scene(frames: int = 4, radius: float = 0.024, mass: float = 0.05,
                    kick: float = 0.0004) -> SceneTrajectory:
    """Small near-grasp scene: curled hand with a sphere floating in the gap.

    The trajectory drifts at constant velocity with one acceleration kick so
    the physics and smoothness terms are non-trivially active. No vertex is
    near contact or the penetration kink, which keeps finite-difference
    checks clean.
    """
    hand = shared_hand()
    coeffs = np.zeros(15)
    for d in range(5):
        coeffs[3 * d] = 1.1
        coeffs[3 * d + 1] = 0.4
        coeffs[3 * d + 2] = 0.03
    t = np.arange(frames)
    drift = t[:, None] * np.array([0.0005, 0.0002, -0.0003])
    obj_tr = np.array([0.0, -0.02, 0.042]) + drift
    if frames > 2:
        obj_tr[2] += [0.0, kick, 0.0]
    hand_tr = drift.copy()
    aa = np.tile([0.0, 0.0, 0.0], (frames, 1))
    return SceneTrajectory(
        scene_id="tiny",
        object_mesh=make_icosphere(radius, 1),
        hand_model=hand,
        object_dof=ObjectDoF(aa.copy(), obj_tr),
        hand_dof=HandDoF(aa.copy(), hand_tr, np.tile(coeffs, (frames, 1))),
        mass=mass,
        frame_dt=1.0 / 30.0,
    )


def full_batch(scene: SceneTrajectory, z: float = 0.03, n_obj: int = 10_000,
               n_hand: int = 10_000, frames=None, seed: int = 0) -> BatchSpec:
    fr = np.arange(scene.n_frames) if frames is None else np.asarray(frames)
    return BatchSpec(
        frames=fr,
        object_vertex_ids=sample_vertices(n_obj, scene.object_mesh, seed),
        hand_vertex_ids=sample_vertices(n_hand, scene.hand_model.rest_mesh, seed + 1),
        z=z,
    )


@pytest.fixture
def tiny_scene():
    return make_tiny_scene()
