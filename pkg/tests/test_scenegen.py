import numpy as np
import pytest

from forcefit import scenegen
from forcefit.energy import e_physics
from forcefit.forces import PhysicsConstants, VertexForceState, finite_difference_dynamics, net_force
from forcefit.geometry import signed_distances_to_mesh
from forcefit.kinematics import pose_hand
from forcefit.scene import TRUTH_CONTACT, TRUTH_FREE
from forcefit.utils import as_tensor


GRAVITY = np.array([0.0, -9.8, 0.0])


@pytest.fixture(scope="module")
def sphere_pinch():
    return scenegen.generate_static_grasp("sphere", "pinch", frames=6, seed=7, mass=0.1)


def test_sphere_pinch_certificate_arithmetic(sphere_pinch):
    cert = sphere_pinch.certificate
    k = len(cert.vertex_ids)
    assert k >= 2
    # side pinch: gravity is countered mostly by friction along +y
    lift_friction = cert.f_s[:, 1].sum()
    lift_normal = cert.f_n[:, 1].sum()
    assert lift_friction + lift_normal == pytest.approx(k * 0.1 * 9.8, abs=1e-9)
    assert lift_friction >= 0.98  # at least one contact's worth of friction lift
    # the friction cone ties total normal magnitude to total friction
    fn_mag = np.linalg.norm(cert.f_n, axis=1)
    fs_mag = np.linalg.norm(cert.f_s, axis=1)
    assert fn_mag.sum() >= fs_mag.sum() / 0.8 - 1e-9
    assert fn_mag.sum() >= 0.98 / 0.8


def test_certificate_invariants(sphere_pinch):
    scene = sphere_pinch
    cert = scene.certificate
    consts = PhysicsConstants(mass=scene.mass, frame_dt=scene.frame_dt)
    state = VertexForceState(
        d=np.zeros(len(cert.vertex_ids)),
        p_c=np.ones(len(cert.vertex_ids)),
        f_n=cert.f_n, f_s=cert.f_s)
    state.check_invariants(consts)
    # anti-parallel to the posed object vertex normals
    from forcefit.kinematics import axis_angle_to_matrix
    from forcefit.utils import to_numpy
    r = to_numpy(axis_angle_to_matrix(scene.object_dof.axis_angle[0]))
    normals = scene.object_mesh.vertex_normals[cert.vertex_ids] @ r.T
    mags = np.linalg.norm(cert.f_n, axis=1, keepdims=True)
    assert np.abs(cert.f_n + mags * normals).max() < 1e-9


def test_certificate_net_force_tiny(sphere_pinch):
    net = sphere_pinch.certificate.net_force(sphere_pinch.mass, GRAVITY)
    assert np.linalg.norm(net) < 1e-9


def test_physics_energy_at_truth_with_certificate(sphere_pinch):
    scene = sphere_pinch
    cert = scene.certificate
    consts = PhysicsConstants(mass=scene.mass, frame_dt=scene.frame_dt)
    _, _, f_fd = finite_difference_dynamics(scene.object_dof.translation, consts)
    f_net = net_force(as_tensor(cert.f_n), as_tensor(cert.f_s), consts,
                      len(cert.vertex_ids))
    f_net_frames = f_net.unsqueeze(0).expand(f_fd.shape[0], 3)
    assert float(e_physics(f_fd, f_net_frames)) < 1e-10


def test_truth_pose_has_no_penetration_energy():
    for shape, style in (("box", "wrap"), ("cylinder", "pinch")):
        scene = scenegen.generate_static_grasp(shape, style, frames=4, seed=23)
        hand_mesh, _ = pose_hand(scene.hand_dof, scene.hand_model, frame=0)
        r = scene.object_dof.axis_angle[0]
        from forcefit.kinematics import axis_angle_to_matrix
        from forcefit.utils import to_numpy
        rot = to_numpy(axis_angle_to_matrix(r))
        overts = scene.object_mesh.vertices @ rot.T + scene.object_dof.translation[0]
        d_obj = signed_distances_to_mesh(overts, hand_mesh).distance
        d_hand = signed_distances_to_mesh(
            hand_mesh.vertices, scene.object_mesh.with_vertices(overts)).distance
        assert d_obj.min() >= -0.002
        assert d_hand.min() >= -0.002


def test_contact_truth_margins(sphere_pinch):
    scene = sphere_pinch
    hand_mesh, _ = pose_hand(scene.hand_dof, scene.hand_model, frame=0)
    from forcefit.kinematics import axis_angle_to_matrix
    from forcefit.utils import to_numpy
    rot = to_numpy(axis_angle_to_matrix(scene.object_dof.axis_angle[0]))
    overts = scene.object_mesh.vertices @ rot.T + scene.object_dof.translation[0]
    d = signed_distances_to_mesh(overts, hand_mesh).distance
    pos = scene.contact_truth == TRUTH_CONTACT
    neg = scene.contact_truth == TRUTH_FREE
    assert pos.sum() >= 2 and neg.sum() >= 1
    assert (d[pos] < 0.001).all()
    assert (d[neg] > 0.005).all()


def test_generation_determinism():
    a = scenegen.generate_static_grasp("cylinder", "wrap", frames=5, seed=42)
    b = scenegen.generate_static_grasp("cylinder", "wrap", frames=5, seed=42)
    assert np.array_equal(a.object_dof.to_matrix(), b.object_dof.to_matrix())
    assert np.array_equal(a.hand_dof.to_matrix(), b.hand_dof.to_matrix())
    assert np.array_equal(a.contact_truth, b.contact_truth)
    assert np.array_equal(a.certificate.f_n, b.certificate.f_n)
    assert np.array_equal(a.object_mesh.vertices, b.object_mesh.vertices)
    c = scenegen.generate_static_grasp("cylinder", "wrap", frames=5, seed=43)
    assert not np.array_equal(a.object_dof.to_matrix(), c.object_dof.to_matrix())


def test_frictionless_side_grip_has_no_certificate():
    normals = np.array([[0.0, 0, 1], [0.0, 0, -1], [1.0, 0, 0], [-1.0, 0, 0]])
    with pytest.raises(scenegen.CertificateError, match="no equilibrium certificate"):
        scenegen.solve_certificate(normals, 0.1, GRAVITY, 5.0, 0.0)


def test_frictionless_wrap_side_generation_fails():
    with pytest.raises(scenegen.CertificateError, match="no equilibrium certificate"):
        scenegen.generate_static_grasp("box", "wrap", frames=4, seed=7,
                                       mu_s=0.0, orientation="side")


def test_frictionless_wrap_up_is_fine():
    # palm under the object: normal forces alone can carry it
    scene = scenegen.generate_static_grasp("box", "wrap", frames=4, seed=7, mu_s=0.0)
    assert np.linalg.norm(scene.certificate.net_force(scene.mass, GRAVITY)) < 1e-9


def test_input_validation():
    with pytest.raises(scenegen.GraspError):
        scenegen.generate_static_grasp("sphere", "pinch", frames=2, seed=0)
    with pytest.raises(scenegen.GraspError):
        scenegen.generate_static_grasp("torus", "pinch", frames=5, seed=0)
    with pytest.raises(scenegen.GraspError):
        scenegen.generate_static_grasp("sphere", "tickle", frames=5, seed=0)


def test_parse_grasp_token():
    assert scenegen.parse_grasp_token("pinch") == ("pinch", None)
    assert scenegen.parse_grasp_token("wrap-side") == ("wrap", "side")
    assert scenegen.parse_grasp_token("pinch-up") == ("pinch", "up")
    with pytest.raises(scenegen.GraspError):
        scenegen.parse_grasp_token("karate-chop")


def test_constant_velocity_drift_is_acceleration_free():
    scene = scenegen.generate_static_grasp("sphere", "wrap", frames=8, seed=11)
    consts = PhysicsConstants(mass=scene.mass, frame_dt=scene.frame_dt)
    _, acc, _ = finite_difference_dynamics(scene.object_dof.translation, consts)
    assert float(abs(acc).max()) < 1e-12
    # hand moves rigidly with the object
    rel = scene.object_dof.translation - scene.hand_dof.translation
    assert np.allclose(rel, rel[0], atol=1e-15)
