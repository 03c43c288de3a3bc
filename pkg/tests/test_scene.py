import numpy as np
import pytest

from conftest import make_tiny_scene
from forcefit import scene as sc
from forcefit.scenegen import generate_static_grasp


def test_scene_roundtrip_bit_exact(tmp_path):
    scene = generate_static_grasp("sphere", "pinch", frames=5, seed=3)
    path = tmp_path / "a.scene"
    sc.save_scene(scene, path)
    back = sc.load_scene(path)
    assert back.scene_id == scene.scene_id
    assert back.mass == scene.mass and back.frame_dt == scene.frame_dt
    assert np.array_equal(back.object_dof.to_matrix(), scene.object_dof.to_matrix())
    assert np.array_equal(back.hand_dof.to_matrix(), scene.hand_dof.to_matrix())
    assert np.array_equal(back.contact_truth, scene.contact_truth)
    assert np.array_equal(back.certificate.vertex_ids, scene.certificate.vertex_ids)
    assert np.array_equal(back.certificate.f_n, scene.certificate.f_n)
    assert np.array_equal(back.certificate.f_s, scene.certificate.f_s)
    assert np.allclose(back.object_mesh.vertices, scene.object_mesh.vertices)
    assert np.allclose(back.hand_model.skin_weights, scene.hand_model.skin_weights)


def test_scene_without_truth_sections(tmp_path):
    scene = make_tiny_scene()
    path = tmp_path / "b.scene"
    sc.save_scene(scene, path)
    back = sc.load_scene(path)
    assert back.contact_truth is None and back.certificate is None
    assert np.array_equal(back.hand_dof.to_matrix(), scene.hand_dof.to_matrix())


def test_scene_asset_reuse(tmp_path):
    s1 = make_tiny_scene()
    sc.save_scene(s1, tmp_path / "one.scene")
    # second scene referencing the first scene's assets
    sc.save_scene(s1, tmp_path / "two.scene",
                  object_mesh_path="one_object.obj",
                  hand_model_path="one_hand.skin")
    assert not (tmp_path / "two_object.obj").exists()
    back = sc.load_scene(tmp_path / "two.scene")
    assert np.allclose(back.object_mesh.vertices, s1.object_mesh.vertices)


def test_scene_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.scene"
    p.write_text("SCENE 999\n")
    with pytest.raises(sc.SceneError):
        sc.load_scene(p)


def test_scene_rejects_missing_end(tmp_path):
    scene = make_tiny_scene()
    p = tmp_path / "c.scene"
    sc.save_scene(scene, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")  # drop 'end'
    with pytest.raises(sc.SceneError, match="end"):
        sc.load_scene(p)


def test_scene_validates_shapes():
    scene = make_tiny_scene()
    with pytest.raises(sc.SceneError):
        sc.SceneTrajectory(
            scene_id="x", object_mesh=scene.object_mesh,
            hand_model=scene.hand_model, object_dof=scene.object_dof,
            hand_dof=scene.hand_dof, mass=-1.0, frame_dt=scene.frame_dt)
    with pytest.raises(sc.SceneError):
        sc.SceneTrajectory(
            scene_id="x", object_mesh=scene.object_mesh,
            hand_model=scene.hand_model, object_dof=scene.object_dof,
            hand_dof=scene.hand_dof, mass=0.1, frame_dt=scene.frame_dt,
            contact_truth=np.zeros(3, dtype=np.int8))
