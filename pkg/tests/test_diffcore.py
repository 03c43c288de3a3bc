import numpy as np
import pytest

from conftest import full_batch, make_tiny_scene
from forcefit import diffcore
from forcefit.energy import EnergyWeights
from forcefit.forces import PhysicsConstants


def make_model(scene, weights, hidden=6, **kw):
    consts = PhysicsConstants(mass=scene.mass, frame_dt=scene.frame_dt)
    return diffcore.EnergyModel(scene, weights, consts, hidden_width=hidden, **kw)


def fd_mismatch(analytic, fd, energy_scale, h, rel_tol=1e-4):
    """True where analytic and FD disagree beyond both the relative
    tolerance and the FD roundoff resolution (eps * |E| / 2h)."""
    resolution = 5 * 2.3e-16 * max(energy_scale, 1.0) / (2 * h)
    allowed = np.maximum(rel_tol * np.maximum(np.abs(analytic), np.abs(fd)),
                         resolution)
    return np.abs(analytic - fd) > allowed


def test_all_weights_zero(tiny_scene):
    model = make_model(tiny_scene, EnergyWeights(0, 0, 0, 0, 0))
    params = model.initial_params(field_seed=0)
    rep = model.value_and_grad(params, full_batch(tiny_scene))
    assert rep.value == 0.0
    assert not rep.gradient.any()


def test_deviation_only_at_start_is_exact_minimum(tiny_scene):
    model = make_model(tiny_scene, EnergyWeights(0, 0, 0, 2e6, 0))
    params = model.initial_params(field_seed=0)
    rep = model.value_and_grad(params, full_batch(tiny_scene))
    assert rep.value == 0.0
    assert np.linalg.norm(rep.gradient) < 1e-10


def test_full_energy_gradient_matches_finite_differences(tiny_scene):
    model = make_model(tiny_scene, EnergyWeights(), hidden=6)
    params = model.initial_params(field_seed=3)
    batch = full_batch(tiny_scene, z=0.03, frames=[2, 3])
    rep = model.value_and_grad(params, batch)
    h = 1e-6
    fd = diffcore.finite_difference_gradient(model, params, batch, h)
    bad = fd_mismatch(rep.gradient, fd, abs(rep.value), h)
    assert not bad.any(), f"{bad.sum()} coordinates disagree, first {bad.argmax()}"


def test_gradient_reaches_pose_through_contact(tiny_scene):
    # physics-only energy must pull hand DoF (the fingers-toward-object path)
    model = make_model(tiny_scene, EnergyWeights(5e2, 0, 0, 0, 0))
    params = model.initial_params(field_seed=1)
    rep = model.value_and_grad(params, full_batch(tiny_scene, z=0.03))
    lay = params.layout
    hand_grad = rep.gradient[lay.hand_rigid_slice]
    coeff_grad = rep.gradient[lay.coeff_slice]
    assert np.abs(hand_grad).max() > 0
    assert np.abs(coeff_grad).max() > 0
    assert np.abs(rep.gradient[lay.field_slice]).max() > 0


def test_no_gradient_leak_into_field(tiny_scene):
    # forces excluded from all active terms -> field coordinates get zero grad
    model = make_model(tiny_scene, EnergyWeights(0, 0, 50e6, 2e6, 1e5))
    params = model.initial_params(field_seed=2)
    rep = model.value_and_grad(params, full_batch(tiny_scene))
    assert not rep.gradient[params.layout.field_slice].any()
    assert np.abs(rep.gradient[params.layout.object_slice]).max() > 0


def test_determinism_bit_identical(tiny_scene):
    model = make_model(tiny_scene, EnergyWeights(), hidden=8)
    params = model.initial_params(field_seed=5)
    batch = full_batch(tiny_scene)
    r1 = model.value_and_grad(params, batch)
    r2 = model.value_and_grad(params, batch)
    assert r1.value == r2.value
    assert np.array_equal(r1.gradient, r2.gradient)


def test_non_finite_energy_names_term(tiny_scene):
    model = make_model(tiny_scene, EnergyWeights())
    params = model.initial_params(field_seed=0)
    # overflow the field so its outputs go inf - inf = nan
    fs = params.layout.field_slice
    n = fs.stop - fs.start
    params.data[fs] = 1e160 * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    with pytest.raises(diffcore.EnergyNonFiniteError) as ei:
        model.value_and_grad(params, full_batch(tiny_scene))
    assert ei.value.term in ("force_reg", "physics", "gradient")


def test_finite_difference_on_quadratic():
    fn = lambda x: float((x**2).sum())
    x = np.array([1.0, -2.0, 3.0])
    g = diffcore.finite_difference(fn, x, 1e-6)
    assert np.allclose(g, 2 * x, atol=1e-8)


def test_finite_difference_second_order_convergence():
    fn = lambda x: float((x**4).sum())
    x = np.array([1.1, -0.7, 0.4])
    exact = 4 * x**3
    e1 = np.abs(diffcore.finite_difference(fn, x, 1e-3) - exact).max()
    e2 = np.abs(diffcore.finite_difference(fn, x, 5e-4) - exact).max()
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def test_param_vector_roundtrip(tiny_scene):
    model = make_model(tiny_scene, EnergyWeights(), hidden=6)
    field = model.make_field(seed=7)
    params = model.initial_params(field)
    assert np.allclose(params.object_dof().to_matrix(),
                       tiny_scene.object_dof.to_matrix())
    hd = params.hand_dof()
    assert np.allclose(hd.to_matrix(), tiny_scene.hand_dof.to_matrix())
    back = params.force_field()
    for w1, w2 in zip(back.weights, field.weights):
        assert np.array_equal(w1, w2)


def test_shared_vs_per_frame_coeff_layout(tiny_scene):
    m_shared = make_model(tiny_scene, EnergyWeights(), hidden=6)
    m_free = make_model(tiny_scene, EnergyWeights(), hidden=6,
                        share_finger_pose=False)
    p_shared = m_shared.initial_params(field_seed=0)
    p_free = m_free.initial_params(field_seed=0)
    t = tiny_scene.n_frames
    assert p_free.layout.size - p_shared.layout.size == (t - 1) * 15
    b = full_batch(tiny_scene)
    v1, _ = m_shared.value(p_shared, b)
    v2, _ = m_free.value(p_free, b)
    assert v1 == pytest.approx(v2, rel=1e-12)  # same pose, same energy


def test_vertex_only_sdf_mode_runs(tiny_scene):
    # the vertex-only comparison mode is discontinuous where the nearest
    # vertex switches with a pseudo-normal sign flip, so only most
    # coordinates admit a clean finite-difference comparison
    model = make_model(tiny_scene, EnergyWeights(), hidden=6, sdf_mode="vertex")
    params = model.initial_params(field_seed=0)
    batch = full_batch(tiny_scene, frames=[2, 3])
    rep = model.value_and_grad(params, batch)
    assert np.isfinite(rep.value)
    fd = diffcore.finite_difference_gradient(model, params, batch, 1e-6)
    bad = fd_mismatch(rep.gradient, fd, abs(rep.value), 1e-6)
    assert bad.mean() < 0.10


def test_needs_three_frames_for_physics():
    scene = make_tiny_scene(frames=2)
    with pytest.raises(ValueError, match="3 frames"):
        make_model(scene, EnergyWeights())
    # fine with those terms disabled
    make_model(scene, EnergyWeights(0, 3e-1, 50e6, 2e6, 0))
