"""The refinement loop: Adam over all DoF + field parameters.

Each epoch anneals the contact width, walks the frame blocks in a seeded
shuffled order, resamples vertices per batch, and takes one Adam step per
batch. Pose DoF and field weights use separate learning rates (Adam steps
are roughly lr-sized per coordinate, and meters/radians want smaller steps
than network weights).
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .contact import AnnealSchedule, annealed_z
from .diffcore import BatchSpec, EnergyModel, EnergyNonFiniteError, ParamVector
from .energy import EnergyBreakdown, EnergyWeights
from .forces import ForceField, PhysicsConstants, init_force_field
from .geometry import sample_vertices
from .scene import SceneTrajectory

logger = logging.getLogger("forcefit")


class RefineError(RuntimeError):
    pass


@dataclass
class RefineConfig:
    epochs: int = 300
    batch_frames: int = 40
    sample_vertices: int = 5000
    lr_pose: float = 1e-3
    lr_field: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    share_finger_pose: bool = True
    seed: int = 0
    hidden_width: int = 64
    p0: float = 0.5
    z_start: float = 0.030
    z_end: float = 0.002
    f_max: float = 5.0
    mu_s: float = 0.8
    mass: float | None = None      # None: use the scene's stored mass
    frame_dt: float | None = None  # None: use the scene's frame_dt
    sdf_mode: str = "surface"
    weights: EnergyWeights = field(default_factory=EnergyWeights)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_frames < 1 or self.sample_vertices < 1:
            raise RefineError("epochs, batch_frames and sample_vertices must be >= 1")

    def anneal(self) -> AnnealSchedule:
        return AnnealSchedule(self.z_start, self.z_end, self.epochs)

    def constants_for(self, scene: SceneTrajectory) -> PhysicsConstants:
        return PhysicsConstants(
            mass=self.mass if self.mass is not None else scene.mass,
            f_max=self.f_max,
            mu_s=self.mu_s,
            frame_dt=self.frame_dt if self.frame_dt is not None else scene.frame_dt,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RefineConfig":
        d = dict(d)
        d["weights"] = EnergyWeights(**d.get("weights", {}))
        return RefineConfig(**d)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(0, np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; lr may be scalar or per-coordinate."""
    if params.shape != grad.shape:
        raise RefineError("parameter/gradient shape mismatch")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(step, m, v)


# ---------------------------------------------------------------------------
# the loop


@dataclass
class RefineResult:
    scene: SceneTrajectory         # refined poses (truth annotations stripped)
    force_field: ForceField
    history: list[EnergyBreakdown]
    epoch_seconds: list[float]
    warnings: list[str]
    config: RefineConfig


def _frame_blocks(n_frames: int, batch_frames: int) -> list[np.ndarray]:
    starts = range(0, n_frames, batch_frames)
    return [np.arange(s, min(s + batch_frames, n_frames)) for s in starts]


def refine(scene: SceneTrajectory, config: RefineConfig) -> RefineResult:
    warnings: list[str] = []
    weights = config.weights
    if scene.n_frames < 3 and (weights.gamma_phy > 0 or weights.gamma_smooth > 0):
        warnings.append(
            f"scene has {scene.n_frames} frames; physics and smoothness terms disabled")
        logger.warning(warnings[-1])
        weights = replace(weights, gamma_phy=0.0, gamma_smooth=0.0)

    consts = config.constants_for(scene)
    model = EnergyModel(
        scene, weights, consts, p0=config.p0,
        share_finger_pose=config.share_finger_pose,
        hidden_width=config.hidden_width, sdf_mode=config.sdf_mode,
    )
    field_seed = np.random.SeedSequence(config.seed, spawn_key=(0,))
    field0 = init_force_field(config.hidden_width, field_seed)
    params = ParamVector.pack(scene, field0, config.share_finger_pose)

    lr = np.full(params.layout.size, config.lr_pose)
    lr[params.layout.field_slice] = config.lr_field
    state = AdamState.zeros(params.layout.size)

    rng_order = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    rng_sample = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2,)))
    blocks = _frame_blocks(scene.n_frames, config.batch_frames)
    schedule = config.anneal()

    history: list[EnergyBreakdown] = []
    epoch_seconds: list[float] = []
    hand_mesh = scene.hand_model.rest_mesh
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        z = annealed_z(epoch, schedule)
        order = rng_order.permutation(len(blocks))
        epoch_bd = EnergyBreakdown()
        for bi in order:
            obj_seed = int(rng_sample.integers(2**62))
            hand_seed = int(rng_sample.integers(2**62))
            batch = BatchSpec(
                frames=blocks[bi],
                object_vertex_ids=sample_vertices(
                    config.sample_vertices, scene.object_mesh, obj_seed),
                hand_vertex_ids=sample_vertices(
                    config.sample_vertices, hand_mesh, hand_seed),
                z=z,
            )
            try:
                rep = model.value_and_grad(params, batch)
            except EnergyNonFiniteError as err:
                raise RefineError(
                    f"epoch {epoch} batch {int(bi)}: {err}") from err
            new_data, state = adam_step(
                params.data, rep.gradient, state, lr,
                config.beta1, config.beta2, config.eps_adam)
            params = ParamVector(params.layout, new_data)
            epoch_bd = epoch_bd + rep.breakdown
        history.append(epoch_bd)
        epoch_seconds.append(time.perf_counter() - t0)

    refined = replace(
        model.scene_from_params(params), contact_truth=None, certificate=None)
    return RefineResult(refined, params.force_field(), history,
                        epoch_seconds, warnings, config)


# ---------------------------------------------------------------------------
# run manifest

MANIFEST_VERSION = 1


def manifest_dict(config: RefineConfig, scene_id: str, noise_seed: int | None,
                  history: list[EnergyBreakdown],
                  input_scene: str | None = None) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "scene_id": scene_id,
        "input_scene": input_scene,
        "noise_seed": noise_seed,
        "config": config.to_dict(),
        "epochs": [bd.as_dict() for bd in history],
    }


def write_manifest(path, config: RefineConfig, scene_id: str,
                   noise_seed: int | None, history: list[EnergyBreakdown],
                   input_scene: str | None = None) -> None:
    payload = manifest_dict(config, scene_id, noise_seed, history, input_scene)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("manifest_version") != MANIFEST_VERSION:
        raise RefineError(f"{path}: unsupported manifest version")
    return data


def write_timing(path, epoch_seconds: list[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch wall_seconds\n")
        for i, s in enumerate(epoch_seconds):
            fh.write(f"{i} {s:.6f}\n")
