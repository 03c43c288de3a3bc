"""Learned contact forces: the force-field network and force decompositions.

A small ELU MLP maps (vertex position, normalized time) to a normal-force
activation scalar and a 3-vector friction parameter. The decompositions turn
those free outputs into physically admissible forces: normal forces point
into the object with magnitude bounded by F_max times the contact
probability; friction lives in the tangent plane with magnitude bounded by
mu_s times the normal magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .utils import DTYPE, as_tensor, safe_norm

N_FIELD_LAYERS = 6  # weight layers; 5 hidden activations, all ELU
FIELD_IN = 4        # (x, y, z, t)
FIELD_OUT = 4       # (normal activation, 3-vector friction parameter)


class ForceError(ValueError):
    pass


@dataclass
class PhysicsConstants:
    mass: float = 0.1
    gravity: tuple[float, float, float] = (0.0, -9.8, 0.0)
    f_max: float = 5.0
    mu_s: float = 0.8
    frame_dt: float = 1.0 / 30.0

    def __post_init__(self):
        if self.mass <= 0 or self.f_max <= 0 or self.mu_s < 0 or self.frame_dt <= 0:
            raise ForceError("invalid physics constants")

    @property
    def gravity_vec(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=np.float64)


# ---------------------------------------------------------------------------
# force-field network


def field_layer_shapes(hidden_width: int) -> list[tuple[int, int]]:
    sizes = [FIELD_IN] + [hidden_width] * (N_FIELD_LAYERS - 1) + [FIELD_OUT]
    return [(sizes[i + 1], sizes[i]) for i in range(N_FIELD_LAYERS)]


@dataclass
class ForceField:
    """Weights/biases of the 6-layer field; parameter count is independent of
    mesh density and video length."""

    hidden_width: int
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_flat(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    @staticmethod
    def from_flat(flat: np.ndarray, hidden_width: int) -> "ForceField":
        weights, biases = [], []
        pos = 0
        for out_d, in_d in field_layer_shapes(hidden_width):
            weights.append(np.asarray(flat[pos:pos + out_d * in_d], dtype=np.float64)
                           .reshape(out_d, in_d).copy())
            pos += out_d * in_d
            biases.append(np.asarray(flat[pos:pos + out_d], dtype=np.float64).copy())
            pos += out_d
        if pos != len(flat):
            raise ForceError("flat parameter vector has wrong length")
        return ForceField(hidden_width, weights, biases)


def init_force_field(hidden_width: int = 64, seed: int = 0) -> ForceField:
    """Glorot-uniform weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out_d, in_d in field_layer_shapes(hidden_width):
        limit = np.sqrt(6.0 / (in_d + out_d))
        weights.append(rng.uniform(-limit, limit, size=(out_d, in_d)))
        biases.append(np.zeros(out_d))
    return ForceField(hidden_width, weights, biases)


def field_layers_from_flat(flat_t: torch.Tensor, hidden_width: int):
    """Slice a flat (possibly autograd) tensor into per-layer (W, b) views."""
    layers = []
    pos = 0
    for out_d, in_d in field_layer_shapes(hidden_width):
        w = flat_t[pos:pos + out_d * in_d].reshape(out_d, in_d)
        pos += out_d * in_d
        b = flat_t[pos:pos + out_d]
        pos += out_d
        layers.append((w, b))
    return layers


def force_field_forward(positions: torch.Tensor, t_norm: torch.Tensor, layers):
    """MLP forward pass; positions (..., 3), t_norm (...) in [0, 1].

    Returns (f_na (...,), f_sa (..., 3)).
    """
    x = torch.cat([positions, t_norm.unsqueeze(-1)], dim=-1)
    for i, (w, b) in enumerate(layers):
        x = x @ w.transpose(0, 1) + b
        if i < len(layers) - 1:
            x = F.elu(x)
    return x[..., 0], x[..., 1:4]


def evaluate_force_field(position, t, field_: ForceField):
    """Numpy-friendly single evaluation of the field."""
    layers = [(as_tensor(w), as_tensor(b)) for w, b in zip(field_.weights, field_.biases)]
    f_na, f_sa = force_field_forward(as_tensor(position), as_tensor(t), layers)
    return f_na.detach().numpy(), f_sa.detach().numpy()


# ---------------------------------------------------------------------------
# force decompositions


def normal_force(p_c, f_na, normals, f_max: float) -> torch.Tensor:
    """f_max * p_c * sigmoid(f_na) along -normal: bounded, into the surface."""
    p_c = torch.as_tensor(p_c, dtype=DTYPE)
    f_na = torch.as_tensor(f_na, dtype=DTYPE)
    normals = torch.as_tensor(normals, dtype=DTYPE)
    mag = f_max * p_c * torch.sigmoid(f_na)
    return -mag.unsqueeze(-1) * normals


def friction_force(f_n, f_sa, mu_s: float, eps: float = 1e-12) -> torch.Tensor:
    """Tangent-plane friction with magnitude mu_s |f_n| tanh(|f_sp|).

    f_sp is the free parameter projected onto the plane orthogonal to f_n; a
    3-vector parameterization keeps the tangent field smooth everywhere on
    closed surfaces. Below eps the force is exactly zero (removable
    singularity).
    """
    f_n = torch.as_tensor(f_n, dtype=DTYPE)
    f_sa = torch.as_tensor(f_sa, dtype=DTYPE)
    fn_norm = safe_norm(f_n)
    n_hat = f_n / fn_norm.unsqueeze(-1).clamp_min(eps)
    f_sp = f_sa - (f_sa * n_hat).sum(-1, keepdim=True) * n_hat
    sp_norm = safe_norm(f_sp)
    scale = mu_s * fn_norm * torch.tanh(sp_norm) / sp_norm.clamp_min(eps)
    out = scale.unsqueeze(-1) * f_sp
    live = ((sp_norm > eps) & (fn_norm > eps)).unsqueeze(-1)
    return torch.where(live, out, torch.zeros_like(out))


def net_force(f_n, f_s, consts: PhysicsConstants, n_v: int) -> torch.Tensor:
    """m g + mean per-vertex force; mean (not sum) keeps it sample-size free.

    f_n, f_s: (..., N, 3) stacked over the N vertices being averaged; the
    divisor n_v is explicit so callers may average over a larger nominal
    vertex set than they materialized.
    """
    if n_v < 1:
        raise ForceError("n_v must be >= 1")
    f_n = torch.as_tensor(f_n, dtype=DTYPE)
    f_s = torch.as_tensor(f_s, dtype=DTYPE)
    g = as_tensor(consts.gravity_vec)
    return consts.mass * g + (f_n + f_s).sum(-2) / float(n_v)


def finite_difference_dynamics(translations, consts: PhysicsConstants):
    """Frame-difference velocity/acceleration and the implied net force.

    Velocity and acceleration are raw frame differences (defined from frames
    1 and 2 on); the net force rescales acceleration by 1/frame_dt^2 so it is
    in Newtons. frame_dt = 1 reproduces unscaled frame units.
    """
    x = torch.as_tensor(translations, dtype=DTYPE)
    if x.shape[0] < 3:
        raise ForceError("need at least 3 frames for acceleration")
    vel = x[1:] - x[:-1]
    acc = vel[1:] - vel[:-1]
    f_fd = consts.mass * acc / consts.frame_dt**2
    return vel, acc, f_fd


# ---------------------------------------------------------------------------
# bundled per-vertex state


@dataclass
class VertexForceState:
    """Per-vertex contact state; numpy arrays shaped (N,) / (N, 3)."""

    d: np.ndarray
    p_c: np.ndarray
    f_n: np.ndarray
    f_s: np.ndarray

    def check_invariants(self, consts: PhysicsConstants, tol: float = 1e-9) -> None:
        fn_mag = np.linalg.norm(self.f_n, axis=-1)
        fs_mag = np.linalg.norm(self.f_s, axis=-1)
        if (fn_mag > consts.f_max).any():
            raise ForceError("normal force exceeds F_max")
        # direction: f_n must be anti-parallel to the stored normal direction,
        # which is equivalent to f_s . f_n == 0 plus the construction; checked
        # against explicit normals by callers that have them.
        dots = np.abs((self.f_s * self.f_n).sum(-1))
        if (dots > tol * np.maximum(fs_mag * fn_mag, 1e-300)).any():
            raise ForceError("friction not orthogonal to normal force")
        if (fs_mag > consts.mu_s * fn_mag * (1 + 1e-12) + 1e-15).any():
            raise ForceError("friction exceeds the static cone")
