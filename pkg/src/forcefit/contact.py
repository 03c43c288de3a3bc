"""Soft contact probability as a function of signed distance, with annealing.

p(d) = sigmoid(-(6/z) d - ln(1/p0 - 1)): a sigmoid of width z whose value at
zero distance is exactly p0. The width is annealed geometrically across
epochs, sharpening the contact model as optimization proceeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .utils import DTYPE


class ContactError(ValueError):
    pass


@dataclass
class ContactParams:
    z: float          # curve width, meters
    p0: float = 0.5   # contact probability at zero distance

    def __post_init__(self):
        if not self.z > 0:
            raise ContactError("z must be positive")
        if not 0.0 < self.p0 < 1.0:
            raise ContactError("p0 must lie in (0, 1)")

    @property
    def bias(self) -> float:
        return math.log(1.0 / self.p0 - 1.0)


def contact_probability(d, params: ContactParams) -> torch.Tensor:
    """Probability of contact at signed distance d (meters); decreasing in d."""
    d = torch.as_tensor(d, dtype=DTYPE)
    return torch.sigmoid(-(6.0 / params.z) * d - params.bias)


def contact_probability_grad(d, params: ContactParams) -> torch.Tensor:
    """Closed-form dp/dd = -(6/z) p (1-p)."""
    p = contact_probability(d, params)
    return -(6.0 / params.z) * p * (1.0 - p)


@dataclass
class AnnealSchedule:
    z_start: float
    z_end: float
    epochs: int

    def __post_init__(self):
        if not (self.z_start >= self.z_end > 0):
            raise ContactError("need z_start >= z_end > 0")
        if self.epochs < 1:
            raise ContactError("epochs must be >= 1")


def annealed_z(epoch: int, schedule: AnnealSchedule) -> float:
    """Geometric interpolation from z_start (epoch 0) to z_end (last epoch)."""
    if not 0 <= epoch < schedule.epochs:
        raise ContactError(f"epoch {epoch} outside [0, {schedule.epochs})")
    if schedule.epochs == 1:
        return schedule.z_end
    frac = epoch / (schedule.epochs - 1)
    return schedule.z_start * (schedule.z_end / schedule.z_start) ** frac
