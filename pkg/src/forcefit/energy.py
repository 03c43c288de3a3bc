"""The five energy terms and their weighted total.

All terms are plain sums over the frames/vertices handed in (no batch-size
normalization), so the weights implicitly depend on batch and sample sizes;
runs record both in their manifest. Terms accept torch tensors and stay
differentiable; EnergyBreakdown snapshots the unweighted values as floats
for reporting.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .utils import DTYPE


class EnergyError(ValueError):
    pass


@dataclass
class EnergyWeights:
    gamma_phy: float = 5e2
    gamma_fr: float = 3e-1
    gamma_pen: float = 50e6
    gamma_dev: float = 2e6
    gamma_smooth: float = 1e5
    d_pen: float = 0.002  # allowed soft-tissue penetration depth, meters

    def __post_init__(self):
        vals = (self.gamma_phy, self.gamma_fr, self.gamma_pen,
                self.gamma_dev, self.gamma_smooth, self.d_pen)
        if any(v < 0 for v in vals):
            raise EnergyError("weights and d_pen must be nonnegative")


@dataclass
class EnergyBreakdown:
    """Unweighted term values plus the weighted total."""

    physics: float = 0.0
    force_reg: float = 0.0
    penetration: float = 0.0
    deviation: float = 0.0
    smooth: float = 0.0
    total: float = 0.0

    def __add__(self, other: "EnergyBreakdown") -> "EnergyBreakdown":
        return EnergyBreakdown(
            self.physics + other.physics,
            self.force_reg + other.force_reg,
            self.penetration + other.penetration,
            self.deviation + other.deviation,
            self.smooth + other.smooth,
            self.total + other.total,
        )

    def as_dict(self) -> dict:
        return {
            "physics": self.physics,
            "force_reg": self.force_reg,
            "penetration": self.penetration,
            "deviation": self.deviation,
            "smooth": self.smooth,
            "total": self.total,
        }


def e_physics(f_net_fd: torch.Tensor, f_net: torch.Tensor) -> torch.Tensor:
    """Sum over frames of ||observed-motion force - learned net force||^2."""
    if f_net_fd.shape != f_net.shape:
        raise EnergyError("frame sets must match")
    return ((f_net_fd - f_net) ** 2).sum()


def e_force_reg(f_n: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
    """Prefers many small forces over a few large ones."""
    return (f_n**2).sum() + (f_s**2).sum()


def e_penetration(d_object: torch.Tensor, d_hand: torch.Tensor, d_pen: float) -> torch.Tensor:
    """Hinge on signed distance: free until -d_pen, then linear in depth."""
    if d_pen < 0:
        raise EnergyError("d_pen must be nonnegative")
    pen = torch.relu(-(d_object + d_pen)).sum()
    if d_hand.numel():
        pen = pen + torch.relu(-(d_hand + d_pen)).sum()
    return pen


def e_deviation(current: torch.Tensor, initial: torch.Tensor) -> torch.Tensor:
    """Squared drift of vertex positions from where the run started."""
    if current.shape != initial.shape:
        raise EnergyError("vertex sets must match")
    return ((current - initial) ** 2).sum()


def e_smooth(*trajectories: torch.Tensor) -> torch.Tensor:
    """Sum of squared second frame differences over each (T, ..., 3) track."""
    total = torch.zeros((), dtype=DTYPE)
    for x in trajectories:
        if x.shape[0] < 3:
            continue  # no interior frames; contributes nothing
        acc = x[2:] - 2.0 * x[1:-1] + x[:-2]
        total = total + (acc**2).sum()
    return total


def total_energy(parts, weights: EnergyWeights) -> EnergyBreakdown:
    """Weighted total of the five (physics, force_reg, penetration,
    deviation, smooth) parts; preserves the unweighted values."""
    phy, fr, pen, dev, smo = (float(p) for p in parts)
    total = (weights.gamma_phy * phy + weights.gamma_fr * fr
             + weights.gamma_pen * pen + weights.gamma_dev * dev
             + weights.gamma_smooth * smo)
    return EnergyBreakdown(phy, fr, pen, dev, smo, total)
