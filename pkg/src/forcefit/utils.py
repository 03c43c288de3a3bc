"""Shared numeric helpers: dtype policy, safe norms, thread capping."""
from __future__ import annotations

import os

import numpy as np
import torch

DTYPE = torch.float64

_THREADS_ENV = "FORCEFIT_THREADS"
_configured = False


def configure_threads() -> int:
    """Cap torch's internal parallelism from FORCEFIT_THREADS (idempotent)."""
    global _configured
    n = os.environ.get(_THREADS_ENV)
    if n is not None and not _configured:
        torch.set_num_threads(max(1, int(n)))
        _configured = True
    return torch.get_num_threads()


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x), dtype=DTYPE)
    if requires_grad:
        t = t.clone().requires_grad_(True)
    return t


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


def safe_norm(v: torch.Tensor, dim: int = -1, eps: float = 1e-24) -> torch.Tensor:
    """Euclidean norm with a floor inside the sqrt so gradients stay finite at 0.

    The floor (1e-12 after sqrt) is far below every geometric tolerance used
    here, so values are unaffected for any physically meaningful length.
    """
    return torch.sqrt((v * v).sum(dim=dim).clamp_min(eps))


def normalize(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return v / safe_norm(v, dim=dim).unsqueeze(dim)
