"""Stage 2: per-sample input perturbation inside a norm ball via projected gradient steps.

Pessimistic ascends the loss (adversarial training / W-DRO surrogate),
optimistic descends it (W-DFO surrogate), neutral leaves inputs alone.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numgrad import per_sample_loss_and_grads

STANCES = ("pessimistic", "neutral", "optimistic")
NORMS = ("l2", "linf")
OPTIMISTIC_STOP = 1e-12


@dataclass(frozen=True)
class InputPerturbSpec:
    stance: str = "neutral"
    rho: float = 0.0
    norm: str = "l2"
    steps: int = 7
    step_size: Optional[float] = None

    def __post_init__(self):
        if self.stance not in STANCES:
            raise ValueError(f"unknown input stance {self.stance!r}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.rho < 0:
            raise ValueError("radius rho must be non-negative")
        if self.steps < 1:
            raise ValueError("at least one PGD step is required")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step size must be positive")

    @property
    def effective_step(self):
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.rho / self.steps

    @property
    def active(self):
        return self.stance != "neutral" and self.rho > 0


def project_ball(delta, rho, norm="l2"):
    """Project displacement rows onto the radius-``rho`` ball. Works on a vector or a matrix of rows."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    delta = np.asarray(delta, dtype=float)
    if norm == "linf":
        return np.clip(delta, -rho, rho)
    if norm != "l2":
        raise ValueError(f"unknown norm {norm!r}")
    d2 = np.atleast_2d(delta)
    norms = np.linalg.norm(d2, axis=1, keepdims=True)
    scale = np.where(norms > rho, rho / np.where(norms > 0, norms, 1.0), 1.0)
    out = d2 * scale
    return out[0] if delta.ndim == 1 else out


def _direction(g, norm):
    if norm == "linf":
        return np.sign(g)
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return np.where(n > 0, g / np.where(n > 0, n, 1.0), 0.0)


def pgd_perturb(model, X, targets, loss_spec, spec: InputPerturbSpec):
    """Perturbed copy of ``X`` with every row inside its own radius-``rho`` ball."""
    X = np.asarray(X, dtype=float)
    if not spec.active:
        return X.copy()
    step = spec.effective_step
    if step * spec.steps < spec.rho:
        warnings.warn("PGD schedule cannot reach the ball boundary (step_size * steps < rho)", stacklevel=2)
    sign = 1.0 if spec.stance == "pessimistic" else -1.0
    ones = np.ones(X.shape[0])
    x = X.copy()
    frozen = np.zeros(X.shape[0], dtype=bool)
    for _ in range(spec.steps):
        losses, _, gx = per_sample_loss_and_grads(model, x, targets, loss_spec, weights=ones)
        if not np.all(np.isfinite(gx)):
            raise FloatingPointError("non-finite input gradient during PGD")
        if sign < 0:
            frozen |= losses < OPTIMISTIC_STOP
        moved = X + project_ball(x - X + sign * step * _direction(gx, spec.norm), spec.rho, spec.norm)
        x = np.where(frozen[:, None], x, moved)
    return x
