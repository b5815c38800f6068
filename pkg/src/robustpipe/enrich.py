"""Stage 1: turn a mini-batch from the empirical distribution into one from an enriched reference.

Vicinal (Gaussian) replicas, Mixup interpolation, and label smoothing.
"""

from dataclasses import dataclass

import numpy as np

MODES = ("none", "vrm", "mixup")


@dataclass(frozen=True)
class EnrichSpec:
    mode: str = "none"
    sigma: float = 0.0
    replicas: int = 1
    alpha_mix: float = 1.0
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown enrichment mode {self.mode!r}")
        if self.mode == "vrm" and not self.sigma > 0:
            raise ValueError("vrm enrichment needs sigma > 0")
        if self.mode == "mixup" and not self.alpha_mix > 0:
            raise ValueError("mixup needs a positive Beta shape")
        if self.replicas < 1:
            raise ValueError("replica count must be at least 1")
        if not 0.0 <= self.label_smoothing <= 1.0:
            raise ValueError("label smoothing must lie in [0, 1]")

    @property
    def active(self):
        return self.mode != "none" or self.label_smoothing > 0


def vrm_expand(X, targets, sigma, k, rng):
    """Replicate every row ``k`` times and add N(0, sigma^2 I) noise to the features.

    Output rows are grouped by replica: rows ``r*n .. (r+1)*n - 1`` hold replica ``r``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if k < 1:
        raise ValueError("k must be at least 1")
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets)
    Xr = np.tile(X, (k, 1))
    Xr = Xr + sigma * rng.standard_normal(Xr.shape)
    reps = (k,) + (1,) * (targets.ndim - 1)
    return Xr, np.tile(targets, reps)


def mixup(X, targets, alpha_mix, rng, *, pairwise=False, partners=None, lam=None):
    """Row i becomes lam_i * x_i + (1 - lam_i) * x_j with j drawn uniformly from the batch.

    ``targets`` must be real-valued (regression values or one-hot / soft class
    rows); they are mixed with the same ``lam``. ``partners`` and ``lam`` may be
    supplied to fix the draw.
    """
    if pairwise:
        raise ValueError("mixup is undefined for pairwise preference targets")
    if not alpha_mix > 0:
        raise ValueError("alpha_mix must be positive")
    X = np.asarray(X, dtype=float)
    T = np.asarray(targets)
    if T.ndim == 1 and np.issubdtype(T.dtype, np.integer):
        raise ValueError("convert class indices to one-hot rows before mixing")
    T = T.astype(float)
    n = X.shape[0]
    if lam is None:
        lam = rng.beta(alpha_mix, alpha_mix, size=n)
    if partners is None:
        partners = rng.integers(0, n, size=n)
    lam = np.asarray(lam, dtype=float)
    partners = np.asarray(partners)
    lx = lam.reshape((n,) + (1,) * (X.ndim - 1))
    lt = lam.reshape((n,) + (1,) * (T.ndim - 1))
    Xm = lx * X + (1.0 - lx) * X[partners]
    Tm = lt * T + (1.0 - lt) * T[partners]
    return Xm, Tm


def mixup_c_alpha(alpha_mix):
    """E[lam (1 - lam)] for lam ~ Beta(alpha, alpha)."""
    if not alpha_mix > 0:
        raise ValueError("alpha_mix must be positive")
    if np.isinf(alpha_mix):
        return 0.25
    return alpha_mix / (2.0 * (2.0 * alpha_mix + 1.0))


def smooth_labels(labels, alpha_ls, n_classes):
    """(1 - alpha) * onehot + alpha / K. Accepts class indices or one-hot/soft rows."""
    if not 0.0 <= alpha_ls <= 1.0:
        raise ValueError("alpha_ls must lie in [0, 1]")
    labels = np.asarray(labels)
    if labels.ndim == 1:
        onehot = np.eye(n_classes)[labels.astype(int)]
    else:
        onehot = labels.astype(float)
    if alpha_ls == 0.0:
        return onehot
    return (1.0 - alpha_ls) * onehot + alpha_ls / n_classes
