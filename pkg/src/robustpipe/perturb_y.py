"""Label-space losses over the credal set Q = {p : mass off the observed class <= alpha}.

Three stances share one interface:

* neutral     -- cross-entropy against the label-smoothed target
* optimistic  -- label relaxation, min over Q of KL(p || p_hat)
* pessimistic -- max over the non-trivial vertices of Q of E_p[-log p_hat]

The ``*_from_logits`` variants return per-sample losses together with the
gradient with respect to the logits; the training code uses those.
"""

import numpy as np
from scipy.special import logsumexp

from ._math import LOG_FLOOR, PROB_FLOOR, log_softmax

STANCES = ("pessimistic", "neutral", "optimistic")
SIMPLEX_TOL = 1e-9


def _as_batch(p, y):
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    y2 = np.atleast_1d(np.asarray(y)).astype(int)
    if y2.shape[0] != p2.shape[0]:
        raise ValueError("one observed class per probability row is required")
    return p2, y2, single


def _check_simplex(p):
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    if np.any(p < -SIMPLEX_TOL) or np.any(np.abs(p.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("probability vector is off the simplex")


def _check_alpha(alpha):
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"credal mass must lie in [0, 1), got {alpha}")


def _finish(values, single):
    return float(values[0]) if single else values


def _log_clamped(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def smoothed_target(y, alpha, n_classes):
    y = np.atleast_1d(np.asarray(y)).astype(int)
    t = np.full((y.shape[0], n_classes), alpha / n_classes)
    t[np.arange(y.shape[0]), y] += 1.0 - alpha
    return t


def relaxation_projection(p, y, alpha):
    """KL projection of ``p`` onto the credal set.

    Inside the set the projection is ``p`` itself. Outside, the observed class
    receives exactly ``1 - alpha`` and the remaining ``alpha`` is spread over the
    other classes in proportion to ``p``.
    """
    p2, y2, single = _as_batch(p, y)
    _check_simplex(p2)
    _check_alpha(alpha)
    rows = np.arange(p2.shape[0])
    out = p2.copy()
    py = p2[rows, y2]
    outside = py < 1.0 - alpha
    rest = 1.0 - py
    for i in np.flatnonzero(outside):
        out[i] = alpha * p2[i] / rest[i]
        out[i, y2[i]] = 1.0 - alpha
    return out[0] if single else out


def pessimistic_vertex(p, y, alpha):
    """Vertex of Q putting ``alpha`` on the least probable wrong class (smallest index on ties)."""
    p2, y2, single = _as_batch(p, y)
    masked = p2.copy()
    masked[np.arange(p2.shape[0]), y2] = np.inf
    worst = np.argmin(masked, axis=1)
    t = np.zeros_like(p2)
    rows = np.arange(p2.shape[0])
    t[rows, y2] = 1.0 - alpha
    t[rows, worst] += alpha
    return t[0] if single else t


def loss_neutral_ls(p, y, alpha):
    p2, y2, single = _as_batch(p, y)
    _check_simplex(p2)
    _check_alpha(alpha)
    t = smoothed_target(y2, alpha, p2.shape[1])
    return _finish(-(t * _log_clamped(p2)).sum(axis=1), single)


def loss_optimistic_lr(p, y, alpha):
    p2, y2, single = _as_batch(p, y)
    _check_simplex(p2)
    _check_alpha(alpha)
    py = p2[np.arange(p2.shape[0]), y2]
    out = np.zeros(p2.shape[0])
    outside = py < 1.0 - alpha
    if np.any(outside):
        q = py[outside]
        val = -(1.0 - alpha) * np.log(np.maximum(q, PROB_FLOOR)) + (1.0 - alpha) * np.log(1.0 - alpha)
        if alpha > 0.0:
            val += alpha * (np.log(alpha) - np.log(np.maximum(1.0 - q, PROB_FLOOR)))
        out[outside] = val
    return _finish(out, single)


def loss_pessimistic(p, y, alpha):
    p2, y2, single = _as_batch(p, y)
    if p2.shape[1] < 2:
        raise ValueError("pessimistic label loss needs at least two classes")
    _check_simplex(p2)
    _check_alpha(alpha)
    t = pessimistic_vertex(p2, y2, alpha)
    return _finish(-(t * _log_clamped(p2)).sum(axis=1), single)


LOSSES = {
    "neutral": loss_neutral_ls,
    "optimistic": loss_optimistic_lr,
    "pessimistic": loss_pessimistic,
}


def label_loss(p, y, stance, alpha):
    try:
        fn = LOSSES[stance]
    except KeyError:
        raise ValueError(f"unknown label stance {stance!r}") from None
    return fn(p, y, alpha)


# -- logit-space versions used by the training loop -------------------------


def soft_cross_entropy_from_logits(z, targets):
    """Per-row -sum_k t_k * max(log p_k, log 1e-12) and its gradient in ``z``."""
    logp = log_softmax(z)
    live = logp > LOG_FLOOR
    logp_c = np.where(live, logp, LOG_FLOOR)
    loss = -(targets * logp_c).sum(axis=1)
    p = np.exp(logp)
    tm = targets * live
    grad = p * tm.sum(axis=1, keepdims=True) - tm
    return loss, grad


def credal_loss_from_logits(z, y, stance, alpha):
    z = np.asarray(z, dtype=float)
    y = np.asarray(y).astype(int)
    n, k = z.shape
    _check_alpha(alpha)
    if stance == "neutral":
        return soft_cross_entropy_from_logits(z, smoothed_target(y, alpha, k))
    if stance == "pessimistic":
        if k < 2:
            raise ValueError("pessimistic label loss needs at least two classes")
        logp = log_softmax(z)
        return soft_cross_entropy_from_logits(z, pessimistic_vertex(np.exp(logp), y, alpha))
    if stance != "optimistic":
        raise ValueError(f"unknown label stance {stance!r}")

    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(n)
    logpy = logp[rows, y]
    py = p[rows, y]
    # log of the off-class mass, computed without cancellation
    zo = z.copy()
    zo[rows, y] = -np.inf
    log_rest = logsumexp(zo, axis=1) - logsumexp(z, axis=1)
    loss = np.zeros(n)
    grad = np.zeros_like(z)
    outside = py < 1.0 - alpha
    if np.any(outside):
        live_y = logpy > LOG_FLOOR
        val = -(1.0 - alpha) * np.maximum(logpy, LOG_FLOOR) + (1.0 - alpha) * np.log(1.0 - alpha)
        coef = -(1.0 - alpha) * live_y
        if alpha > 0.0:
            val = val + alpha * (np.log(alpha) - np.maximum(log_rest, LOG_FLOOR))
            coef = coef + alpha * np.exp(logpy - log_rest)
        loss[outside] = val[outside]
        onehot = np.zeros_like(z)
        onehot[rows, y] = 1.0
        grad[outside] = coef[outside, None] * (onehot - p)[outside]
    return loss, grad
