"""Forward/backward passes for linear models and small MLPs, plus Adam.

The model family is fixed (dense layers, identity or relu activations, one of
three heads), so every gradient here is a hand-written backward pass rather
than a general autodiff graph.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ._math import sigmoid, softmax, softplus
from .perturb_y import STANCES, credal_loss_from_logits, soft_cross_entropy_from_logits

HEADS = ("regression", "classes", "pairwise")
ACTIVATIONS = ("identity", "relu")
LOSS_KINDS = ("squared", "cross_entropy", "credal", "bradley_terry")


@dataclass
class Model:
    """Dense network ``layers[i] = (W, b)`` with ``W`` of shape (out, in)."""

    layers: List[tuple]
    activations: List[str]
    head: str = "regression"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.activations) != len(self.layers):
            raise ValueError("one activation per layer is required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.layers = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in self.layers]
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight must be (out, in) and bias (out,)")
            if i and W.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i}: input width {W.shape[1]} does not match previous output")
        if self.head == "pairwise" and self.out_dim != 1:
            raise ValueError("pairwise-score head must output one scalar per item")

    @property
    def in_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[0]

    @property
    def n_classes(self):
        return self.out_dim if self.head == "classes" else 0

    def params(self):
        out = []
        for W, b in self.layers:
            out.extend([W, b])
        return out

    def with_params(self, params):
        layers = [(params[2 * i], params[2 * i + 1]) for i in range(len(self.layers))]
        return Model(layers, list(self.activations), self.head)

    def copy(self):
        return self.with_params([p.copy() for p in self.params()])


def init_model(in_dim, out_dim, hidden=(), head="classes", rng=None):
    """He-style initialisation; ``hidden=()`` gives a linear model."""
    rng = np.random.default_rng(rng)
    widths = [in_dim, *hidden, out_dim]
    layers, acts = [], []
    for i in range(len(widths) - 1):
        fan_in = widths[i]
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(widths[i + 1], fan_in))
        layers.append((W, np.zeros(widths[i + 1])))
        acts.append("relu" if i < len(widths) - 2 else "identity")
    return Model(layers, acts, head)


def linear_model(w, b=0.0, head="regression"):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return Model([(w, np.atleast_1d(np.asarray(b, dtype=float)))], ["identity"], head)


@dataclass(frozen=True)
class LossSpec:
    """Which per-sample loss to use.

    ``stance``/``alpha`` only matter for ``credal`` and (as a two-class credal
    loss on the preference probability) for ``bradley_terry``.
    """

    kind: str = "cross_entropy"
    stance: str = "neutral"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.stance not in STANCES:
            raise ValueError(f"unknown label stance {self.stance!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("credal mass alpha must lie in [0, 1)")

    def check_head(self, model):
        if self.kind == "credal" and (model.head != "classes" or model.n_classes < 2):
            raise ValueError("credal loss requires a classes(K) head with K >= 2")
        if self.kind == "cross_entropy" and model.head != "classes":
            raise ValueError("cross-entropy requires a classes(K) head")
        if self.kind == "bradley_terry" and model.head != "pairwise":
            raise ValueError("bradley-terry loss requires a pairwise-score head")
        if self.kind == "squared" and model.head != "regression":
            raise ValueError("squared loss requires a regression head")


def _check_input(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.in_dim:
        raise ValueError(f"expected feature matrix with {model.in_dim} columns, got shape {X.shape}")
    return X


def _forward_cache(model, X):
    acts = [X]
    pre = []
    h = X
    for (W, b), act in zip(model.layers, model.activations):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
        acts.append(h)
    return acts, pre


def _backward(model, acts, pre, dout):
    """Back-propagate ``dout`` (gradient wrt the network output) to params and inputs."""
    grads = [None] * (2 * len(model.layers))
    d = dout
    for i in range(len(model.layers) - 1, -1, -1):
        W, _ = model.layers[i]
        if model.activations[i] == "relu":
            d = d * (pre[i] > 0)
        grads[2 * i] = d.T @ acts[i]
        grads[2 * i + 1] = d.sum(axis=0)
        d = d @ W
    return grads, d


def forward(model, X):
    """Scores, one row per input row. For a pairwise head: one scalar per item."""
    X = _check_input(model, X)
    acts, _ = _forward_cache(model, X)
    return acts[-1]


def predict_proba(model, X):
    """Class probabilities (classes head) or P(a preferred) pairs as two columns."""
    if model.head == "classes":
        return softmax(forward(model, X))
    if model.head == "pairwise":
        d = pair_margin(model, X)
        pa = sigmoid(d)
        return np.column_stack([pa, 1.0 - pa])
    raise ValueError("probabilities are only defined for classes and pairwise heads")


def pair_margin(model, X):
    """s(e_a) - s(e_b) for rows stored as the concatenation [e_a; e_b]."""
    X = np.asarray(X, dtype=float)
    d = model.in_dim
    if X.ndim != 2 or X.shape[1] != 2 * d:
        raise ValueError(f"pair rows must have width {2 * d}, got shape {X.shape}")
    return forward(model, X[:, :d])[:, 0] - forward(model, X[:, d:])[:, 0]


def _head_loss(spec, out, targets):
    """Per-sample loss and its gradient wrt the network output ``out``."""
    n = out.shape[0]
    if spec.kind == "squared":
        y = np.asarray(targets, dtype=float).reshape(n, -1)
        if y.shape[1] != out.shape[1]:
            raise ValueError("regression targets do not match the output width")
        r = out - y
        return (r**2).sum(axis=1), 2.0 * r
    if spec.kind == "cross_entropy":
        t = np.asarray(targets)
        if t.ndim == 1:
            if not np.issubdtype(t.dtype, np.integer):
                raise ValueError("class targets must be integer indices or a soft-target matrix")
            if t.min() < 0 or t.max() >= out.shape[1]:
                raise ValueError("class index out of range")
            t = np.eye(out.shape[1])[t]
        t = t.astype(float)
        if t.shape != out.shape:
            raise ValueError("soft targets must have one column per class")
        return soft_cross_entropy_from_logits(out, t)
    if spec.kind == "credal":
        y = np.asarray(targets)
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
            raise ValueError("credal losses need crisp integer labels")
        if y.min() < 0 or y.max() >= out.shape[1]:
            raise ValueError("class index out of range")
        return credal_loss_from_logits(out, y, spec.stance, spec.alpha)
    raise AssertionError(spec.kind)


def per_sample_loss_and_grads(model, X, targets, spec, weights=None):
    """Per-sample losses with gradients of ``sum_i weights_i * loss_i``.

    ``weights`` defaults to ``1/n`` each (the plain mean). It may also be a
    callable mapping the loss vector to weights, which is how loss-dependent
    aggregation (the KL duals) gets its gradient in one pass. Returns
    ``(losses, param_grads, input_grads)``; ``param_grads`` follows
    ``model.params()`` ordering and ``input_grads`` has the shape of ``X``.
    Losses are returned before any aggregation transform.
    """
    spec.check_head(model)
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    if spec.kind == "bradley_terry":
        return _bradley_terry(model, X, targets, spec, weights)

    X = _check_input(model, X)
    acts, pre = _forward_cache(model, X)
    losses, dout = _head_loss(spec, acts[-1], targets)
    w = _resolve_weights(weights, losses)
    grads, dX = _backward(model, acts, pre, dout * w[:, None])
    return losses, grads, dX


def _resolve_weights(weights, losses):
    n = losses.shape[0]
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights(losses) if callable(weights) else weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("one weight per sample is required")
    return w


def _bradley_terry(model, X, targets, spec, weights):
    d = model.in_dim
    if X.ndim != 2 or X.shape[1] != 2 * d:
        raise ValueError(f"pair rows must have width {2 * d}, got shape {X.shape}")
    y = np.asarray(targets, dtype=float)
    if y.shape != (X.shape[0],) or np.any((y != 0) & (y != 1)):
        raise ValueError("preference targets must be 0/1 flags, 1 meaning item a is preferred")
    acts_a, pre_a = _forward_cache(model, X[:, :d])
    acts_b, pre_b = _forward_cache(model, X[:, d:])
    margin = acts_a[-1][:, 0] - acts_b[-1][:, 0]
    if spec.alpha == 0.0:
        # BCE(sigmoid(margin), y)
        losses = y * softplus(-margin) + (1.0 - y) * softplus(margin)
        dmargin = sigmoid(margin) - y
    else:
        # two-class view: logits (margin, 0), class 0 = "a preferred"
        logits = np.column_stack([margin, np.zeros_like(margin)])
        cls = (1 - y).astype(int)
        losses, dlog = credal_loss_from_logits(logits, cls, spec.stance, spec.alpha)
        dmargin = dlog[:, 0]
    w = _resolve_weights(weights, losses)
    dm = (dmargin * w)[:, None]
    ga, dXa = _backward(model, acts_a, pre_a, dm)
    gb, dXb = _backward(model, acts_b, pre_b, -dm)
    grads = [a + b for a, b in zip(ga, gb)]
    return losses, grads, np.hstack([dXa, dXb])


# -- optimizer ---------------------------------------------------------------


@dataclass
class OptState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Optional[List[np.ndarray]] = field(default=None, repr=False)
    v: Optional[List[np.ndarray]] = field(default=None, repr=False)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptState):
    """One bias-corrected Adam update. Mutates ``state``; returns new parameter arrays."""
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter is required")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
    if state.m is None:
        state.m = [np.zeros_like(p, dtype=float) for p in params]
        state.v = [np.zeros_like(p, dtype=float) for p in params]
    elif [m.shape for m in state.m] != [np.shape(p) for p in params]:
        raise ValueError("optimizer state does not match parameter shapes")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out, state
