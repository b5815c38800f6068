"""The four-stage robust training loop and its configuration.

Each mini-batch goes through

1. enrichment      (VRM replicas, Mixup, label smoothing)
2. input stance    (PGD inside a radius-rho ball)
3. label stance    (credal loss with mass alpha)
4. aggregation     (mean or the KL duals with temperature tau)

before one Adam step. Every mechanism is a field of :class:`RobustSpec`, so
the classic single-axis methods are particular settings of the same object
(see :data:`PRESETS`).

Randomness comes from named streams derived from the run seed:
``init`` (model weights), ``shuffle`` (batch order, one permutation per
epoch), ``enrich`` (VRM noise and Mixup draws, consumed batch by batch).
"""

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

import numpy as np

from . import aggregate, enrich, metrics
from ._math import PROB_FLOOR, derive_rng
from .aggregate import AggSpec
from .enrich import EnrichSpec
from .numgrad import LossSpec, OptState, adam_step, init_model, per_sample_loss_and_grads, predict_proba, forward
from .perturb_x import InputPerturbSpec, pgd_perturb

STAGES = ("enrich", "input", "label", "aggregate")


@dataclass(frozen=True)
class RobustSpec:
    enrich_mode: str = "none"
    sigma: float = 0.0
    vrm_replicas: int = 1
    alpha_mix: float = 1.0
    label_smoothing: float = 0.0
    input_stance: str = "neutral"
    rho: float = 0.0
    norm: str = "l2"
    pgd_steps: int = 7
    pgd_step_size: Optional[float] = None
    label_stance: str = "neutral"
    alpha: float = 0.0
    agg_stance: str = "neutral"
    tau: float = 1.0
    lr: float = 1e-2

    def __post_init__(self):
        # building the stage specs validates every field
        self.enrich_spec()
        self.input_spec()
        LossSpec("credal", self.label_stance, self.alpha)
        self.agg_spec()
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def enrich_spec(self):
        mode = self.enrich_mode
        if mode == "vrm" and self.sigma == 0:
            mode = "none"
        return EnrichSpec(mode, self.sigma, self.vrm_replicas, self.alpha_mix, self.label_smoothing)

    def input_spec(self):
        return InputPerturbSpec(self.input_stance, self.rho, self.norm, self.pgd_steps, self.pgd_step_size)

    def agg_spec(self):
        return AggSpec(self.agg_stance, self.tau)

    def stage_flags(self):
        return {
            "enrich": self.enrich_spec().active,
            "input": self.input_spec().active,
            "label": self.alpha > 0,
            "aggregate": self.agg_stance != "neutral",
        }

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RobustSpec fields: {sorted(unknown)}")
        return cls(**d)

    def updated(self, **changes):
        return replace(self, **changes)


# Single-axis baselines as settings of the joint objective; the numbers are
# defaults for one-off runs, HPO searches the free dimension of each.
PRESETS = {
    "erm": {},
    "vrm": {"enrich_mode": "vrm", "sigma": 0.1},
    "mixup": {"enrich_mode": "mixup", "alpha_mix": 0.4},
    "ls": {"label_stance": "neutral", "alpha": 0.1},
    "lr": {"label_stance": "optimistic", "alpha": 0.1},
    "w_dro": {"input_stance": "pessimistic", "rho": 0.1},
    "w_dfo": {"input_stance": "optimistic", "rho": 0.1},
    "kl_dro": {"agg_stance": "pessimistic", "tau": 1.0},
    "kl_dfo": {"agg_stance": "optimistic", "tau": 1.0},
}
BASELINES = ("erm", "vrm", "w_dro", "kl_dro", "w_dfo", "kl_dfo", "ls", "lr")


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return RobustSpec(**{**base, **overrides})


# -- batch assembly -------------------------------------------------------------


def loss_spec_for(spec: RobustSpec, task, soft_targets=False):
    if task == "regression":
        return LossSpec("squared")
    if task == "preference":
        return LossSpec("bradley_terry", spec.label_stance, spec.alpha)
    if soft_targets:
        if spec.label_stance != "neutral" and spec.alpha > 0:
            raise ValueError("credal label stances need crisp labels; they cannot follow Mixup or stage-1 smoothing")
        return LossSpec("cross_entropy")
    return LossSpec("credal", spec.label_stance, spec.alpha)


def enrich_batch(spec: RobustSpec, X, y, task, n_classes, rng):
    """Stage 1. Returns features, targets and whether targets became soft rows."""
    es = spec.enrich_spec()
    if es.mode == "mixup" and task == "preference":
        raise ValueError("mixup is undefined for pairwise preference targets")
    if es.mode == "vrm":
        X, y = enrich.vrm_expand(X, y, es.sigma, es.replicas, rng)
    soft = False
    if task == "classification" and (es.label_smoothing > 0 or es.mode == "mixup"):
        y = enrich.smooth_labels(y, es.label_smoothing, n_classes)
        soft = True
    if es.mode == "mixup":
        X, y = enrich.mixup(X, y, es.alpha_mix, rng)
    if soft and spec.label_stance == "neutral" and spec.alpha > 0:
        # neutral credal stance on soft rows is smoothing of those rows
        y = enrich.smooth_labels(y, spec.alpha, n_classes)
    return X, y, soft


def batch_step(model, spec: RobustSpec, X, y, task, n_classes, rng):
    """Stages 1-4 on one mini-batch. Returns (objective, per-sample losses, param grads)."""
    Xe, ye, soft = enrich_batch(spec, X, y, task, n_classes, rng)
    ls = loss_spec_for(spec, task, soft)
    Xp = pgd_perturb(model, Xe, ye, ls, spec.input_spec())
    aspec = spec.agg_spec()

    def weights(losses):
        if not np.all(np.isfinite(losses)):
            return np.full(losses.shape[0], np.nan)
        return aggregate.agg_weights(losses, aspec)

    losses, grads, _ = per_sample_loss_and_grads(model, Xp, ye, ls, weights=weights)
    if not np.all(np.isfinite(losses)):
        return math.nan, losses, grads
    return aggregate.agg(losses, aspec), losses, grads


# -- evaluation -------------------------------------------------------------------


def evaluate(model, ds, tag):
    X, y = ds.subset(tag)
    n = X.shape[0]
    if ds.task == "classification":
        p = predict_proba(model, X)
        onehot = np.eye(ds.n_classes)[y]
        nll = -np.log(np.maximum(p[np.arange(n), y], PROB_FLOOR))
        return metrics.EvalReport(tag, metrics.accuracy(p.argmax(axis=1), y), metrics.brier(p, onehot), metrics.cvar10(nll), n)
    if ds.task == "preference":
        p = predict_proba(model, X)
        target = np.column_stack([y, 1.0 - y])
        nll = -np.log(np.maximum(np.where(y == 1, p[:, 0], p[:, 1]), PROB_FLOOR))
        return metrics.EvalReport(tag, metrics.accuracy((p[:, 0] > 0.5).astype(float), y), metrics.brier(p, target), metrics.cvar10(nll), n)
    err = (forward(model, X)[:, 0] - y) ** 2
    return metrics.EvalReport(tag, math.nan, float(err.mean()), metrics.cvar10(err), n)


def evaluate_all(model, ds):
    return {tag: evaluate(model, ds, tag) for tag in ds.present_splits()}


# -- training -------------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    best_model: object
    best_epoch: int
    reports: dict
    epoch_objective: List[float]
    epoch_mean_loss: List[float]
    epoch_selection: List[float]
    diverged: bool = False
    stage_flags: dict = field(default_factory=dict)


def build_model(ds, hidden, rng):
    if ds.task == "classification":
        return init_model(ds.dim, ds.n_classes, hidden, "classes", rng)
    if ds.task == "preference":
        return init_model(ds.pair_dim, 1, hidden, "pairwise", rng)
    return init_model(ds.dim, 1, hidden, "regression", rng)


def train(spec: RobustSpec, ds, epochs=30, batch_size=64, hidden=(16,), seed=0, selection=("cvar10", "val_ood")):
    """Train with the four-stage pipeline, keeping the checkpoint best on ``selection``.

    ``selection`` is ``(metric, split)``; the split falls back to ``train``
    when absent from the dataset.
    """
    metric, sel_split = selection
    if metric not in metrics.MAXIMIZE:
        raise ValueError(f"unknown selection metric {metric!r}")
    if sel_split not in ds.present_splits():
        sel_split = "train"
    Xtr, ytr = ds.subset("train")
    if Xtr.shape[0] == 0:
        raise ValueError("dataset has no training rows")
    model = build_model(ds, tuple(hidden), derive_rng(seed, "init"))
    rng_shuffle = derive_rng(seed, "shuffle")
    rng_enrich = derive_rng(seed, "enrich")
    state = OptState(lr=spec.lr)
    res = TrainResult(model, model.copy(), -1, {}, [], [], [], stage_flags=spec.stage_flags())
    best_val = None
    n = Xtr.shape[0]
    for epoch in range(epochs):
        order = rng_shuffle.permutation(n)
        objs, loss_sum, count = [], 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            # overflow is detected below and reported as divergence
            with np.errstate(over="ignore", invalid="ignore"):
                obj, losses, grads = batch_step(model, spec, Xtr[idx], ytr[idx], ds.task, ds.n_classes, rng_enrich)
            if not math.isfinite(obj) or not all(np.all(np.isfinite(g)) for g in grads):
                res.diverged = True
                break
            params, state = adam_step(model.params(), grads, state)
            if not all(np.all(np.isfinite(p)) for p in params):
                res.diverged = True
                break
            model = model.with_params(params)
            objs.append(obj)
            loss_sum += float(losses.sum())
            count += losses.shape[0]
        if res.diverged:
            break
        res.epoch_objective.append(float(np.mean(objs)))
        res.epoch_mean_loss.append(loss_sum / count)
        reports = evaluate_all(model, ds)
        val = getattr(reports[sel_split], metric)
        res.epoch_selection.append(val)
        if best_val is None or metrics.is_better(metric, val, best_val):
            best_val = val
            res.best_epoch = epoch
            res.best_model = model
            res.reports = reports
    res.model = model
    return res
