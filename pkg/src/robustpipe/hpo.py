"""Joint hyperparameter search over the whole robust pipeline.

A :class:`SearchSpace` has one descriptor per :class:`RobustSpec` field.
Baselines are the same space with all but their own dimensions frozen, so a
joint search and a baseline search differ only in which descriptors are free.
"""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import metrics
from ._math import derive_rng, derive_seed
from .metrics import EvalReport
from .pipeline import PRESETS, RobustSpec, train

SCHEMA_VERSION = 1


# -- search space ----------------------------------------------------------------


@dataclass(frozen=True)
class Continuous:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("continuous range needs low < high")
        if self.log and self.low <= 0:
            raise ValueError("log scale needs a positive lower bound")

    def to_unit(self, v):
        """Map into the sampling coordinate (log10 for log dimensions)."""
        return math.log10(v) if self.log else float(v)

    def from_unit(self, u):
        return 10.0**u if self.log else float(u)

    @property
    def bounds(self):
        return self.to_unit(self.low), self.to_unit(self.high)

    def sample(self, rng):
        lo, hi = self.bounds
        return float(min(max(self.from_unit(rng.uniform(lo, hi)), self.low), self.high))


@dataclass(frozen=True)
class Integer:
    low: int
    high: int

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("integer range needs low < high")

    def sample(self, rng):
        return int(rng.integers(self.low, self.high + 1))


@dataclass(frozen=True)
class Categorical:
    choices: Tuple

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]


@dataclass(frozen=True)
class Fixed:
    value: object

    def sample(self, rng):
        return self.value


SPEC_FIELDS = tuple(f.name for f in fields(RobustSpec))
DEFAULT_RANGES = {
    "sigma": Continuous(1e-3, 1.0, log=True),
    "rho": Continuous(1e-4, 1.0, log=True),
    "alpha": Continuous(0.0, 0.5),
    "tau": Continuous(0.05, 5.0),
    "lr": Continuous(1e-4, 1e-1, log=True),
}
STANCE_CHOICES = ("pessimistic", "neutral", "optimistic")


@dataclass(frozen=True)
class SearchSpace:
    dims: Dict[str, object]

    def __post_init__(self):
        missing = set(SPEC_FIELDS) - set(self.dims)
        extra = set(self.dims) - set(SPEC_FIELDS)
        if missing or extra:
            raise ValueError(f"search space must cover RobustSpec exactly (missing {sorted(missing)}, extra {sorted(extra)})")

    @property
    def free(self):
        return [k for k in SPEC_FIELDS if not isinstance(self.dims[k], Fixed)]

    def build(self, values):
        return RobustSpec(**{k: values[k] for k in SPEC_FIELDS})

    @classmethod
    def frozen(cls, spec: RobustSpec):
        return cls({k: Fixed(getattr(spec, k)) for k in SPEC_FIELDS})

    @classmethod
    def joint(cls, lr=True, enrich_modes=("none", "vrm")):
        dims = {k: Fixed(v) for k, v in RobustSpec().to_dict().items()}
        dims.update(
            enrich_mode=Categorical(tuple(enrich_modes)),
            sigma=DEFAULT_RANGES["sigma"],
            input_stance=Categorical(STANCE_CHOICES),
            rho=DEFAULT_RANGES["rho"],
            label_stance=Categorical(STANCE_CHOICES),
            alpha=DEFAULT_RANGES["alpha"],
            agg_stance=Categorical(STANCE_CHOICES),
            tau=DEFAULT_RANGES["tau"],
        )
        if lr:
            dims["lr"] = DEFAULT_RANGES["lr"]
        return cls(dims)

    @classmethod
    def baseline(cls, name, lr=True):
        """Frozen-mask preset: ERM everywhere except the baseline's own dimension."""
        if name not in PRESETS:
            raise ValueError(f"unknown baseline {name!r}")
        dims = {k: Fixed(v) for k, v in RobustSpec().to_dict().items()}
        for k, v in PRESETS[name].items():
            dims[k] = Fixed(v)
        free = {
            "erm": [],
            "vrm": ["sigma"],
            "mixup": ["alpha_mix"],
            "ls": ["alpha"],
            "lr": ["alpha"],
            "w_dro": ["rho"],
            "w_dfo": ["rho"],
            "kl_dro": ["tau"],
            "kl_dfo": ["tau"],
        }[name]
        for k in free:
            dims[k] = Continuous(0.05, 2.0, log=True) if k == "alpha_mix" else DEFAULT_RANGES[k]
        if lr:
            dims["lr"] = DEFAULT_RANGES["lr"]
        return cls(dims)


def sample_random(space: SearchSpace, rng):
    return space.build({k: space.dims[k].sample(rng) for k in SPEC_FIELDS})


# -- trial records -----------------------------------------------------------------


@dataclass
class TrialRecord:
    index: int
    spec: RobustSpec
    seed: int
    selection_metric: str
    selection_split: str
    selection_value: float
    reports: Dict[str, EvalReport]
    best_epoch: int
    stage_flags: Dict[str, bool]
    diverged: bool = False
    epoch_objective: List[float] = field(default_factory=list)
    epoch_mean_loss: List[float] = field(default_factory=list)
    wall_seconds: float = field(default=0.0, compare=False)

    def score(self):
        """Selection value with diverged trials mapped to the worst possible value."""
        if self.diverged or self.selection_value is None or not math.isfinite(self.selection_value):
            return metrics.worst_value(self.selection_metric)
        return self.selection_value

    def to_dict(self, timing=True):
        """JSON-ready dict; ``timing=False`` drops wall-clock time for byte-stable files."""

        def clean(v):
            return v if v is not None and math.isfinite(v) else None

        return {
            "schema": SCHEMA_VERSION,
            "trial": self.index,
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "selection": {"metric": self.selection_metric, "split": self.selection_split, "value": clean(self.selection_value)},
            "reports": {k: {f: (clean(v) if isinstance(v, float) else v) for f, v in r.to_dict().items()} for k, r in self.reports.items()},
            "best_epoch": self.best_epoch,
            "stage_flags": dict(self.stage_flags),
            "diverged": self.diverged,
            "epoch_objective": [clean(v) for v in self.epoch_objective],
            "epoch_mean_loss": [clean(v) for v in self.epoch_mean_loss],
            **({"wall_seconds": self.wall_seconds} if timing else {}),
        }

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trial schema {d.get('schema')!r}")

        def num(v):
            return math.nan if v is None else float(v)

        sel = d["selection"]
        reports = {
            k: EvalReport(r["split"], num(r["accuracy"]), num(r["brier"]), num(r["cvar10"]), int(r["n"]))
            for k, r in d["reports"].items()
        }
        return cls(
            d["trial"],
            RobustSpec.from_dict(d["spec"]),
            d["seed"],
            sel["metric"],
            sel["split"],
            num(sel["value"]),
            reports,
            d["best_epoch"],
            dict(d["stage_flags"]),
            d["diverged"],
            [num(v) for v in d["epoch_objective"]],
            [num(v) for v in d["epoch_mean_loss"]],
            float(d.get("wall_seconds", 0.0)),
        )


def save_history(history, path, timing=True):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(rec.to_json(timing) + "\n")


def load_history(path):
    with open(path, encoding="utf-8") as fh:
        return [TrialRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- running trials ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    batch_size: int = 64
    hidden: Tuple[int, ...] = (16,)


def run_trial(config: RobustSpec, dataset, epochs=20, selection=("cvar10", "val_ood"), seed=0, index=0, batch_size=64, hidden=(16,)):
    metric, split = selection
    t0 = time.perf_counter()
    res = train(config, dataset, epochs=epochs, batch_size=batch_size, hidden=hidden, seed=seed, selection=selection)
    elapsed = time.perf_counter() - t0
    used_split = split if split in dataset.present_splits() else "train"
    if res.diverged and not res.reports:
        value = math.nan
    else:
        value = getattr(res.reports[used_split], metric) if res.reports else math.nan
    return TrialRecord(
        index,
        config,
        seed,
        metric,
        used_split,
        value,
        res.reports,
        res.best_epoch,
        res.stage_flags,
        res.diverged,
        res.epoch_objective,
        res.epoch_mean_loss,
        elapsed,
    )


# -- TPE-lite ---------------------------------------------------------------------------


def _kde_logpdf(x, centers, bw, lo, hi):
    # Gaussian mixture over the observations plus one uniform prior component
    n = len(centers)
    dens = np.exp(-0.5 * ((x - centers) / bw) ** 2).sum() / (bw * math.sqrt(2 * math.pi))
    dens += 1.0 / (hi - lo)
    return math.log(dens / (n + 1))


def _bandwidth(values, lo, hi):
    v = np.asarray(values, dtype=float)
    sd = float(v.std()) if v.size > 1 else 0.0
    bw = 1.06 * sd * v.size ** (-0.2) if sd > 0 else 0.0
    return max(bw, 1e-3 * (hi - lo))


def _coord(desc, value):
    if isinstance(desc, Continuous):
        return desc.to_unit(value)
    return float(value)


def _bounds(desc):
    return desc.bounds if isinstance(desc, Continuous) else (float(desc.low), float(desc.high))


def _draw_near(desc, centers, bw, rng):
    lo, hi = _bounds(desc)
    if len(centers) == 0 or rng.random() < 1.0 / (len(centers) + 1):
        u = rng.uniform(lo, hi)
    else:
        u = rng.normal(centers[int(rng.integers(len(centers)))], bw)
    u = min(max(u, lo), hi)
    if isinstance(desc, Integer):
        return int(round(u))
    return float(min(max(desc.from_unit(u), desc.low), desc.high))


def sample_tpe(space: SearchSpace, history, rng, gamma=0.25, n_candidates=24, n_startup=10):
    """Tree-structured Parzen suggestion with independent per-dimension densities.

    Falls back to :func:`sample_random` below ``n_startup`` completed trials or
    when all recorded scores are equal.
    """
    if len(history) < max(n_startup, 2):
        return sample_random(space, rng)
    metric = history[0].selection_metric
    scores = np.array([h.score() for h in history], dtype=float)
    if np.all(scores == scores[0]):
        return sample_random(space, rng)
    order = np.argsort(-scores if metrics.MAXIMIZE[metric] else scores, kind="stable")
    n_good = max(1, int(math.ceil(gamma * len(history))))
    good = [history[i] for i in order[:n_good]]
    bad = [history[i] for i in order[n_good:]]

    free = space.free
    models = {}
    for k in free:
        desc = space.dims[k]
        if isinstance(desc, Categorical):
            def freq(recs, desc=desc, k=k):
                counts = np.ones(len(desc.choices))
                for r in recs:
                    v = getattr(r.spec, k)
                    if v in desc.choices:
                        counts[desc.choices.index(v)] += 1
                return counts / counts.sum()

            models[k] = ("cat", freq(good), freq(bad))
        else:
            lo, hi = _bounds(desc)
            g = np.array([_coord(desc, getattr(r.spec, k)) for r in good])
            b = np.array([_coord(desc, getattr(r.spec, k)) for r in bad])
            models[k] = ("num", g, _bandwidth(g, lo, hi), b, _bandwidth(b, lo, hi), lo, hi)

    best, best_score = None, -math.inf
    for _ in range(n_candidates):
        values = {k: space.dims[k].sample(rng) for k in SPEC_FIELDS if k not in free}
        score = 0.0
        for k in free:
            desc = space.dims[k]
            m = models[k]
            if m[0] == "cat":
                idx = int(rng.choice(len(desc.choices), p=m[1]))
                values[k] = desc.choices[idx]
                score += math.log(m[1][idx]) - math.log(m[2][idx])
            else:
                _, g, gbw, b, bbw, lo, hi = m
                v = _draw_near(desc, g, gbw, rng)
                values[k] = v
                u = _coord(desc, v)
                score += _kde_logpdf(u, g, gbw, lo, hi) - _kde_logpdf(u, b, bbw, lo, hi)
        if score > best_score:
            best, best_score = values, score
    return space.build(best)


# -- search ---------------------------------------------------------------------------------


def _trial_job(args):
    spec, ds, settings, selection, seed, index = args
    return run_trial(spec, ds, settings.epochs, selection, seed, index, settings.batch_size, settings.hidden)


def search(space, sampler, n_trials, dataset, selection=("cvar10", "val_ood"), seed=0, settings=TrainSettings(), history_path=None, workers=1):
    """Run ``n_trials`` trials; returns ``(best, history)``.

    Trial ``i`` trains with seed ``derive_seed(seed, "trial", i, "train")`` and
    draws its configuration from the stream ``("trial", i, "sample")``. The
    random sampler may evaluate trials in a process pool; TPE is sequential.
    """
    if sampler not in ("random", "tpe"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if n_trials < 1:
        raise ValueError("at least one trial is required")
    history = []

    def sample(i):
        rng = derive_rng(seed, "trial", i, "sample")
        if sampler == "random":
            return sample_random(space, rng)
        return sample_tpe(space, history, rng)

    if sampler == "random" and workers > 1:
        jobs = [(sample(i), dataset, settings, selection, derive_seed(seed, "trial", i, "train"), i) for i in range(n_trials)]
        with ProcessPoolExecutor(workers) as ex:
            history = list(ex.map(_trial_job, jobs))
    else:
        for i in range(n_trials):
            spec = sample(i)
            history.append(_trial_job((spec, dataset, settings, selection, derive_seed(seed, "trial", i, "train"), i)))
    if history_path is not None:
        save_history(history, history_path)
    return best_trial(history), history


def best_trial(history):
    metric = history[0].selection_metric
    best = history[0]
    for rec in history[1:]:
        if metrics.is_better(metric, rec.score(), best.score()):
            best = rec
    return best


def running_best(history):
    """(trial index, best-so-far selection value) after each trial."""
    if not history:
        return []
    metric = history[0].selection_metric
    curve = []
    best = None
    for rec in history:
        s = rec.score()
        if best is None or metrics.is_better(metric, s, best):
            best = s
        curve.append((rec.index, best))
    return curve


def write_running_best_csv(curve, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,best\n")
        for i, v in curve:
            fh.write(f"{i},{v!r}\n")
