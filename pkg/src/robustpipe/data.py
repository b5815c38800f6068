"""Synthetic datasets with controllable failure modes, CSV ingestion and split management.

A :class:`Dataset` carries one split tag per row. Classification targets are
integer class indices, regression targets are reals, and preference rows
store two item embeddings side by side as ``[e_a; e_b]`` with a 0/1 flag
(1 meaning item ``a`` is preferred).
"""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

SPLITS = ("train", "val_id", "val_ood", "test_id", "test_ood")
TASKS = ("classification", "regression", "preference")
MOONS_CENTER = np.array([0.5, 0.25])


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    task: str = "classification"
    n_classes: int = 0
    seed: Optional[int] = None
    feature_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a matrix")
        n = X.shape[0]
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        y = np.asarray(self.y)
        split = np.asarray(self.split, dtype=str)
        if y.shape[0] != n or split.shape != (n,):
            raise ValueError("targets and split tags need one entry per row")
        bad = set(np.unique(split)) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
        if self.task == "classification":
            if self.n_classes < 1:
                raise ValueError("classification datasets need n_classes >= 1")
            y = y.astype(int)
            if n and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError("class index out of range")
        elif self.task == "preference":
            if X.shape[1] % 2:
                raise ValueError("preference rows must hold two equal-width embeddings")
            y = y.astype(float)
            if np.any((y != 0) & (y != 1)):
                raise ValueError("preference flags must be 0 or 1")
        else:
            y = y.astype(float)
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("one feature name per column is required")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "split", _frozen(split))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def pair_dim(self):
        return self.dim // 2 if self.task == "preference" else 0

    def mask(self, tag):
        return self.split == tag

    def subset(self, tag):
        m = self.mask(tag)
        return self.X[m], self.y[m]

    def present_splits(self):
        return [s for s in SPLITS if np.any(self.split == s)]

    def with_(self, **changes):
        return replace(self, **changes)


# -- generators --------------------------------------------------------------


def moon_points(t, cls):
    """Points on the canonical arcs: class 0 on the unit upper arc, class 1 on the shifted lower arc."""
    t = np.asarray(t, dtype=float)
    if cls == 0:
        return np.column_stack([np.cos(t), np.sin(t)])
    return np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])


def _sample_angles(rng, n, gap):
    if gap is None:
        return rng.uniform(0.0, np.pi, size=n)
    lo, hi = (math.radians(g) for g in gap)
    lo, hi = max(lo, 0.0), min(hi, np.pi)
    left, right = lo, np.pi - hi
    if left + right <= 0:
        raise ValueError("the gap leaves no part of the arc to sample from")
    u = rng.uniform(0.0, left + right, size=n)
    return np.where(u < left, u, u - left + hi)


def shift_transform(translation=(0.0, 0.0), rotation_deg=0.0, center=MOONS_CENTER):
    """Affine map (A, b) rotating about ``center`` then translating."""
    th = math.radians(rotation_deg)
    A = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    c = np.asarray(center, dtype=float)
    b = c - A @ c + np.asarray(translation, dtype=float)
    return A, b


def _moons_block(rng, n, noise_sd, gap):
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = _sample_angles(rng, n0, gap)
    t1 = rng.uniform(0.0, np.pi, size=n1)
    X = np.vstack([moon_points(t0, 0), moon_points(t1, 1)])
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    X = X + noise_sd * rng.standard_normal(X.shape)
    return X, y


def gen_two_moons(n, noise_sd=0.1, gap=None, shift=None, seed=0, n_eval=None):
    """Two-moons with an optional angular gap in class 0 (training rows only) and a shifted OOD sample.

    ``gap`` is a (low, high) interval in degrees along the class-0 arc.
    ``shift`` is ``(dx, dy, rotation_deg)``; rotation is about the centre of the moons.
    Training holds ``n`` rows; each evaluation split holds ``n_eval`` rows
    (default ``n``). The ID evaluation splits and the OOD splits sample the full
    arcs; the OOD splits then have the shift applied.
    """
    if n < 4:
        raise ValueError("two-moons needs n >= 4")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    if gap is not None and not gap[0] < gap[1]:
        raise ValueError("gap must be an interval (low < high)")
    n_eval = n if n_eval is None else n_eval
    rng = np.random.default_rng(seed)
    parts = [_moons_block(rng, n, noise_sd, gap)]
    tags = ["train"] * n
    for tag in SPLITS[1:]:
        parts.append(_moons_block(rng, n_eval, noise_sd, None))
        tags += [tag] * n_eval
    X = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    ds = Dataset(X, y, np.array(tags), "classification", 2, seed)
    if shift is not None:
        dx, dy, rot = (tuple(shift) + (0.0, 0.0, 0.0))[:3]
        A, b = shift_transform((dx, dy), rot)
        ds = apply_covariate_shift(ds, A, b, ("val_ood", "test_ood"))
    return ds


def gen_blobs(n, separation=4.0, sd=0.5, dim=2, seed=0, n_eval=None):
    """Two Gaussian blobs at +-separation/2 along the first axis; linearly separable for large separation."""
    n_eval = n if n_eval is None else n_eval
    rng = np.random.default_rng(seed)
    Xs, ys, tags = [], [], []
    for tag, m in zip(SPLITS, [n] + [n_eval] * 4):
        y = np.arange(m) % 2
        centers = np.zeros((m, dim))
        centers[:, 0] = np.where(y == 1, separation / 2, -separation / 2)
        Xs.append(centers + sd * rng.standard_normal((m, dim)))
        ys.append(y)
        tags += [tag] * m
    return Dataset(np.vstack(Xs), np.concatenate(ys), np.array(tags), "classification", 2, seed)


def inject_label_noise(ds, rate, seed=0):
    """Resample each training label, with probability ``rate``, uniformly among the other classes."""
    if ds.task != "classification":
        raise ValueError("label noise needs a classification dataset")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    train = np.flatnonzero(ds.mask("train"))
    flip = rng.random(train.size) < rate
    offset = rng.integers(1, max(ds.n_classes, 2), size=train.size)
    if not np.any(flip) or ds.n_classes < 2:
        return ds
    y = ds.y.copy()
    y[train[flip]] = (y[train[flip]] + offset[flip]) % ds.n_classes
    return ds.with_(y=y)


def apply_covariate_shift(ds, A, b, splits):
    """x -> A x + b on the rows whose split tag is in ``splits``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape != (ds.dim, ds.dim) or b.shape != (ds.dim,):
        raise ValueError(f"affine map must be {ds.dim}x{ds.dim} with a length-{ds.dim} offset")
    m = np.isin(ds.split, list(splits))
    X = ds.X.copy()
    X[m] = X[m] @ A.T + b
    return ds.with_(X=X)


def gen_preferences(n_pairs, embed_dim, true_utility, annotator_noise=1.0, seed=0):
    """Random item pairs labelled by a Bradley-Terry annotator with linear utility.

    The flag is 1 with probability sigmoid((s_a - s_b) / annotator_noise); zero
    noise makes the annotator deterministic (ties broken by a fair coin). Each
    pair is then swapped with probability 1/2 (flag flipped accordingly).
    All rows are tagged ``train``; use :func:`split` to partition.
    """
    u = np.asarray(true_utility, dtype=float)
    if u.shape != (embed_dim,):
        raise ValueError("true utility must have one weight per embedding dimension")
    if annotator_noise < 0:
        raise ValueError("annotator noise must be non-negative")
    rng = np.random.default_rng(seed)
    ea = rng.standard_normal((n_pairs, embed_dim))
    eb = rng.standard_normal((n_pairs, embed_dim))
    margin = ea @ u - eb @ u
    coin = rng.random(n_pairs)
    if annotator_noise == 0:
        y = np.where(margin > 0, 1.0, np.where(margin < 0, 0.0, (coin < 0.5).astype(float)))
    else:
        z = np.clip(margin / annotator_noise, -700, 700)
        y = (coin < 1.0 / (1.0 + np.exp(-z))).astype(float)
    swap = rng.random(n_pairs) < 0.5
    a = np.where(swap[:, None], eb, ea)
    b = np.where(swap[:, None], ea, eb)
    y = np.where(swap, 1.0 - y, y)
    names = tuple(f"a{i}" for i in range(embed_dim)) + tuple(f"b{i}" for i in range(embed_dim))
    return Dataset(np.hstack([a, b]), y, np.full(n_pairs, "train"), "preference", 0, seed, names)


# -- splits and CSV ------------------------------------------------------------


def split(ds, fractions, seed=0):
    """Seeded shuffle of all rows into the five split tags, in proportion to ``fractions``."""
    if isinstance(fractions, dict):
        fractions = [fractions.get(s, 0.0) for s in SPLITS]
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (len(SPLITS),) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be five non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    bounds = np.rint(np.cumsum(fr) * ds.n).astype(int)
    bounds[-1] = ds.n
    tags = np.empty(ds.n, dtype=object)
    start = 0
    for tag, stop in zip(SPLITS, bounds):
        tags[order[start:stop]] = tag
        start = stop
    return ds.with_(split=tags.astype(str))


def save_csv(ds, path):
    """Write features, target and split with a header; floats use repr so they round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.feature_names) + ["y", "split"])
        for x, y, s in zip(ds.X, ds.y, ds.split):
            yv = str(int(y)) if ds.task == "classification" else repr(float(y))
            w.writerow([repr(float(v)) for v in x] + [yv, s])


def _parse(cell, col, line):
    try:
        v = float(cell)
    except ValueError:
        raise ValueError(f"line {line}: column {col!r} holds non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"line {line}: column {col!r} is not finite")
    return v


def load_csv(path, schema):
    """Read a comma-separated UTF-8 file with a header row.

    ``schema`` keys: ``features`` (list of column names), ``target`` (column),
    ``task`` (default classification), optional ``n_classes``, optional
    ``split`` column; without one every row is tagged ``train``.
    """
    task = schema.get("task", "classification")
    features = list(schema["features"])
    target = schema["target"]
    split_col = schema.get("split")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV file") from None
        cols = {name: i for i, name in enumerate(header)}
        for name in features + [target] + ([split_col] if split_col else []):
            if name not in cols:
                raise ValueError(f"missing column {name!r}")
        rows, ys, tags = [], [], []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"line {line}: expected {len(header)} cells, got {len(rec)}")
            rows.append([_parse(rec[cols[c]], c, line) for c in features])
            ys.append(_parse(rec[cols[target]], target, line))
            tags.append(rec[cols[split_col]] if split_col else "train")
    X = np.array(rows, dtype=float).reshape(len(rows), len(features))
    y = np.array(ys)
    n_classes = 0
    if task == "classification":
        if np.any(y != np.round(y)):
            raise ValueError("classification targets must be integers")
        y = y.astype(int)
        n_classes = int(schema.get("n_classes") or (y.max() + 1 if y.size else 0))
    return Dataset(X, y, np.array(tags, dtype=str), task, n_classes, None, tuple(features))
