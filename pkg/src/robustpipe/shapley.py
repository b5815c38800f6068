"""Coalition analysis of robustness components.

Players are pipeline mechanisms (e.g. VRM, label smoothing, KL-DRO). A
coalition switches its members on at their tuned values and leaves the rest
disabled, so the empty coalition is plain ERM. Values are stored in an array
indexed by bitmask (bit ``i`` set means player ``i`` is active).
"""

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from ._math import derive_seed
from .hpo import TrainSettings, run_trial
from .pipeline import RobustSpec

MAX_PLAYERS = 10

# player -> (fields it controls, values that disable it)
PLAYERS = {
    "vrm": (("enrich_mode", "sigma"), {"enrich_mode": "none", "sigma": 0.0}),
    "mixup": (("enrich_mode", "alpha_mix"), {"enrich_mode": "none"}),
    "ls": (("label_stance", "alpha"), {"label_stance": "neutral", "alpha": 0.0}),
    "lr": (("label_stance", "alpha"), {"label_stance": "neutral", "alpha": 0.0}),
    "w_dro": (("input_stance", "rho"), {"input_stance": "neutral", "rho": 0.0}),
    "w_dfo": (("input_stance", "rho"), {"input_stance": "neutral", "rho": 0.0}),
    "kl_dro": (("agg_stance", "tau"), {"agg_stance": "neutral"}),
    "kl_dfo": (("agg_stance", "tau"), {"agg_stance": "neutral"}),
}
DEFAULT_ACTIVE = {
    "vrm": {"enrich_mode": "vrm"},
    "mixup": {"enrich_mode": "mixup"},
    "ls": {"label_stance": "neutral"},
    "lr": {"label_stance": "optimistic"},
    "w_dro": {"input_stance": "pessimistic"},
    "w_dfo": {"input_stance": "optimistic"},
    "kl_dro": {"agg_stance": "pessimistic"},
    "kl_dfo": {"agg_stance": "optimistic"},
}


@dataclass(frozen=True)
class CoalitionGame:
    players: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        k = len(self.players)
        if k > MAX_PLAYERS:
            raise ValueError(f"exact enumeration supports at most {MAX_PLAYERS} players")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (2**k,):
            raise ValueError(f"need one value per coalition ({2**k}), got {v.shape}")
        object.__setattr__(self, "players", tuple(self.players))
        object.__setattr__(self, "values", v)

    @property
    def k(self):
        return len(self.players)

    @classmethod
    def from_function(cls, players, fn):
        """Build from ``fn(frozenset of player indices) -> value``."""
        k = len(players)
        return cls(tuple(players), np.array([fn(members(mask, k)) for mask in range(2**k)]))

    def value(self, subset):
        return self.values[mask_of(subset)]


def members(mask, k):
    return frozenset(i for i in range(k) if mask >> i & 1)


def mask_of(subset):
    return sum(1 << i for i in subset)


def shapley_values(game: CoalitionGame):
    """Exact Shapley values by enumerating every coalition that excludes each player."""
    k = game.k
    phi = np.zeros(k)
    fact = math.factorial
    for i in range(k):
        for mask in range(2**k):
            if mask >> i & 1:
                continue
            s = bin(mask).count("1")
            weight = fact(s) * fact(k - s - 1) / fact(k)
            phi[i] += weight * (game.values[mask | 1 << i] - game.values[mask])
    return phi


def _fsii_basis(k, order):
    return [frozenset(c) for r in range(order + 1) for c in itertools.combinations(range(k), r)]


def interaction_indices(game: CoalitionGame, order=2):
    """Faithful Shapley interaction indices up to ``order``.

    Weighted least-squares fit of ``v(S) ~ sum_{T subset S, |T| <= order} E(T)``
    with Shapley-kernel weights on proper non-empty coalitions and the empty
    and grand coalitions imposed as equality constraints.

    Returns ``{frozenset(T): E(T)}`` for all ``1 <= |T| <= order``.
    """
    k = game.k
    if not 1 <= order <= k:
        raise ValueError("order must lie between 1 and the number of players")
    basis = _fsii_basis(k, order)
    full = 2**k - 1
    A = np.array([[1.0 if T <= members(mask, k) else 0.0 for T in basis] for mask in range(2**k)])
    v = game.values
    inner = [m for m in range(2**k) if m not in (0, full)]
    w = np.array([(k - 1) / (math.comb(k, s) * s * (k - s)) for s in (bin(m).count("1") for m in inner)])
    Ai, vi = A[inner], v[inner]
    C = A[[0, full]]
    d = v[[0, full]]
    p = len(basis)
    kkt = np.zeros((p + 2, p + 2))
    kkt[:p, :p] = 2.0 * Ai.T @ (w[:, None] * Ai)
    kkt[:p, p:] = C.T
    kkt[p:, :p] = C
    rhs = np.concatenate([2.0 * Ai.T @ (w * vi), d])
    if np.linalg.matrix_rank(kkt) < kkt.shape[0]:
        raise np.linalg.LinAlgError("singular interaction design")
    sol = np.linalg.solve(kkt, rhs)[:p]
    return {T: float(e) for T, e in zip(basis, sol) if T}


def split_indices(game, indices):
    """Mains as an array and pairwise terms keyed by ``(i, j)``."""
    mains = np.array([indices.get(frozenset([i]), 0.0) for i in range(game.k)])
    pairs = {tuple(sorted(T)): v for T, v in indices.items() if len(T) == 2}
    return mains, pairs


# -- building games from training runs ------------------------------------------------


def coalition_spec(players, mask, tuned, base: Optional[RobustSpec] = None):
    """RobustSpec with the members of ``mask`` at their tuned values and the rest disabled."""
    base = base or RobustSpec()
    changes = {}
    owner = {}
    for i, name in enumerate(players):
        if name not in PLAYERS:
            raise ValueError(f"no disabled state is defined for player {name!r}")
        fields_, disabled = PLAYERS[name]
        for f in fields_:
            if f in owner:
                raise ValueError(f"players {owner[f]!r} and {name!r} both control {f!r}")
            owner[f] = name
        if mask >> i & 1:
            src = tuned[name]
            src = src.to_dict() if isinstance(src, RobustSpec) else dict(src)
            vals = {**DEFAULT_ACTIVE[name], **{f: src[f] for f in fields_ if f in src}}
            changes.update(vals)
        else:
            changes.update(disabled)
    return base.updated(**changes)


def build_game(players, tuned, dataset, metric="accuracy", split="test_ood", seeds=5, settings=TrainSettings(),
               selection=("accuracy", "val_ood"), base=None, seed=0, value_fn: Optional[Callable] = None):
    """Coalition game of metric deltas relative to the empty coalition.

    Each coalition's raw value is the mean of ``metric`` on ``split`` over
    ``seeds`` training runs. ``value_fn(mask, spec)`` replaces training (used
    for synthetic injections and tests).
    """
    players = tuple(players)
    k = len(players)
    raw = np.zeros(2**k)
    specs = []
    for mask in range(2**k):
        spec = coalition_spec(players, mask, tuned, base)
        specs.append(spec)
        if value_fn is not None:
            raw[mask] = value_fn(mask, spec)
            continue
        vals = []
        for s in range(seeds):
            rec = run_trial(spec, dataset, settings.epochs, selection, derive_seed(seed, "seed", s), mask, settings.batch_size, settings.hidden)
            vals.append(getattr(rec.reports[split], metric) if rec.reports else math.nan)
        raw[mask] = float(np.mean(vals))
    return CoalitionGame(players, raw - raw[0]), specs


def write_game_csv(game, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mask,members,value\n")
        for mask, v in enumerate(game.values):
            names = "+".join(game.players[i] for i in sorted(members(mask, game.k)))
            fh.write(f"{mask},{names},{float(v)!r}\n")


def read_game_csv(path, players):
    vals = np.zeros(2 ** len(players))
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            mask, _, v = line.rstrip("\n").split(",")
            vals[int(mask)] = float(v)
    return CoalitionGame(tuple(players), vals)


def indices_document(game, order=2):
    phi = shapley_values(game)
    idx = interaction_indices(game, order)
    mains, pairs = split_indices(game, idx)
    return {
        "players": list(game.players),
        "shapley": {p: float(v) for p, v in zip(game.players, phi)},
        "fsii_main": {p: float(v) for p, v in zip(game.players, mains)},
        "fsii_pairs": {f"{game.players[i]}|{game.players[j]}": float(v) for (i, j), v in sorted(pairs.items())},
        "grand_minus_empty": float(game.values[-1] - game.values[0]),
    }


def write_indices_json(game, path, order=2):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(indices_document(game, order), fh, indent=2, sort_keys=True)
        fh.write("\n")
