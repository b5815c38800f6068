"""Batch-level aggregation of per-sample losses.

The pessimistic and optimistic stances are the closed-form duals of the
worst/best-case expectation over a KL ball around the batch distribution:

    pessimistic:  tau * log mean exp(l / tau)
    optimistic:  -tau * log mean exp(-l / tau)

which is tilted ERM with tilt +1/tau and -1/tau. Neutral is the plain mean.
"""

from dataclasses import dataclass

import numpy as np

STANCES = ("pessimistic", "neutral", "optimistic")


@dataclass(frozen=True)
class AggSpec:
    stance: str = "neutral"
    tau: float = 1.0

    def __post_init__(self):
        if self.stance not in STANCES:
            raise ValueError(f"unknown aggregation stance {self.stance!r}")
        if not self.tau > 0:
            raise ValueError("temperature tau must be positive")


def _check(losses):
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size == 0:
        raise ValueError("aggregation needs a non-empty loss vector")
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite loss")
    return losses


def _log_mean_exp(a):
    m = a.max()
    return m + np.log(np.sum(np.exp(a - m)) / a.size)


def agg(losses, spec: AggSpec):
    losses = _check(losses)
    if spec.stance == "neutral":
        return float(np.mean(losses))
    sign = 1.0 if spec.stance == "pessimistic" else -1.0
    return float(sign * spec.tau * _log_mean_exp(sign * losses / spec.tau))


def agg_weights(losses, spec: AggSpec):
    """d agg / d losses: softmax(+-l/tau) for the dual stances, 1/n for neutral."""
    losses = _check(losses)
    if spec.stance == "neutral":
        return np.full(losses.size, 1.0 / losses.size)
    sign = 1.0 if spec.stance == "pessimistic" else -1.0
    a = sign * losses / spec.tau
    e = np.exp(a - a.max())
    return e / e.sum()


def agg_limits_check(losses, taus):
    """Dual values over a temperature grid alongside mean, max and min."""
    losses = _check(losses)
    rows = []
    for tau in taus:
        rows.append(
            {
                "tau": float(tau),
                "pessimistic": agg(losses, AggSpec("pessimistic", tau)),
                "optimistic": agg(losses, AggSpec("optimistic", tau)),
            }
        )
    return {
        "mean": float(losses.mean()),
        "max": float(losses.max()),
        "min": float(losses.min()),
        "grid": rows,
    }
