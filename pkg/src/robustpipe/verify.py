"""Self-check suites run from the command line (``robustpipe verify <suite>``).

Each suite returns a list of :class:`Check` results. The sizes here are
chosen to finish in seconds; the test suite runs the same oracles at full
size.
"""

import itertools
import math
from fractions import Fraction
from dataclasses import dataclass

import numpy as np

from . import aggregate, closedform, metrics, perturb_y, shapley
from ._math import derive_rng, sigmoid
from .numgrad import LossSpec, forward, init_model, per_sample_loss_and_grads


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# -- finite differences ---------------------------------------------------------


def total_loss(model, X, targets, spec):
    losses, _, _ = per_sample_loss_and_grads(model, X, targets, spec)
    return float(losses.mean())


def fd_relative_error(model, X, targets, spec, eps=1e-5):
    """Relative error between analytic and central-difference gradients of the mean loss.

    Parameter and input gradients are stacked into one vector.
    """
    _, grads, dX = per_sample_loss_and_grads(model, X, targets, spec)
    params = model.params()
    num = []
    for pi, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            shifted = []
            for sgn in (1.0, -1.0):
                q = [a.copy() for a in params]
                q[pi][idx] += sgn * eps
                shifted.append(total_loss(model.with_params(q), X, targets, spec))
            g[idx] = (shifted[0] - shifted[1]) / (2 * eps)
        num.append(g)
    gx = np.zeros_like(X, dtype=float)
    for idx in np.ndindex(X.shape):
        shifted = []
        for sgn in (1.0, -1.0):
            Xs = np.array(X, dtype=float)
            Xs[idx] += sgn * eps
            shifted.append(total_loss(model, Xs, targets, spec))
        gx[idx] = (shifted[0] - shifted[1]) / (2 * eps)
    a = np.concatenate([g.ravel() for g in grads] + [dX.ravel()])
    b = np.concatenate([g.ravel() for g in num] + [gx.ravel()])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


GRADIENT_CASES = ("squared", "smoothed_ce", "optimistic_lr", "pessimistic", "bradley_terry")
KINK_MARGIN = 1e-3


def _hidden_ok(model, X):
    h = X
    for (W, b), act in zip(model.layers, model.activations):
        z = h @ W.T + b
        if act == "relu":
            if np.min(np.abs(z)) < KINK_MARGIN:
                return False
            z = np.maximum(z, 0.0)
        h = z
    return True


def random_gradient_case(case, rng, n=10, d=3, k=3):
    """A random (model, X, targets, spec) away from ReLU kinks and loss switching points."""
    while True:
        alpha = float(rng.uniform(0.05, 0.45))
        if case == "squared":
            model = init_model(d, 1, (4,), "regression", rng)
            X = rng.normal(size=(n, d))
            targets, spec = rng.normal(size=n), LossSpec("squared")
        elif case == "bradley_terry":
            model = init_model(d, 1, (4,), "pairwise", rng)
            X = rng.normal(size=(n, 2 * d))
            targets = rng.integers(0, 2, size=n).astype(float)
            stance = ("neutral", "neutral", "optimistic", "pessimistic")[int(rng.integers(4))]
            spec = LossSpec("bradley_terry", stance, 0.0 if rng.random() < 0.25 else alpha)
            if not (_hidden_ok(model, X[:, :d]) and _hidden_ok(model, X[:, d:])):
                continue
            if spec.stance == "optimistic":
                m = forward(model, X[:, :d])[:, 0] - forward(model, X[:, d:])[:, 0]
                p_obs = np.where(targets == 1, sigmoid(m), 1 - sigmoid(m))
                if np.min(np.abs(p_obs - (1 - alpha))) < KINK_MARGIN:
                    continue
            return model, X, targets, spec
        else:
            model = init_model(d, k, (4,), "classes", rng)
            X = rng.normal(size=(n, d))
            targets = rng.integers(0, k, size=n)
            stance = {"smoothed_ce": "neutral", "optimistic_lr": "optimistic", "pessimistic": "pessimistic"}[case]
            spec = LossSpec("credal", stance, alpha)
            z = forward(model, X)
            p = np.exp(z - z.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            rows = np.arange(n)
            if case == "optimistic_lr" and np.min(np.abs(p[rows, targets] - (1 - alpha))) < KINK_MARGIN:
                continue
            if case == "pessimistic":
                q = p.copy()
                q[rows, targets] = np.inf
                s = np.sort(q, axis=1)
                if np.min(s[:, 1] - s[:, 0]) < KINK_MARGIN:
                    continue
        if _hidden_ok(model, X[:, : model.in_dim]):
            return model, X, targets, spec


# -- suites -----------------------------------------------------------------------


def suite_closedform(seed=0, problems=5, m=500_000):
    rng = derive_rng(seed, "verify", "closedform")
    out = []
    worst = 0.0
    for d in (2, 5, 10):
        for _ in range(problems):
            prob = closedform.random_problem(rng, 200, d)
            sigma = float(rng.uniform(0.1, 1.0))
            cf = closedform.vrm_risk_closed(prob, sigma)
            mc = closedform.mc_vicinal_risk(prob, sigma, m, rng)
            worst = max(worst, abs(mc - cf) / cf)
    out.append(Check("vrm regularizer", worst < 0.01, f"worst relative gap {worst:.2e}"))

    worst_min, worst_mc = 0.0, 0.0
    for _ in range(problems):
        prob = closedform.random_problem(rng, 60, int(rng.integers(2, 6)))
        a = float(rng.uniform(0.2, 2.0))
        w_mix = closedform.mixup_closed_minimizer(prob.X, prob.y, a)
        worst_min = max(worst_min, float(np.linalg.norm(w_mix - closedform.least_squares_fit(prob.X, prob.y))))
        cf = closedform.mixup_risk_closed(prob, a)
        mc = closedform.mc_mixup_risk(prob, a, m, rng)
        worst_mc = max(worst_mc, abs(mc - cf) / cf)
    out.append(Check("mixup minimizer", worst_min < 1e-8, f"max distance {worst_min:.2e}"))
    out.append(Check("mixup identity", worst_mc < 0.01, f"worst relative gap {worst_mc:.2e}"))

    worst = 0.0
    for _ in range(problems):
        prob = closedform.random_problem(rng, 100, 4, classification=True)
        for a in (0.1, 0.3, 0.5):
            w_ls, w_erm = closedform.ls_solution_scaling(prob, a)
            worst = max(worst, float(np.linalg.norm(w_ls - (1 - a) * w_erm)))
    out.append(Check("label smoothing rescaling", worst < 1e-8, f"max distance {worst:.2e}"))

    worst = 0.0
    rho = 1e-4
    for _ in range(problems):
        prob = closedform.random_problem(rng, 200, 5)
        for q in (2, np.inf):
            slope = (closedform.wdro_risk_pgd(prob, rho, q) - closedform.erm_risk(prob)) / rho
            ref = 2 * closedform.dual_norm(prob.slope, q) * float(np.mean(np.abs(prob.residuals())))
            worst = max(worst, abs(slope - ref) / ref)
    out.append(Check("wasserstein first order", worst < 0.05, f"worst relative gap {worst:.2e}"))
    return out


def suite_gradients(seed=0, draws=20):
    rng = derive_rng(seed, "verify", "gradients")
    out = []
    for case in GRADIENT_CASES:
        worst = max(fd_relative_error(*random_gradient_case(case, rng)) for _ in range(draws))
        out.append(Check(f"gradient {case}", worst < 1e-4, f"worst relative error {worst:.2e}"))
    return out


def suite_aggregation(seed=0, vectors=1000):
    rng = derive_rng(seed, "verify", "aggregation")
    ordered = True
    for _ in range(vectors):
        ell = rng.exponential(size=int(rng.integers(1, 50)))
        tau = float(np.exp(rng.uniform(-3, 3)))
        lo = aggregate.agg(ell, aggregate.AggSpec("optimistic", tau))
        hi = aggregate.agg(ell, aggregate.AggSpec("pessimistic", tau))
        tol = 1e-12 * (1 + ell.max())
        ordered &= ell.min() - tol <= lo <= ell.mean() + tol and ell.mean() - tol <= hi <= ell.max() + tol
    ell = np.array([0.0, 2.0])
    pes = aggregate.agg(ell, aggregate.AggSpec("pessimistic", 1.0))
    opt = aggregate.agg(ell, aggregate.AggSpec("optimistic", 1.0))
    ell = rng.exponential(size=20)
    big = max(abs(aggregate.agg(ell, aggregate.AggSpec(s, 1e3)) - ell.mean()) for s in ("pessimistic", "optimistic"))
    small = max(
        abs(aggregate.agg(ell, aggregate.AggSpec("pessimistic", 1e-3)) - ell.max()),
        abs(aggregate.agg(ell, aggregate.AggSpec("optimistic", 1e-3)) - ell.min()),
    )
    return [
        Check("ordering min<=opt<=mean<=pes<=max", bool(ordered), f"{vectors} random vectors"),
        Check("worked values (0,2) tau=1", abs(pes - 1.43378) < 1e-4 and abs(opt - 0.56622) < 1e-4, f"{pes:.5f} / {opt:.5f}"),
        Check("large tau -> mean", big < 1e-2, f"gap {big:.2e}"),
        Check("small tau -> max/min", small < 1e-2, f"gap {small:.2e}"),
    ]


def _vertex_max(p, y, alpha):
    """Brute force: best of the K-1 vertices putting mass alpha on one wrong class."""
    best = -np.inf
    for j in range(p.size):
        if j == y:
            continue
        q = (1 - alpha) * np.eye(p.size)[y] + alpha * np.eye(p.size)[j]
        best = max(best, float(-(q * np.log(np.maximum(p, perturb_y.PROB_FLOOR))).sum()))
    return best


def suite_labels(seed=0, draws=2000):
    rng = derive_rng(seed, "verify", "labels")
    worst = 0.0
    for _ in range(draws):
        k = int(rng.integers(2, 7))
        p = rng.dirichlet(np.ones(k))
        y = int(rng.integers(k))
        a = float(rng.uniform(0, 0.99))
        worst = max(worst, abs(perturb_y.loss_pessimistic(p, y, a) - _vertex_max(p, y, a)))
    worked = perturb_y.loss_pessimistic(np.array([0.7, 0.2, 0.1]), 0, 0.3)
    return [
        Check("pessimistic = vertex maximum", worst < 1e-10, f"max gap {worst:.2e}"),
        Check("worked pessimistic value", abs(worked - 0.9404) < 1e-3, f"{worked:.4f}"),
    ]


def suite_metrics(seed=0, vectors=200):
    rng = derive_rng(seed, "verify", "metrics")
    ok_c = ok_b = True
    for _ in range(vectors):
        n = 10 * int(rng.integers(1, 30))
        ell = rng.exponential(size=n)
        tail = sorted(ell, reverse=True)[: n // 10]
        ok_c &= metrics.cvar10(ell) == float(sum(map(Fraction, tail), Fraction(0)) / len(tail))
        k = int(rng.integers(2, 5))
        p = rng.dirichlet(np.ones(k), size=n)
        oh = np.eye(k)[rng.integers(k, size=n)]
        # explicit products: scalar pow(x, 2) is not correctly rounded on every libm
        terms = [(p[i, j] - oh[i, j]) * (p[i, j] - oh[i, j]) for i in range(n) for j in range(k)]
        ok_b &= metrics.brier(p, oh) == math.fsum(terms) / n
    return [Check("cvar10 vs sort oracle", bool(ok_c), f"{vectors} vectors"), Check("brier vs loop oracle", bool(ok_b), f"{vectors} vectors")]


def suite_shapley(seed=0):
    rng = derive_rng(seed, "verify", "shapley")
    out = []
    g = shapley.CoalitionGame(("a", "b", "c"), rng.normal(size=8))
    gap = abs(shapley.shapley_values(g).sum() - (g.values[-1] - g.values[0]))
    out.append(Check("efficiency", gap < 1e-12, f"gap {gap:.1e}"))
    c = rng.normal(size=3)
    add = shapley.CoalitionGame.from_function(("a", "b", "c"), lambda S: sum(c[i] for i in S))
    err = float(np.max(np.abs(shapley.shapley_values(add) - c)))
    pair = max(abs(v) for T, v in shapley.interaction_indices(add).items() if len(T) == 2)
    out.append(Check("additive game", err < 1e-12 and pair < 1e-10, f"value error {err:.1e}, max pair {pair:.1e}"))
    basis = [frozenset(t) for r in (1, 2) for t in itertools.combinations(range(3), r)]
    coef = rng.normal(size=len(basis))
    planted = shapley.CoalitionGame.from_function(("a", "b", "c"), lambda S: sum(e for e, T in zip(coef, basis) if T <= S))
    got = shapley.interaction_indices(planted)
    err = max(abs(got[T] - e) for T, e in zip(basis, coef))
    out.append(Check("order-2 recovery", err < 1e-10, f"max error {err:.1e}"))
    return out


SUITES = {
    "closedform": suite_closedform,
    "gradients": suite_gradients,
    "aggregation": suite_aggregation,
    "labels": suite_labels,
    "metrics": suite_metrics,
    "shapley": suite_shapley,
}


def run_suite(name, seed=0):
    if name == "all":
        return [c for fn in SUITES.values() for c in fn(seed)]
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](seed)
