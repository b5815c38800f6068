"""Closed-form risks of robust objectives for linear least-squares models.

For ``f_w(x) = w^T x`` (features augmented with a trailing intercept column)
under squared loss, several robust objectives reduce to ERM plus an explicit
regularizer:

* Gaussian vicinal risk:  R_ERM(w) + sigma^2 ||w||^2
* Mixup:                  (1 - 2c) R_ERM(w) + 2c (ybar - w^T xbar)^2,  c = E[lam(1-lam)]
* Wasserstein-1 DRO:      R_ERM(w) + 2 rho ||w||_{q*} mean|r_i| + o(rho)
* label smoothing (+-1):  w_LS = (1 - alpha) w_ERM

Regularizers act on feature coordinates only; the intercept is never
perturbed or penalized. Monte-Carlo counterparts are provided as
independent checks.
"""

from dataclasses import dataclass

import numpy as np

from .enrich import mixup_c_alpha
from .numgrad import LossSpec, linear_model
from .perturb_x import InputPerturbSpec, pgd_perturb

JITTER = 1e-10
_CONJUGATE = {1: np.inf, 2: 2, np.inf: 1}


@dataclass(frozen=True)
class LinearProblem:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or not np.all(X[:, -1] == 1.0):
            raise ValueError("the last column of X must be the all-ones intercept")
        if np.shape(self.y) != (X.shape[0],) or np.shape(self.w) != (X.shape[1],):
            raise ValueError("y must have one entry per row and w one per column")

    @classmethod
    def from_features(cls, features, y, w=None):
        features = np.asarray(features, dtype=float)
        X = np.column_stack([features, np.ones(features.shape[0])])
        w = np.zeros(X.shape[1]) if w is None else np.asarray(w, dtype=float)
        return cls(X, np.asarray(y, dtype=float), w)

    def with_w(self, w):
        return LinearProblem(self.X, self.y, np.asarray(w, dtype=float))

    @property
    def features(self):
        return self.X[:, :-1]

    @property
    def slope(self):
        return self.w[:-1]

    @property
    def intercept(self):
        return self.w[-1]

    def residuals(self):
        return self.y - self.X @ self.w


def random_problem(rng, n=200, d=5, classification=False):
    """Gaussian features, targets from a noisy linear model, and an arbitrary w to evaluate at."""
    F = rng.normal(size=(n, d))
    true_w = rng.normal(size=d)
    score = F @ true_w + 0.3 * rng.normal() + 0.5 * rng.normal(size=n)
    y = np.where(score >= 0, 1.0, -1.0) if classification else score
    w = rng.normal(size=d + 1)
    return LinearProblem.from_features(F, y, w)


def erm_risk(prob):
    return float(np.mean(prob.residuals() ** 2))


def least_squares_fit(X, y):
    """Normal-equation solution; adds 1e-10 ridge jitter when the Gram matrix is singular."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    G = X.T @ X
    rhs = X.T @ y
    if np.linalg.matrix_rank(G) < G.shape[0]:
        G = G + JITTER * np.eye(G.shape[0])
    return np.linalg.solve(G, rhs)


def erm_gradient(prob):
    n = prob.X.shape[0]
    return -2.0 / n * prob.X.T @ prob.residuals()


def vrm_risk_closed(prob, sigma):
    return erm_risk(prob) + sigma**2 * float(prob.slope @ prob.slope)


def mc_vicinal_risk(prob, sigma, m, rng, chunk=100):
    """Average squared loss over ``m`` Gaussian-perturbed copies, spread evenly over the rows."""
    n, d = prob.features.shape
    reps = max(1, m // n)
    total = 0.0
    done = 0
    while done < reps:
        r = min(chunk, reps - done)
        noise = sigma * rng.standard_normal((r, n, d))
        Xt = prob.features[None, :, :] + noise
        pred = Xt @ prob.slope + prob.intercept
        total += float(np.sum((prob.y[None, :] - pred) ** 2))
        done += r
    return total / (reps * n)


def mixup_risk_closed(prob, alpha_mix):
    c = mixup_c_alpha(alpha_mix)
    xbar = prob.X.mean(axis=0)
    ybar = prob.y.mean()
    return (1.0 - 2.0 * c) * erm_risk(prob) + 2.0 * c * float(ybar - prob.w @ xbar) ** 2


def mixup_closed_minimizer(X, y, alpha_mix):
    """Stationary point of the closed-form Mixup risk, from its own normal equations."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    c = mixup_c_alpha(alpha_mix)
    xbar = X.mean(axis=0)
    ybar = y.mean()
    A = (1.0 - 2.0 * c) * X.T @ X / n + 2.0 * c * np.outer(xbar, xbar)
    b = (1.0 - 2.0 * c) * X.T @ y / n + 2.0 * c * xbar * ybar
    if np.linalg.matrix_rank(A) < A.shape[0]:
        A = A + JITTER * np.eye(A.shape[0])
    return np.linalg.solve(A, b)


def mc_mixup_risk(prob, alpha_mix, m, rng, chunk=200_000):
    """Mixup risk with all n^2 ordered pairs enumerated and ``m`` Beta draws spread over them."""
    n = prob.X.shape[0]
    pairs = n * n
    total = 0.0
    count = 0
    start = 0
    while start < m:
        stop = min(m, start + chunk)
        idx = np.arange(start, stop) % pairs
        i, j = idx // n, idx % n
        lam = rng.beta(alpha_mix, alpha_mix, size=stop - start)
        xt = lam[:, None] * prob.X[i] + (1.0 - lam)[:, None] * prob.X[j]
        yt = lam * prob.y[i] + (1.0 - lam) * prob.y[j]
        total += float(np.sum((yt - xt @ prob.w) ** 2))
        count += stop - start
        start = stop
    return total / count


def dual_norm(v, q):
    if q not in _CONJUGATE:
        raise ValueError("q must be 1, 2 or inf")
    return float(np.linalg.norm(v, ord=_CONJUGATE[q]))


def wdro_risk_firstorder(prob, rho, q):
    r = prob.residuals()
    return erm_risk(prob) + 2.0 * rho * dual_norm(prob.slope, q) * float(np.mean(np.abs(r)))


def wdro_risk_pgd(prob, rho, q, steps=1, step_size=None):
    """Mean squared loss after pessimistic PGD on every row (the training-pipeline surrogate)."""
    norm = {2: "l2", np.inf: "linf"}.get(q)
    if norm is None:
        raise ValueError("the PGD surrogate supports q = 2 and q = inf")
    model = linear_model(prob.slope, prob.intercept, head="regression")
    if step_size is None:
        step_size = rho if rho > 0 else None
    spec = InputPerturbSpec("pessimistic", rho, norm, steps, step_size)
    F = pgd_perturb(model, prob.features, prob.y, LossSpec("squared"), spec)
    pred = F @ prob.slope + prob.intercept
    return float(np.mean((prob.y - pred) ** 2))


def ls_solution_scaling(prob, alpha_ls):
    """Least-squares minimizers for targets ``(1 - alpha) y`` and ``y``."""
    w_ls = least_squares_fit(prob.X, (1.0 - alpha_ls) * prob.y)
    w_erm = least_squares_fit(prob.X, prob.y)
    return w_ls, w_erm
