"""Per-sample binary cross-entropy and the empirical CVaR objective.

The CVaR objective at level alpha over per-sample losses l_i is

    value(lam) = lam + 1/(alpha*n) * sum_i max(l_i - lam, 0)

which is convex piecewise-linear in lam; its minimizer is found by bisection
on the subgradient g(lam) = 1 - #{l_i > lam} / (alpha*n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

MAX_BISECT_ITERS = 64


@dataclass(frozen=True)
class CvarSolution:
    lam: float          # minimizing threshold (a tail quantile of the losses)
    value: float        # objective value at lam
    active_count: int   # #{l_i > lam}


def _check_pairs(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"length mismatch: {z.shape} vs {y.shape}")
    return z, y


def bce_per_sample(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Numerically stable BCE on logits: max(z,0) - z*y + log1p(exp(-|z|))."""
    z, y = _check_pairs(logits, labels)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def bce_logit_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d/dz of per-sample BCE: logistic(z) - y, each entry in (-1, 1)."""
    z, y = _check_pairs(logits, labels)
    return expit(z) - y


def cvar_value(losses: np.ndarray, alpha: float, lam: float) -> float:
    """Exact CVaR objective at a given threshold."""
    l = np.asarray(losses, dtype=np.float64)
    if l.size == 0:
        raise ValueError("empty loss vector")
    _check_alpha(alpha)
    return float(lam + np.maximum(l - lam, 0.0).sum() / (alpha * l.size))


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")


def cvar_lambda_search(
    losses: np.ndarray, alpha: float, tol: float = 1e-9
) -> CvarSolution:
    """Bisection for the minimizing threshold over [min(losses), max(losses)].

    Runs at most 64 halvings, stopping early once the bracket width drops
    below ``tol`` times the loss range; both bracket ends are then evaluated
    and the better one returned, so the value is exact whenever an endpoint
    sits on the optimal plateau.
    """
    l = np.asarray(losses, dtype=np.float64)
    if l.size == 0:
        raise ValueError("empty loss vector")
    _check_alpha(alpha)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    lo = float(l.min())
    hi = float(l.max())
    if lo == hi:
        return CvarSolution(lo, lo, 0)
    scale = alpha * l.size
    width_stop = tol * (hi - lo)
    for _ in range(MAX_BISECT_ITERS):
        if hi - lo <= width_stop:
            break
        mid = 0.5 * (lo + hi)
        subgrad = 1.0 - np.count_nonzero(l > mid) / scale
        if subgrad < 0.0:
            lo = mid
        else:
            hi = mid
    # snap to the largest kink (loss value) inside the bracket: the optimum of
    # a piecewise-linear objective sits on a kink, and the right-subgradient
    # there is nonnegative, which bounds the active count by alpha*n
    snap = float(l[l <= hi].max())
    candidates = [(cvar_value(l, alpha, c), c) for c in (snap, hi)]
    value, lam = min(candidates)
    return CvarSolution(lam, value, int(np.count_nonzero(l > lam)))


def cvar_active_weights(losses: np.ndarray, lam: float, alpha: float) -> np.ndarray:
    """Subgradient weights: 1/(alpha*n) for losses strictly above lam, else 0."""
    l = np.asarray(losses, dtype=np.float64)
    _check_alpha(alpha)
    return (l > lam).astype(np.float64) / (alpha * l.size)


def cvar_kink_minimum(losses: np.ndarray, alpha: float) -> tuple[float, float]:
    """Exact minimum by evaluating the objective at every distinct loss value.

    Independent oracle for the bisection path; the piecewise-linear objective
    attains its minimum at a kink.
    """
    l = np.asarray(losses, dtype=np.float64)
    if l.size == 0:
        raise ValueError("empty loss vector")
    _check_alpha(alpha)
    best_value = np.inf
    best_lam = float(l.min())
    for lam in np.unique(l):
        v = cvar_value(l, alpha, float(lam))
        if v < best_value:
            best_value = v
            best_lam = float(lam)
    return best_lam, best_value
