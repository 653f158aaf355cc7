"""Slow, independent reference computations used to check the fast paths."""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .glm import DesignMatrix, Term, fit_logistic
from .glm.stepwise import allowed_moves

MAX_ORACLE_TERMS = 12


def brute_force_records(series: Sequence[float]) -> list[int]:
    """Rescan all previous values for every position (NaN never records)."""
    out = []
    seen: list[float] = []
    for v in series:
        if v != v:  # NaN
            out.append(0)
            continue
        out.append(int(all(v > s for s in seen)))
        seen.append(v)
    return out


def oracle_pairwise_auc(probs, labels) -> float:
    """Share of (positive, negative) pairs ranked correctly, ties counting one half."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = probs[labels], probs[~labels]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes are required")
    gt = np.count_nonzero(pos[:, None] > neg[None, :])
    eq = np.count_nonzero(pos[:, None] == neg[None, :])
    return (2 * gt + eq) / (2 * len(pos) * len(neg))


def oracle_newton_logistic(X, y, max_iter: int = 200, tol: float = 1e-14) -> np.ndarray:
    """Plain Newton-Raphson on the raw design, no scaling, no step control."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
        grad = X.T @ (y - mu)
        hess = X.T @ (X * (mu * (1 - mu))[:, None])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol * (1 + np.max(np.abs(beta))):
            break
    return beta


def oracle_loess_at(x, y, i: int, span: float) -> float:
    """Weighted least squares at one point with explicitly sorted neighbours."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    q = min(int(np.ceil(span * n)), n)
    d = np.abs(x - x[i])
    h = sorted(d)[q - 1]
    w = np.array([(1 - (di / h) ** 3) ** 3 if di < h else 0.0 for di in d])
    A = np.column_stack([np.ones(n), x]) * np.sqrt(w)[:, None]
    coef = np.linalg.lstsq(A, y * np.sqrt(w), rcond=None)[0]
    return float(coef[0] + coef[1] * x[i])


def _valid_subset(subset: Sequence[Term], hierarchical: bool) -> bool:
    keys = [t.conflict_key for t in subset]
    if len(set(keys)) != len(keys):
        return False
    if hierarchical:
        chosen = set(subset)
        return all(m in chosen for t in subset for m in t.main_effects())
    return True


def oracle_best_subset(design: DesignMatrix, k_penalty: float, scope: Sequence[Term] | None = None,
                       hierarchical: bool = True) -> tuple[tuple[Term, ...], float]:
    """Exhaustive search over every admissible subset of at most 12 scope terms.

    Ties prefer fewer coefficients, then the lexicographically first set of
    scope positions.
    """
    scope = tuple(design.terms if scope is None else scope)
    if len(scope) > MAX_ORACLE_TERMS:
        raise ValueError(f"scope too large for exhaustive search ({len(scope)} > {MAX_ORACLE_TERMS})")
    best = None
    for r in range(len(scope) + 1):
        for idx in itertools.combinations(range(len(scope)), r):
            subset = [scope[i] for i in idx]
            if not _valid_subset(subset, hierarchical):
                continue
            fit = fit_logistic(design.subset(subset))
            crit = fit.deviance + k_penalty * fit.k
            key = (crit, fit.k, idx)
            if best is None or crit < best[0][0] - 1e-8 * max(1.0, abs(crit)) or (
                    abs(crit - best[0][0]) <= 1e-8 * max(1.0, abs(crit)) and key[1:] < best[0][1:]):
                best = (key, tuple(subset))
    return best[1], best[0][0]


def one_move_gains(design: DesignMatrix, terms: Sequence[Term], k_penalty: float,
                   direction: str = "both", hierarchical: bool = True) -> dict[str, float]:
    """Criterion change of every allowed single move, each refitted from scratch."""
    base = fit_logistic(design.subset(list(terms)))
    c0 = base.deviance + k_penalty * base.k
    out = {}
    for kind, t in allowed_moves(list(terms), design.terms, direction, hierarchical):
        new = [u for u in terms if u != t] if kind == "drop" else list(terms) + [t]
        f = fit_logistic(design.subset(new))
        out[f"{kind}:{t.name}"] = f.deviance + k_penalty * f.k - c0
    return out
