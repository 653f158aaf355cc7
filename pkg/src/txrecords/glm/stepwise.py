"""Greedy add/drop term selection on a penalized AIC.

All candidate models of one step are refitted together.  Each candidate
starts from the current coefficients (drops get the usual Wald adjustment of
the remaining coefficients) and is iterated to its own maximum-likelihood
point with Fisher scoring whose information matrix is frozen at the current
model's weights.  The frozen matrix only changes the path, not the optimum; a
candidate that does not settle falls back to full IRLS.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .irls import (GlmFit, IrlsState, Scaling, _check_response, expit, irls,
                   loglik_from_eta, summarize)
from .terms import DesignMatrix, Term

log = logging.getLogger(__name__)

_CHUNK_CELLS = 4_000_000


@dataclass
class StepwiseResult:
    fit: GlmFit
    terms: tuple[Term, ...]
    criterion: float
    k_penalty: float
    trace: list[dict] = field(default_factory=list)


def allowed_moves(model: Sequence[Term], scope: Sequence[Term], direction: str = "both",
                  hierarchical: bool = True) -> list[tuple[str, Term]]:
    """Single-term moves from ``model`` within ``scope``, in scope order.

    Terms sharing a conflict key (``x`` and ``poly(x,2)``) never coexist.
    With ``hierarchical``, a main effect cannot leave while an interaction
    uses it, and an interaction enters only after both of its main effects.
    """
    in_model = set(model)
    moves: list[tuple[str, Term]] = []
    for t in scope:
        if t in in_model:
            if hierarchical and any(t in u.main_effects() for u in in_model):
                continue
            moves.append(("drop", t))
        elif direction == "both":
            if any(u.conflict_key == t.conflict_key for u in in_model):
                continue
            if hierarchical and not all(m in in_model for m in t.main_effects()):
                continue
            moves.append(("add", t))
    return moves


class _Engine:
    def __init__(self, design: DesignMatrix, max_iter: int = 50, tol: float = 1e-8,
                 chord_iter: int = 100, chord_tol: float = 1e-10):
        self.design = design
        self.y = _check_response(design.y, 1)
        self.scaling = Scaling.of(design.X)
        self.Xs = self.scaling.apply(design.X)
        self.slices = design.slices()
        self.max_iter = max_iter
        self.tol = tol
        self.chord_iter = chord_iter
        self.chord_tol = chord_tol

    def cols(self, terms: Sequence[Term]) -> np.ndarray:
        idx = [0] + [int(i) for t in terms for i in self.slices[t]]
        return np.array(sorted(idx))

    def fit_cols(self, cols: np.ndarray, beta0=None) -> IrlsState:
        return irls(self.Xs[:, cols], self.y, beta0, max_iter=self.max_iter, tol=self.tol)

    def evaluate(self, cur_cols, state: IrlsState, cand_cols: list[np.ndarray],
                 warm: list[np.ndarray]) -> list[tuple[float, np.ndarray] | None]:
        """Converged (deviance, beta) per candidate column set, None on failure."""
        y = self.y
        U = np.unique(np.concatenate([cur_cols] + cand_cols))
        XU = self.Xs[:, U]
        eta_cur = self.Xs[:, cur_cols] @ state.beta
        mu = expit(eta_cur)
        G = (XU * (mu * (1.0 - mu))[:, None]).T @ XU
        n, m = XU.shape
        local = [np.searchsorted(U, c) for c in cand_cols]
        out: list = [None] * len(cand_cols)
        chunk = max(1, _CHUNK_CELLS // max(n, 1))
        for start in range(0, len(cand_cols), chunk):
            ids = list(range(start, min(start + chunk, len(cand_cols))))
            B = np.zeros((m, len(ids)))
            H = np.zeros((len(ids), m, m))
            ok = np.ones(len(ids), dtype=bool)
            by_size: dict[int, list[int]] = {}
            for k, c in enumerate(ids):
                B[local[c], k] = warm[c]
                if len(local[c]) >= n:
                    ok[k] = False
                else:
                    by_size.setdefault(len(local[c]), []).append(k)
            for ks in by_size.values():
                A = np.stack([local[ids[k]] for k in ks])
                try:
                    inv = np.linalg.inv(G[A[:, :, None], A[:, None, :]])
                except np.linalg.LinAlgError:
                    inv = None
                for r, k in enumerate(ks):
                    a = A[r]
                    if inv is not None and np.isfinite(inv[r]).all():
                        H[k][np.ix_(a, a)] = inv[r]
                    else:
                        try:
                            H[k][np.ix_(a, a)] = np.linalg.inv(G[np.ix_(a, a)])
                        except np.linalg.LinAlgError:
                            ok[k] = False
            done, B = self._chord(XU, y, B, H, ok)
            for k, c in enumerate(ids):
                a = local[c]
                if ok[k] and done[0][k]:
                    out[c] = (float(done[1][k]), B[a, k].copy())
                else:
                    try:
                        st = self.fit_cols(cand_cols[c], warm[c] if ok[k] else None)
                    except (np.linalg.LinAlgError, ValueError) as exc:
                        log.info("candidate fit failed: %s", exc)
                        continue
                    if st.converged and np.isfinite(st.deviance):
                        out[c] = (st.deviance, st.beta)
        return out

    def _chord(self, XU, y, B, H, ok):
        eta = XU @ B
        dev = -2.0 * loglik_from_eta(eta, y)
        converged = np.zeros(B.shape[1], dtype=bool)
        active = ok.copy()
        for _ in range(self.chord_iter):
            idx = np.flatnonzero(active)
            if len(idx) == 0:
                break
            S = XU.T @ (y[:, None] - expit(eta[:, idx]))
            D = np.einsum("kij,jk->ik", H[idx], S)
            dec = np.einsum("ik,ik->k", S, D)
            dX = XU @ D
            f = np.ones(len(idx))
            for _h in range(11):
                eta_new = eta[:, idx] + dX * f
                dev_new = -2.0 * loglik_from_eta(eta_new, y)
                bad = ~(np.isfinite(dev_new) & (dev_new <= dev[idx] + 1e-12 * np.abs(dev[idx])))
                if not bad.any():
                    break
                f[bad] /= 2.0
            moved = ~bad
            sel = idx[moved]
            B[:, sel] += D[:, moved] * f[moved]
            eta[:, sel] = eta_new[:, moved]
            dev[sel] = dev_new[moved]
            small = dec <= self.chord_tol * (1.0 + np.abs(dev[idx]))
            converged[idx[small & moved]] = True
            active[idx[small | bad]] = False
        return (converged, dev), B


def _solve(A, b):
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


def stepwise_select(design: DesignMatrix, start: Sequence[Term] | None = None,
                    direction: str = "both", k_penalty: float = 2.0,
                    scope: Sequence[Term] | None = None, hierarchical: bool = True,
                    max_steps: int = 10_000) -> StepwiseResult:
    """Greedy hill-climb on ``deviance + k_penalty * (number of coefficients)``.

    ``design`` holds the columns of every scope term; ``start`` defaults to
    the full scope.  Each step applies the move with the largest decrease;
    equal criteria prefer the smaller model, then the earlier scope term.
    The search stops when no allowed move lowers the criterion.
    """
    if direction not in ("backward", "both"):
        raise ValueError("direction must be 'backward' or 'both'")
    scope = tuple(design.terms if scope is None else scope)
    missing = set(scope) - set(design.terms)
    if missing:
        raise KeyError(f"scope terms missing from design: {sorted(t.name for t in missing)}")
    current = list(scope if start is None else start)
    if set(current) - set(scope):
        raise ValueError("start model must lie within scope")
    keys = [t.conflict_key for t in current]
    if len(set(keys)) != len(keys):
        raise ValueError("start model holds overlapping terms (x and poly(x))")

    eng = _Engine(design)
    order = {t: i for i, t in enumerate(scope)}
    current.sort(key=order.__getitem__)
    cur_cols = eng.cols(current)
    state = eng.fit_cols(cur_cols)
    crit = state.deviance + k_penalty * len(cur_cols)
    trace = [{"step": 0, "move": "start", "term": "", "criterion": crit}]

    for step in range(1, max_steps + 1):
        moves = allowed_moves(current, scope, direction, hierarchical)
        if not moves:
            break
        cand_terms, cand_cols, warm = [], [], []
        cov = None
        for kind, t in moves:
            if kind == "drop":
                new = [u for u in current if u != t]
                drop = np.searchsorted(cur_cols, eng.slices[t])
                keep = np.ones(len(cur_cols), dtype=bool)
                keep[drop] = False
                cols = cur_cols[keep]
                if cov is None:
                    cov = np.linalg.pinv(state.info)
                # Wald adjustment of the remaining coefficients
                b = state.beta[keep] - cov[np.ix_(keep, drop)] @ _solve(
                    cov[np.ix_(drop, drop)], state.beta[drop])
            else:
                new = sorted(current + [t], key=order.__getitem__)
                cols = np.sort(np.concatenate([cur_cols, eng.slices[t]]))
                b = np.zeros(len(cols))
                b[np.searchsorted(cols, cur_cols)] = state.beta
            cand_terms.append(new)
            cand_cols.append(cols)
            warm.append(b)
        results = eng.evaluate(cur_cols, state, cand_cols, warm)

        scored = []
        for i, ((kind, t), res) in enumerate(zip(moves, results)):
            if res is None:
                log.info("skipping %s %s: fit failed", kind, t.name)
                continue
            c = res[0] + k_penalty * len(cand_cols[i])
            scored.append((c, len(cand_cols[i]), order[t], i))
        if not scored:
            break
        tol = 1e-8 * max(1.0, abs(crit))
        best_c = min(s[0] for s in scored)
        tied = [s for s in scored if s[0] <= best_c + tol]
        c, _, _, i = min(tied, key=lambda s: (s[1], s[2]))
        if not c < crit - tol:
            break
        kind, t = moves[i]
        current = cand_terms[i]
        cur_cols = cand_cols[i]
        state = eng.fit_cols(cur_cols, results[i][1])
        crit = state.deviance + k_penalty * len(cur_cols)
        trace.append({"step": step, "move": kind, "term": t.name, "criterion": crit})
        log.debug("step %d: %s %s -> %.4f", step, kind, t.name, crit)

    sub = design.subset(current)
    fit = summarize(sub, eng.scaling.subset(cur_cols), state)
    return StepwiseResult(fit=fit, terms=tuple(current), criterion=crit,
                          k_penalty=k_penalty, trace=trace)
