"""Binary logistic regression by Fisher scoring (IRLS).

Columns are centred and scaled internally so that raw geopotential values of
order 1e4 and their products with station attributes stay well conditioned;
coefficients and their covariance are mapped back to the raw scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .terms import DesignMatrix, PolyBasis, Term, build_design

log = logging.getLogger(__name__)

SEPARATION_LIMIT = 15.0


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, fit: "GlmFit | None" = None):
        super().__init__(message)
        self.fit = fit


def expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def loglik_from_eta(eta, y) -> np.ndarray | float:
    """Bernoulli log-likelihood; works column-wise on 2-D ``eta``."""
    softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    if eta.ndim == 2:
        return y @ eta - softplus.sum(axis=0)
    return float(y @ eta - softplus.sum())


@dataclass(frozen=True)
class Scaling:
    """Per-column centring and scaling; column 0 is the intercept."""

    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def of(cls, X: np.ndarray) -> "Scaling":
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        mean[0], sd[0] = 0.0, 1.0
        const = np.flatnonzero(sd[1:] <= 1e-12 * np.maximum(1.0, np.abs(mean[1:]))) + 1
        if len(const):
            raise ValueError(f"constant design column(s) at positions {const.tolist()}")
        return cls(mean, sd)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.sd

    def subset(self, cols) -> "Scaling":
        return Scaling(self.mean[cols], self.sd[cols])

    def to_raw(self, beta, cov=None):
        A = np.diag(1.0 / self.sd)
        A[0, 1:] = -self.mean[1:] / self.sd[1:]
        b = A @ beta
        return (b, None) if cov is None else (b, A @ cov @ A.T)


@dataclass
class IrlsState:
    beta: np.ndarray
    deviance: float
    n_iter: int
    converged: bool
    info: np.ndarray


def newton_step(Xs, y, eta):
    mu = expit(eta)
    w = mu * (1.0 - mu)
    info = (Xs * w[:, None]).T @ Xs
    score = Xs.T @ (y - mu)
    try:
        step = np.linalg.solve(info, score)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(info, score, rcond=None)[0]
    return step, info


def irls(Xs: np.ndarray, y: np.ndarray, beta0=None, max_iter: int = 50,
         tol: float = 1e-8, max_halving: int = 10) -> IrlsState:
    """Fisher scoring on a standardized design, with step halving.

    Stops when the relative deviance change falls below ``tol``.
    """
    p = Xs.shape[1]
    if beta0 is None:
        ybar = float(np.clip(y.mean(), 1e-10, 1 - 1e-10))
        beta = np.zeros(p)
        beta[0] = math.log(ybar / (1.0 - ybar))
    else:
        beta = np.array(beta0, dtype=float)
    eta = Xs @ beta
    dev = -2.0 * loglik_from_eta(eta, y)
    converged = False
    it = 0
    info = None
    while it < max_iter:
        step, info = newton_step(Xs, y, eta)
        it += 1
        for _ in range(max_halving + 1):
            cand = beta + step
            eta_new = Xs @ cand
            dev_new = -2.0 * loglik_from_eta(eta_new, y)
            if np.isfinite(dev_new) and dev_new <= dev + 1e-12 * abs(dev):
                break
            step = step / 2.0
        change = abs(dev_new - dev) / (abs(dev_new) + 0.1)
        beta, eta, dev = cand, eta_new, dev_new
        if change < tol:
            converged = True
            break
    mu = expit(eta)
    info = (Xs * (mu * (1.0 - mu))[:, None]).T @ Xs
    return IrlsState(beta=beta, deviance=float(dev), n_iter=it, converged=converged, info=info)


@dataclass
class GlmFit:
    """Summary of one logistic fit; coefficients are on the raw covariate scale."""

    terms: tuple[Term, ...]
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    deviance: float
    null_deviance: float
    n_obs: int
    n_iter: int
    converged: bool = True
    separation: bool = False
    bases: dict[str, PolyBasis] = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        return self.coef / self.se

    @property
    def loglik(self) -> float:
        return -0.5 * self.deviance

    @property
    def k(self) -> int:
        return len(self.coef)

    @property
    def aic(self) -> float:
        return self.deviance + 2.0 * self.k

    def term_z(self) -> dict[Term, np.ndarray]:
        out, pos = {}, 1
        z = self.z
        for t in self.terms:
            out[t] = z[pos:pos + t.width]
            pos += t.width
        return out

    def to_dict(self) -> dict:
        return {
            "terms": [t.name for t in self.terms],
            "coefficients": [
                {"name": n, "estimate": float(b), "se": float(s), "z": float(b / s)}
                for n, b, s in zip(self.names, self.coef, self.se)
            ],
            "deviance": float(self.deviance),
            "null_deviance": float(self.null_deviance),
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "n_obs": int(self.n_obs),
            "k": int(self.k),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "separation": bool(self.separation),
            "poly_bases": [b.to_dict() for _, b in sorted(self.bases.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GlmFit":
        coefs = d["coefficients"]
        return cls(
            terms=tuple(Term.parse(n) for n in d["terms"]),
            names=tuple(c["name"] for c in coefs),
            coef=np.array([c["estimate"] for c in coefs]),
            se=np.array([c["se"] for c in coefs]),
            deviance=d["deviance"], null_deviance=d["null_deviance"], n_obs=d["n_obs"],
            n_iter=d["n_iter"], converged=d["converged"], separation=d["separation"],
            bases={b["source"]: PolyBasis.from_dict(b) for b in d["poly_bases"]},
        )


def null_deviance(y) -> float:
    y = np.asarray(y, dtype=float)
    p = y.mean()
    if p in (0.0, 1.0):
        return 0.0
    n = len(y)
    return -2.0 * n * (p * math.log(p) + (1 - p) * math.log(1 - p))


def _check_response(y, k):
    y = np.asarray(y, dtype=float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("response must be binary")
    if y.min() == y.max():
        raise ValueError("response has a single class")
    if len(y) <= k:
        raise ValueError(f"n_obs={len(y)} must exceed the number of coefficients {k}")
    return y


def summarize(design: DesignMatrix, scaling: Scaling, state: IrlsState) -> GlmFit:
    try:
        cov_std = np.linalg.inv(state.info)
    except np.linalg.LinAlgError:
        cov_std = np.linalg.pinv(state.info)
    coef, cov = scaling.to_raw(state.beta, cov_std)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    separation = bool(np.any(np.abs(state.beta) > SEPARATION_LIMIT))
    if separation:
        log.warning("possible quasi-separation: |coefficient| > %s on standardized columns",
                    SEPARATION_LIMIT)
    return GlmFit(terms=design.terms, names=design.names, coef=coef, se=se,
                  deviance=state.deviance, null_deviance=null_deviance(design.y),
                  n_obs=design.n_obs, n_iter=state.n_iter, converged=state.converged,
                  separation=separation, bases=dict(design.bases))


def fit_logistic(design: DesignMatrix, max_iter: int = 50, tol: float = 1e-8,
                 beta0=None) -> GlmFit:
    """Maximum-likelihood logistic fit.

    ``beta0`` is an optional warm start on the raw scale.
    Raises :class:`ConvergenceError` (carrying the last iterate) when
    ``max_iter`` is exhausted.
    """
    y = _check_response(design.y, design.X.shape[1])
    scaling = Scaling.of(design.X)
    Xs = scaling.apply(design.X)
    b0 = None
    if beta0 is not None:
        # raw -> standardized: b_std_j = b_j * sd_j, intercept absorbs the means
        b = np.asarray(beta0, dtype=float)
        b0 = b * scaling.sd
        b0[0] = b[0] + b[1:] @ scaling.mean[1:]
    state = irls(Xs, y, b0, max_iter=max_iter, tol=tol)
    fit = summarize(design, scaling, state)
    if not state.converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations", fit)
    return fit


def aic_penalized(fit: GlmFit, k_penalty: float) -> float:
    """-2 loglik + k_penalty * (number of coefficients)."""
    return -2.0 * fit.loglik + k_penalty * fit.k


def predict_prob(fit: GlmFit, frame: Mapping[str, np.ndarray]) -> np.ndarray:
    """Fitted probabilities for new rows, reusing the training polynomial bases."""
    design = build_design(frame, fit.terms, bases=fit.bases)
    return expit(design.X @ fit.coef)


def linear_predictor(fit: GlmFit, frame: Mapping[str, np.ndarray]) -> np.ndarray:
    design = build_design(frame, fit.terms, bases=fit.bases)
    return design.X @ fit.coef
