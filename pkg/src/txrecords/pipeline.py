"""Three-step model building: local station models, consensus filter, global models.

1. Per station, backward selection (penalty 2) inside four predictor
   configurations; the configuration with the lowest AIC wins.
2. Terms significant (|z| > 2) in enough local models survive and seed a
   pooled all-station model (M1) selected in both directions with the
   chi-square(1) 0.999 quantile as penalty.
3. M1 is extended with interactions between its terms and station
   attributes (M2-M5) and reduced again with the same penalty.

Rows of the first year (records by definition) never enter a fit.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .data import GEO_BASE_COLUMNS, GEO_LAG_COLUMNS, CovariateTable
from .glm import (ConvergenceError, GlmFit, StepwiseResult, Term, build_design, chi_sq_quantile,
                  fit_logistic, predict_prob, stepwise_select)
from .validation import auc_by_group, roc_auc, temporal_split

log = logging.getLogger(__name__)

BASE_TERMS = tuple(Term(c) for c in GEO_BASE_COLUMNS)
LAG_TERMS = tuple(Term(c) for c in GEO_LAG_COLUMNS)
POLY_TERMS = tuple(Term(c, poly=True) for c in GEO_BASE_COLUMNS)
CANDIDATE_TERMS = BASE_TERMS + LAG_TERMS + POLY_TERMS

CONFIGURATIONS = {
    "base": BASE_TERMS,
    "base+lag": BASE_TERMS + LAG_TERMS,
    "base+poly": POLY_TERMS,
    "base+lag+poly": POLY_TERMS + LAG_TERMS,
}

ATTRIBUTE_SETS = {
    "M2": ("LAT", "LON"),
    "M3": ("TX_MEAN", "TX_SD"),
    "M4": ("ALT", "DIST_COAST"),
    "M5": ("LAT", "LON", "TX_MEAN", "TX_SD", "ALT", "DIST_COAST"),
}


@dataclass(frozen=True)
class PipelineConfig:
    train_len: int = 51
    local_k: float = 2.0
    z_thresh: float = 2.0
    m_min: int = 12
    k_penalty_prob: float = 0.999
    include_m6: bool = False
    jobs: int = 1

    @property
    def global_k(self) -> float:
        return chi_sq_quantile(self.k_penalty_prob, 1)


# --------------------------------------------------------------------------- #
# Rows
# --------------------------------------------------------------------------- #

def fit_rows(table: CovariateTable, train_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Training and test masks restricted to t >= 2 and complete geopotential columns.

    All models share these rows so that their AIC values are comparable.
    """
    train, test = temporal_split(table, train_len)
    ok = (table.t >= 2) & table.complete_rows(GEO_BASE_COLUMNS + GEO_LAG_COLUMNS)
    return train & ok, test & ok


def _frame(table: CovariateTable, mask: np.ndarray) -> dict[str, np.ndarray]:
    return {k: v[mask] for k, v in table.columns.items()}


# --------------------------------------------------------------------------- #
# Step 1: local models
# --------------------------------------------------------------------------- #

@dataclass
class LocalModelResult:
    station_id: str
    configuration: str
    fit: GlmFit
    terms: tuple[Term, ...]
    aic: float
    configuration_aic: dict[str, float]

    def z_scores(self) -> dict[str, list[float]]:
        return {t.name: [float(v) for v in z] for t, z in self.fit.term_z().items()}

    def to_dict(self) -> dict:
        return {"station_id": self.station_id, "configuration": self.configuration,
                "aic": float(self.aic),
                "configuration_aic": {k: float(v) for k, v in self.configuration_aic.items()},
                "z": self.z_scores(), "model": self.fit.to_dict()}


def fit_local_station(station_id: str, frame: Mapping[str, np.ndarray], y: np.ndarray,
                      k_penalty: float = 2.0) -> LocalModelResult | None:
    """Backward selection in each configuration; keep the lowest-AIC reduction."""
    if y.size == 0:
        log.warning("station %s excluded: no training rows", station_id)
        return None
    if y.min() == y.max():
        log.warning("station %s excluded: training response has a single class", station_id)
        return None
    results: dict[str, StepwiseResult] = {}
    for name, terms in CONFIGURATIONS.items():
        try:
            design = build_design(frame, terms, y)
            results[name] = stepwise_select(design, direction="backward", k_penalty=k_penalty)
        except (ValueError, np.linalg.LinAlgError, ConvergenceError) as exc:
            log.warning("station %s, configuration %s failed: %s", station_id, name, exc)
    if not results:
        log.warning("station %s excluded: no configuration could be fitted", station_id)
        return None
    aics = {name: r.fit.aic for name, r in results.items()}
    best = min(aics, key=lambda n: (aics[n], list(CONFIGURATIONS).index(n)))
    r = results[best]
    return LocalModelResult(station_id, best, r.fit, r.terms, aics[best], aics)


def _local_task(args):
    return fit_local_station(*args)


def fit_local_models(table: CovariateTable, train_mask: np.ndarray, k_penalty: float = 2.0,
                     jobs: int = 1) -> dict[str, LocalModelResult | None]:
    """One local model per station keyed by station id (None when excluded)."""
    tasks = []
    for s, sid in enumerate(table.station_ids):
        m = train_mask & (table.station == s)
        tasks.append((sid, _frame(table, m), table.response[m].astype(float), k_penalty))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_local_task, tasks))
    else:
        out = [_local_task(t) for t in tasks]
    return dict(zip(table.station_ids, out))


# --------------------------------------------------------------------------- #
# Step 2: consensus and M1
# --------------------------------------------------------------------------- #

@dataclass
class ConsensusReport:
    counts: dict[Term, int]
    survivors: tuple[Term, ...]
    z_thresh: float
    m_min: int
    n_models: int

    def rows(self) -> list[dict]:
        surv = set(self.survivors)
        return [{"term": t.name, "count": c, "survivor": t in surv} for t, c in self.counts.items()]


def consensus_filter(locals_: Sequence[LocalModelResult], z_thresh: float = 2.0, m_min: int = 12,
                     candidates: Sequence[Term] = CANDIDATE_TERMS) -> ConsensusReport:
    """Count, per candidate term, the local models where it has |z| > z_thresh.

    A quadratic pair counts once when either component passes.  Survivors
    need at least ``m_min`` votes and are ordered by count, then candidate order.
    """
    locals_ = [r for r in locals_ if r is not None]
    if not locals_:
        raise ValueError("no local models")
    counts = {t: 0 for t in candidates}
    for r in locals_:
        for t, z in r.fit.term_z().items():
            if t in counts and np.any(np.abs(z) > z_thresh):
                counts[t] += 1
    order = {t: i for i, t in enumerate(candidates)}
    surv = sorted((t for t, c in counts.items() if c >= m_min), key=lambda t: (-counts[t], order[t]))
    return ConsensusReport(counts, tuple(surv), z_thresh, m_min, len(locals_))


def _start_without_conflicts(scope: Sequence[Term]) -> list[Term]:
    """Drop a linear term whose quadratic pair is also in scope (the pair nests it)."""
    poly_keys = {t.conflict_key for t in scope if t.poly}
    return [t for t in scope if t.poly or t.conflict_key not in poly_keys]


def _intercept_only(y: np.ndarray, k_penalty: float) -> StepwiseResult:
    fit = fit_logistic(build_design({}, [], y))
    return StepwiseResult(fit=fit, terms=(), criterion=fit.deviance + k_penalty * fit.k,
                          k_penalty=k_penalty, trace=[])


def fit_global_m1(table: CovariateTable, survivors: Sequence[Term], train_mask: np.ndarray,
                  k_penalty: float) -> StepwiseResult:
    """Pooled all-station model selected in both directions over the survivors."""
    y = table.response[train_mask].astype(float)
    if not survivors:
        log.warning("no consensus survivors: M1 is intercept-only")
        return _intercept_only(y, k_penalty)
    design = build_design(_frame(table, train_mask), survivors, y)
    return stepwise_select(design, start=_start_without_conflicts(survivors), direction="both",
                           k_penalty=k_penalty)


def interaction_scope(m1_terms: Sequence[Term], attrs: Sequence[str]) -> list[Term]:
    geo = [t for t in m1_terms if t.attr is None]
    return geo + [Term(a) for a in attrs] + [t.interact(a) for t in geo for a in attrs]


def fit_interaction_suite(table: CovariateTable, m1_terms: Sequence[Term], train_mask: np.ndarray,
                          k_penalty: float,
                          attribute_sets: Mapping[str, Sequence[str]] = ATTRIBUTE_SETS
                          ) -> dict[str, StepwiseResult]:
    """M1 plus attribute main effects and term x attribute interactions, reduced stepwise."""
    y = table.response[train_mask].astype(float)
    frame = _frame(table, train_mask)
    out = {}
    for name, attrs in attribute_sets.items():
        scope = interaction_scope(m1_terms, attrs)
        design = build_design(frame, scope, y)
        out[name] = stepwise_select(design, direction="both", k_penalty=k_penalty)
        log.info("%s: %d terms retained", name, len(out[name].terms))
    return out


def fit_global_m6(table: CovariateTable, train_mask: np.ndarray, k_penalty: float) -> StepwiseResult:
    """Pooled selection over all candidate groups without the local-model filter."""
    y = table.response[train_mask].astype(float)
    design = build_design(_frame(table, train_mask), CANDIDATE_TERMS, y)
    return stepwise_select(design, start=POLY_TERMS + LAG_TERMS, direction="both",
                           k_penalty=k_penalty)


# --------------------------------------------------------------------------- #
# Model comparison
# --------------------------------------------------------------------------- #

def model_criteria(name: str, fit: GlmFit, table: CovariateTable, test_mask: np.ndarray,
                   dist_coast: Sequence[float]) -> dict:
    probs = predict_prob(fit, _frame(table, test_mask))
    labels = table.response[test_mask]
    groups = auc_by_group(probs, labels, table.station[test_mask], dist_coast)
    return {"model": name, "auc": roc_auc(probs, labels).auc, "k": fit.k,
            "auc_coastal": groups["coastal"], "auc_inland": groups["inland"], "aic": fit.aic}


def select_best_model(criteria: Sequence[Mapping]) -> tuple[str, list[Mapping]]:
    """Highest AUC; ties go to fewer coefficients, lower AIC, then higher coastal AUC.

    AUC and AIC are compared after rounding (12 and 6 decimals) so that two
    routes to the same fitted model do not split on floating-point noise;
    remaining ties keep the input order.
    """
    ranked = sorted(criteria, key=lambda c: (-round(c["auc"], 12), c["k"], round(c["aic"], 6),
                                             -round(c["auc_coastal"], 12)))
    return ranked[0]["model"], ranked


# --------------------------------------------------------------------------- #
# Orchestration
# --------------------------------------------------------------------------- #

@dataclass
class PipelineResult:
    config: PipelineConfig
    locals_: dict[str, LocalModelResult | None]
    consensus: ConsensusReport
    models: dict[str, StepwiseResult]
    criteria: list[dict]
    best: str
    train_mask: np.ndarray = field(repr=False)
    test_mask: np.ndarray = field(repr=False)

    @property
    def excluded(self) -> list[str]:
        return [k for k, v in self.locals_.items() if v is None]


def run_pipeline(table: CovariateTable, dist_coast: Sequence[float],
                 config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    train, test = fit_rows(table, config.train_len)
    locals_ = fit_local_models(table, train, config.local_k, config.jobs)
    if all(v is None for v in locals_.values()):
        raise ValueError("every station was excluded from local modelling")
    consensus = consensus_filter(list(locals_.values()), config.z_thresh, config.m_min)
    k = config.global_k
    models = {"M1": fit_global_m1(table, consensus.survivors, train, k)}
    if models["M1"].terms:
        models.update(fit_interaction_suite(table, models["M1"].terms, train, k))
    else:
        log.warning("M1 has no terms; interaction models are skipped")
    if config.include_m6:
        models["M6"] = fit_global_m6(table, train, k)
    criteria = [model_criteria(name, r.fit, table, test, dist_coast) for name, r in models.items()]
    best, _ = select_best_model(criteria)
    return PipelineResult(config, locals_, consensus, models, criteria, best, train, test)


def model_document(name: str, result: StepwiseResult) -> dict:
    return {"model": name, "k_penalty": float(result.k_penalty),
            "criterion": float(result.criterion), **result.fit.to_dict(),
            "trace": result.trace}


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def write_pipeline_outputs(result: PipelineResult, outdir: str | Path) -> None:
    out = Path(outdir)
    (out / "local_models").mkdir(parents=True, exist_ok=True)
    for sid, r in result.locals_.items():
        doc = r.to_dict() if r is not None else {"station_id": sid, "excluded": True}
        _dump(doc, out / "local_models" / f"{sid}.json")
    pd.DataFrame(result.consensus.rows()).to_csv(out / "consensus.csv", index=False)
    for name, r in result.models.items():
        _dump(model_document(name, r), out / f"{name.lower()}.json")
    pd.DataFrame(result.criteria).to_csv(out / "criteria.csv", index=False)
    _dump({"best_model": result.best, "excluded_stations": result.excluded,
           "survivors": [t.name for t in result.consensus.survivors],
           "global_k_penalty": result.config.global_k}, out / "pipeline.json")


def load_model(path: str | Path) -> GlmFit:
    return GlmFit.from_dict(json.loads(Path(path).read_text()))
