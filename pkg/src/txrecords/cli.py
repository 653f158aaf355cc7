"""Command-line entry point: ``txrecords <subcommand> [options]``.

Data products go to files under the output directory; logs go to stderr.
Failures print a one-line JSON object ``{"error": ..., "message": ...}`` to
stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import pandas as pd

from . import records as rs
from . import validation as va
from .config import ConfigError, RunConfig
from .data import (CovariateTable, build_covariate_table, load_geofield, load_station_panel)
from .glm import GlmFit, predict_prob
from .pipeline import (PipelineConfig, fit_rows, run_pipeline, write_pipeline_outputs)
from .synth import SynthSpec, generate

log = logging.getLogger("txrecords")

MODEL_FILES = ("m1", "m2", "m3", "m4", "m5", "m6")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #

def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_csv(rows, path: Path) -> None:
    pd.DataFrame(rows).to_csv(path, index=False)


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise ConfigError(f"missing required input(s): {missing}")


def _load_inputs(cfg: RunConfig):
    _require(cfg, "station_data", "station_meta", "geofield")
    panel = load_station_panel(cfg.station_data, cfg.station_meta)
    gf = load_geofield(cfg.geofield, unit=cfg.unit)
    return panel, gf


def _load_table(cfg: RunConfig) -> CovariateTable:
    cached = Path(cfg.table) if cfg.table else cfg.out / "table.npz"
    if cached.exists():
        return CovariateTable.load(cached)
    panel, gf = _load_inputs(cfg)
    return build_covariate_table(panel, gf)


def _station_dist_coast(table: CovariateTable) -> np.ndarray:
    out = np.full(len(table.station_ids), np.nan)
    out[table.station[::-1]] = table.columns["DIST_COAST"][::-1]
    return out


def _load_model(cfg: RunConfig, name: str) -> GlmFit:
    path = cfg.out / f"{name.lower()}.json"
    if not path.exists():
        raise CliError(f"model file {path} not found; run 'fit' first")
    return GlmFit.from_dict(json.loads(path.read_text()))


def _available_models(cfg: RunConfig) -> list[str]:
    return [m.upper() for m in MODEL_FILES if (cfg.out / f"{m}.json").exists()]


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #

def cmd_ingest(cfg: RunConfig, args) -> None:
    panel, gf = _load_inputs(cfg)
    table = build_covariate_table(panel, gf)
    table.save(cfg.out / "table.npz")
    _dump_json({"stations": list(table.station_ids), "years": [int(panel.years[0]), int(panel.years[-1])],
                "days": int(len(panel.day_offsets)), "rows": len(table),
                "records": int(table.response.sum())}, cfg.out / "ingest.json")


def cmd_eda(cfg: RunConfig, args) -> None:
    panel, gf = _load_inputs(cfg)
    rec = rs.record_indicators(panel)
    T, L, S = rec.shape
    out = cfg.out
    tp = rs.t_phat_series(rec)
    _write_csv({"t": tp.x, "t_phat": tp.raw, "loess": tp.smooth}, out / "t_phat.csv")
    lor = rs.lor_series(rec)
    _write_csv({"t": lor.x, "lor": lor.raw, "loess": lor.smooth}, out / "lor.csv")
    pr = rs.daily_record_proportion(rec)
    tt, dd = np.meshgrid(rec.years, rec.day_offsets, indexing="ij")
    _write_csv({"year": tt.ravel(), "day_offset": dd.ravel(), "proportion": pr.ravel()},
               out / "pr_heatmap.csv")
    bench = rs.stationary_benchmarks(T, S)
    _write_csv({"t": bench.t, "empirical": rs.no_record_empirical(rec), "stationary": bench.no_record},
               out / "no_record.csv")
    _write_csv(rs.jaccard_pairs(rec), out / "jaccard_pairs.csv")
    rows = []
    for s, st in enumerate(rec.stations):
        res = rs.nt_test_station(rec, s)
        rows.append({"station_id": st.station_id, "n_records": res.n_records, "expected": res.expected,
                     "variance": res.variance, "z": res.z, "p": res.p})
    _write_csv(rows, out / "nt_test.csv")
    trend = rs.standardized_trend_panel(panel, gf) if _covers_reference(panel.years) else {}
    if trend:
        cols = {"year": trend["tx"].x}
        for k, ser in trend.items():
            cols[k] = ser.raw
            cols[f"{k}_loess"] = ser.smooth
        _write_csv(cols, out / "trend_panel.csv")
    window = (max(int(panel.years[0]), 1984), int(panel.years[-1]))
    _write_csv(rs.conditional_distribution_summary(gf, rec, window), out / "conditional_boxplot.csv")
    t_first = min(25, T)
    band = rs.jaccard_null_band(t_first, T, L, n_sim=max(cfg.n_sim, 1000), seed=cfg.seed, jobs=cfg.jobs)
    _dump_json({"stations": S, "years": T, "days": L,
                "stationary_expected_records": float(bench.harmonic[-1]),
                "observed_mean_records": float(rec.indicators.sum(axis=0)[rec.observed.any(axis=0)].mean()),
                "jaccard_null": {"t_first": t_first, "t_last": T, "mean": band.mean, "low": band.low,
                                 "high": band.high, "n_sim": band.n_sim}},
               out / "eda.json")


def _covers_reference(years) -> bool:
    years = np.asarray(years)
    return int(((years >= 1981) & (years <= 2010)).sum()) >= 2


def cmd_fit(cfg: RunConfig, args) -> None:
    table = _load_table(cfg)
    pcfg = PipelineConfig(train_len=cfg.train_len, z_thresh=cfg.z_thresh, m_min=cfg.m_min,
                          k_penalty_prob=cfg.k_penalty_prob, include_m6=cfg.include_m6, jobs=cfg.jobs)
    result = run_pipeline(table, _station_dist_coast(table), pcfg)
    write_pipeline_outputs(result, cfg.out)


def cmd_validate(cfg: RunConfig, args) -> None:
    table = _load_table(cfg)
    models = _available_models(cfg)
    if not models:
        raise CliError("no fitted models found; run 'fit' first")
    _, test = fit_rows(table, cfg.train_len)
    frame = {k: v[test] for k, v in table.columns.items()}
    labels = table.response[test]
    station = table.station[test]
    dist = _station_dist_coast(table)
    report: dict = {"test_rows": int(test.sum()), "n_sim": cfg.n_sim, "seed": cfg.seed, "models": {}}
    probs_by_model = {}
    for name in models:
        fit = _load_model(cfg, name)
        probs = predict_prob(fit, frame)
        probs_by_model[name] = probs
        roc = va.roc_auc(probs, labels)
        _write_csv({"threshold": roc.thresholds, "fpr": roc.fpr, "tpr": roc.tpr},
                   cfg.out / f"roc_{name.lower()}.csv")
        groups = va.auc_by_group(probs, labels, station, dist)
        st_auc = va.station_aucs(probs, labels, station, len(table.station_ids))
        report["models"][name] = {
            "auc": roc.auc, "k": fit.k, "aic": fit.aic,
            "auc_coastal": groups["coastal"], "auc_inland": groups["inland"],
            "station_auc": {sid: (None if np.isnan(a) else float(a))
                            for sid, a in zip(table.station_ids, st_auc)},
        }
    chosen = args.model.upper() if args.model else _best_model(cfg, models)
    if chosen not in probs_by_model:
        raise CliError(f"model {chosen} not available")
    sub = table.select(test)
    p_cube = va.table_to_cube(sub, probs_by_model[chosen], fill=0.0)
    y_cube = va.table_to_cube(sub, labels.astype(bool), fill=False)
    streaks = va.streak_validation(p_cube, y_cube, n_sim=cfg.n_sim, seed=cfg.seed,
                                   day_offsets=table.day_offsets, jobs=cfg.jobs)
    _write_csv(streaks.rows(), cfg.out / "streaks.csv")
    S = p_cube.shape[0]
    conc = va.concurrence_validation(p_cube.reshape(S, -1), y_cube.reshape(S, -1),
                                     n_sim=cfg.n_sim, seed=cfg.seed, jobs=cfg.jobs)
    _write_csv(conc.rows(table.station_ids), cfg.out / "concurrence.csv")
    report["streak_model"] = chosen
    report["streaks"] = streaks.rows()
    report["concurrence_correlation"] = conc.correlation
    _dump_json(report, cfg.out / "validation_report.json")


def _best_model(cfg: RunConfig, models: list[str]) -> str:
    path = cfg.out / "pipeline.json"
    if path.exists():
        best = json.loads(path.read_text()).get("best_model")
        if best in models:
            return best
    return models[0]


def cmd_predict(cfg: RunConfig, args) -> None:
    _require(cfg, "geofield")
    gf = load_geofield(cfg.geofield, unit=cfg.unit)
    fit = _load_model(cfg, args.model)
    surfaces = None
    if args.surfaces:
        with np.load(args.surfaces) as z:
            surfaces = {k: z[k] for k in z.files}
    rows = va.spatial_predict_grid(fit, gf, args.date, surfaces)
    _write_csv(rows, cfg.out / f"grid_{args.date}.csv")


def cmd_simulate(cfg: RunConfig, args) -> None:
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    if args.kind or args.sim_seed is not None:
        d = spec.to_dict()
        if args.kind:
            d["kind"] = args.kind
            d["params"] = {}
        if args.sim_seed is not None:
            d["seed"] = args.sim_seed
        spec = SynthSpec.from_dict(d)
    generate(spec).write(cfg.out)


def cmd_threshold(cfg: RunConfig, args) -> None:
    if not 0.0 < args.tnr <= 1.0:
        raise CliError("tnr must lie in (0, 1]")
    table = _load_table(cfg)
    _, test = fit_rows(table, cfg.train_len)
    fit = _load_model(cfg, args.model)
    probs = predict_prob(fit, {k: v[test] for k, v in table.columns.items()})
    roc = va.roc_auc(probs, table.response[test])
    thr = roc.threshold_at_fpr(1.0 - args.tnr)
    i = int(np.flatnonzero(roc.thresholds == thr)[0])
    _dump_json({"model": args.model.upper(), "tnr": args.tnr, "threshold": thr,
                "fpr": float(roc.fpr[i]), "tpr": float(roc.tpr[i])},
               cfg.out / f"threshold_{args.model.lower()}.json")


COMMANDS = {"ingest": cmd_ingest, "eda": cmd_eda, "fit": cmd_fit, "validate": cmd_validate,
            "predict": cmd_predict, "simulate": cmd_simulate, "threshold": cmd_threshold}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="txrecords", description="Calendar-day Tx record modelling from geopotential fields.")
    p.add_argument("--version", action="version", version=f"txrecords {_package_version()}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--station-data", dest="station_data")
    common.add_argument("--station-meta", dest="station_meta")
    common.add_argument("--geofield", action="append", help="geopotential CSV (repeatable)")
    common.add_argument("--unit", choices=["m2/s2", "m"])
    common.add_argument("--table", help="cached covariate table (.npz)")
    common.add_argument("--out", dest="out_dir")
    common.add_argument("--train-len", dest="train_len", type=int)
    common.add_argument("--z-thresh", dest="z_thresh", type=float)
    common.add_argument("--m-min", dest="m_min", type=int)
    common.add_argument("--n-sim", dest="n_sim", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--m6", dest="include_m6", action="store_const", const=True)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("ingest", "eda", "fit"):
        sub.add_parser(name, parents=[common])
    v = sub.add_parser("validate", parents=[common])
    v.add_argument("--model", help="model used for streak and concurrence checks (default: best)")
    pr = sub.add_parser("predict", parents=[common])
    pr.add_argument("--date", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--surfaces", help=".npz of attribute surfaces on the grid (lat x lon)")
    sm = sub.add_parser("simulate", parents=[common])
    sm.add_argument("--spec", help="synth.json generator spec")
    sm.add_argument("--kind")
    sm.add_argument("--sim-seed", dest="sim_seed", type=int)
    th = sub.add_parser("threshold", parents=[common])
    th.add_argument("--tnr", type=float, default=0.95)
    th.add_argument("--model", default="M2")
    return p


CONFIG_KEYS = ("station_data", "station_meta", "geofield", "unit", "table", "out_dir", "train_len",
               "z_thresh", "m_min", "n_sim", "seed", "jobs", "include_m6")


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = RunConfig.load(args.config, {k: getattr(args, k) for k in CONFIG_KEYS})
        cfg.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
