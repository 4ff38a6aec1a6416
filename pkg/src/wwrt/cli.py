"""Command-line entry point: ``wwrt {simulate,elicit,fit,evaluate,summarize}``.

Exit status is 0 on success, 1 on invalid input or usage and 2 when the
numerics fail (e.g. the sampler diverges).
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import math
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bayes.fit import fit as run_fit
from .bayes.functionals import LEVELS, posterior_functionals
from .bayes.model import S_VARIANTS, Posterior
from .errors import NumericalFailure, ValidationError, WwrtError
from .evaluate import DeskSetup, MetricReport, desk_datasets, desk_truth, score_rt, step_to_daily
from .io import (
    RunConfig,
    config_hash,
    read_table,
    write_cases,
    write_table,
    write_wastewater,
)

log = logging.getLogger("wwrt")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
DEFAULT_EPOCH = "2024-01-01"
SUMMARY_HEADER = ["quantity", "time", "median"] + [f"{side}_{round(100 * lvl)}" for lvl in LEVELS for side in ("lower", "upper")]


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path} must hold a key: value mapping")
    return data


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ simulate


def _desk_setup(path) -> DeskSetup:
    if path is None:
        return DeskSetup()
    data = _load_yaml(path)
    known = {f.name for f in fields(DeskSetup)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown simulation keys: {sorted(unknown)}")
    for key in ("r0_times", "r0_values", "sample_times"):
        if key in data:
            data[key] = tuple(float(v) for v in data[key])
    return replace(DeskSetup(), **data)


def cmd_simulate(args) -> int:
    setup = _desk_setup(args.config)
    meta = {"command": "simulate", "setup": asdict(setup), "datasets": args.datasets, "epoch": args.epoch}
    epoch = dt.date.fromisoformat(args.epoch)
    out = _out_dir(args.out)
    truth = desk_truth(setup)
    datasets = desk_datasets(truth, args.datasets, seed=args.seed)

    rows = (tuple(float(v) for v in r[1:]) for r in truth.log.rows())
    write_table(
        out / "events.csv",
        ["individual", "infection", "onset", "recovery", "stop"],
        ((k, *r) for k, r in enumerate(rows)),
        seed=args.seed,
        config=meta,
    )
    write_table(out / "truth.csv", ["time", "rt"], zip(truth.days, truth.rt), seed=args.seed, config=meta)
    n_seg = int(math.ceil(setup.horizon / 7.0))
    priors = {f"{k}_0" if k == "R1" else f"{k}0": f"normal({truth.initial_state[k]!r}, 0.05)" for k in ("E", "I", "R1")}
    for k, data in enumerate(datasets):
        stem = "" if args.datasets == 1 else f"_{k}"
        write_wastewater(out / f"wastewater{stem}.csv", data.without_cases(), epoch, seed=args.seed, config=meta)
        write_cases(out / f"cases{stem}.csv", data.without_wastewater(), epoch, seed=args.seed, config=meta)
        run = {
            "variant": "EIRR-ww",
            "wastewater": f"wastewater{stem}.csv",
            "cases": f"cases{stem}.csv",
            "epoch": args.epoch,
            "replicates": 3,
            "n_segments": n_seg,
            "population": setup.population,
            "nonshedding": truth.initial_state["R2"],
            "priors": priors,
        }
        (out / f"fit{stem}.yaml").write_text(yaml.safe_dump(run, sort_keys=True))
    print(f"wrote {len(datasets)} dataset(s) to {out}")
    return EXIT_OK


# -------------------------------------------------------------------- elicit


def cmd_elicit(args) -> int:
    from .elicit import elicit_lambda

    res = elicit_lambda(args.n_sims, seed=args.seed)
    meta = {"command": "elicit", "n_sims": args.n_sims}
    rows = [("mu", res.params.mu), ("sigma", res.params.sigma), ("n_used", len(res.lambdas)), ("n_sims", args.n_sims)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, ["parameter", "value"], rows, seed=args.seed, config=meta)
    print(f"lambda ~ logitnormal({res.params.mu:.4f}, {res.params.sigma:.4f}) from {len(res.lambdas)} replicates")
    return EXIT_OK


# ----------------------------------------------------------------------- fit


def _posterior(cfg: RunConfig) -> tuple[Posterior, dt.date]:
    data, epoch = cfg.load_data()
    kwargs = {}
    if cfg.variant in S_VARIANTS:
        if cfg.population is None:
            raise ValidationError(f"{cfg.variant} needs 'population' in the config")
        kwargs = {"population": cfg.population, "nonshedding": cfg.nonshedding}
    post = Posterior(
        cfg.variant,
        data,
        cfg.prior_spec(),
        resolution=cfg.resolution,
        cadence=cfg.cadence,
        n_segments=cfg.n_segments,
        **kwargs,
    )
    return post, epoch


def _constrained_rows(posterior: Posterior, draws) -> list:
    """(chain, iteration, parameter, value) rows on the natural scale."""
    rows = []
    names = posterior.layout.scalar_names
    for c in range(draws.n_chains):
        out = posterior.forward(draws.samples[c])
        for i in range(draws.n_draws):
            for n in names:
                rows.append((c + 1, i + 1, n, float(out["params"][n][i])))
            for k, r in enumerate(out["R"][i], start=1):
                rows.append((c + 1, i + 1, f"R[{k}]", float(r)))
    return rows


def _summary_rows(summaries) -> list:
    rows = []
    for name, s in summaries.items():
        for j, t in enumerate(s.times):
            bands = [b for lvl in LEVELS for b in (s.lower[lvl][j], s.upper[lvl][j])]
            rows.append((name, float(t), float(s.median[j]), *bands))
    return rows


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config)
    over = {k: v for k, v in (("chains", args.chains), ("warmup", args.warmup), ("iterations", args.iterations)) if v is not None}
    if over:
        cfg = replace(cfg, **over)
    post, epoch = _posterior(cfg)
    meta = {"command": "fit", "config": asdict(cfg), "epoch": epoch.isoformat()}
    out = _out_dir(args.out)
    start = time.perf_counter()
    res = run_fit(post, n_chains=cfg.chains, n_warmup=cfg.warmup, n_iter=cfg.iterations, seed=args.seed, metric=cfg.metric)
    elapsed = time.perf_counter() - start
    fun = res.functionals()

    saved = replace(cfg, epoch=epoch.isoformat())
    (out / "config.yaml").write_text(saved.dump())
    write_table(out / "draws.csv", ["chain", "iteration", "parameter", "value"], _constrained_rows(post, res.draws), seed=args.seed, config=meta)
    write_table(out / "summary.csv", SUMMARY_HEADER, _summary_rows(fun.summaries), seed=args.seed, config=meta)
    d = res.draws
    report = {
        "version": __version__,
        "seed": args.seed,
        "config_sha256": config_hash(meta),
        "variant": cfg.variant,
        "chains": d.n_chains,
        "warmup": cfg.warmup,
        "iterations": d.n_draws,
        "divergences": int(d.divergent.sum()),
        "divergence_rate": f"{d.divergence_rate:.4f}",
        "max_rhat": f"{np.nanmax(d.rhat):.4f}",
        "min_ess_bulk": f"{np.nanmin(d.ess_bulk):.1f}",
        "mean_tree_depth": f"{d.tree_depth.mean():.2f}",
        "step_size": " ".join(f"{s:.4g}" for s in d.step_size),
        "map_logp": f"{res.map.logp:.4f}",
        "map_converged": res.map.converged,
        "kappa_missing": fun.kappa_missing,
        "seconds": f"{elapsed:.1f}",
        "warnings": " | ".join(d.warnings) if d.warnings else "none",
    }
    (out / "diagnostics.txt").write_text("".join(f"{k}: {v}\n" for k, v in report.items()))
    print(f"fit written to {out} (max R-hat {report['max_rhat']}, {report['divergences']} divergences)")
    return EXIT_OK


# ----------------------------------------------------------------- summarize


def _read_draws(path, posterior: Posterior) -> np.ndarray:
    """Latent vectors (chains, draws, dim) rebuilt from a natural-scale draws table."""
    header, rows = read_table(path)
    if header != ["chain", "iteration", "parameter", "value"]:
        raise ValidationError(f"{path}: unexpected header {header}")
    table: dict = {}
    for lineno, (c, i, name, value) in rows:
        table.setdefault((int(c), int(i)), {})[name] = float(value)
    keys = sorted(table)
    n_chains = max(k[0] for k in keys)
    n_seg = posterior.layout.n_segments
    xs = []
    for key in keys:
        params = table[key]
        try:
            params["R"] = [params.pop(f"R[{k}]") for k in range(1, n_seg + 1)]
        except KeyError:
            raise ValidationError(f"{path}: draw {key} lacks R values for {n_seg} segments") from None
        xs.append(posterior.unconstrain(params))
    return np.array(xs).reshape(n_chains, -1, posterior.dim)


def cmd_summarize(args) -> int:
    fit_dir = Path(args.fit)
    cfg = RunConfig.load(fit_dir / "config.yaml")
    post, epoch = _posterior(cfg)
    xs = _read_draws(fit_dir / "draws.csv", post)
    fun = posterior_functionals(xs, post)
    rows = []
    for r in _summary_rows(fun.summaries):
        t = r[1]
        date = (epoch + dt.timedelta(days=t)).isoformat() if float(t).is_integer() else ""
        rows.append((r[0], t, date, *r[2:]))
    header = SUMMARY_HEADER[:2] + ["date"] + SUMMARY_HEADER[2:]
    out = Path(args.out) if args.out else fit_dir / "series.csv"
    write_table(out, header, rows, config={"command": "summarize", "config": asdict(cfg)})
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ evaluate


class _TableSummary:
    """An R_t summary read from a table with time, median and 80/95% bounds."""

    def __init__(self, times, median, bands):
        self.times = np.asarray(times, dtype=float)
        self.median = np.asarray(median, dtype=float)
        self._bands = {lvl: np.asarray(b, dtype=float) for lvl, b in bands.items()}

    def interval(self, level):
        return self._bands[level]

    def on_days(self, days):
        med = step_to_daily(self.median, self.times, days)
        bands = {lvl: np.stack([step_to_daily(b[:, 0], self.times, days), step_to_daily(b[:, 1], self.times, days)], axis=1) for lvl, b in self._bands.items()}
        return _TableSummary(days, med, bands)


def read_interval_table(path, quantity: str | None = "rt") -> _TableSummary:
    """R_t series from a summary table (``quantity`` column optional).

    Needs ``time``, ``median``, ``lower_80``, ``upper_80``, ``lower_95``
    and ``upper_95`` columns; this is the format ``fit`` and ``summarize``
    write and the one external estimates are scored from.
    """
    header, rows = read_table(path)
    need = ["time", "median", "lower_80", "upper_80", "lower_95", "upper_95"]
    missing = [c for c in need if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    col = {c: header.index(c) for c in header}
    if quantity is not None and "quantity" in col:
        rows = [(n, r) for n, r in rows if r[col["quantity"]] == quantity]
    if not rows:
        raise ValidationError(f"{path}: no {quantity} rows")
    vals = np.array([[float(r[col[c]]) for c in need] for _, r in rows])
    order = np.argsort(vals[:, 0], kind="stable")
    vals = vals[order]
    return _TableSummary(vals[:, 0], vals[:, 1], {0.8: vals[:, 2:4], 0.95: vals[:, 4:6]})


def cmd_evaluate(args) -> int:
    header, rows = read_table(args.truth)
    if header[:2] != ["time", "rt"]:
        raise ValidationError(f"{args.truth}: header must start with time,rt")
    truth = np.array([[float(r[0]), float(r[1])] for _, r in rows])
    days, rt = truth[:, 0], truth[:, 1]
    sources = [(Path(p) / "summary.csv", Path(p).name) for p in args.fit] + [(Path(p), Path(p).stem) for p in args.intervals]
    if not sources:
        raise ValidationError("nothing to evaluate: pass --fit and/or --intervals")
    out_rows = []
    for k, (path, name) in enumerate(sources):
        summary = read_interval_table(path).on_days(days)
        rep: MetricReport = score_rt(summary, rt, args.scenario or name, k)
        out_rows.extend(rep.long_rows())
    write_table(args.out, ["scenario", "dataset", "metric", "value"], out_rows, config={"command": "evaluate", "sources": [str(s[0]) for s in sources]})
    print(f"wrote {len(out_rows)} metric rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wwrt", description="Estimate R_t from wastewater concentrations and case counts.")
    p.add_argument("--version", action="version", version=f"wwrt {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate an epidemic and synthetic observations")
    s.add_argument("--seed", type=int, required=True, help="seed for the observation noise")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help="YAML overrides of the simulation setup")
    s.add_argument("--datasets", type=int, default=1, help="number of datasets (default 1)")
    s.add_argument("--epoch", default=DEFAULT_EPOCH, help=f"calendar date of day 0 (default {DEFAULT_EPOCH})")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("elicit", help="elicit the lambda prior by simulation")
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--n-sims", type=int, default=200)
    e.add_argument("--out", required=True, help="output table")
    e.set_defaults(func=cmd_elicit)

    f = sub.add_parser("fit", help="fit a model variant to observed data")
    f.add_argument("--config", required=True, help="run configuration (YAML)")
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--chains", type=int)
    f.add_argument("--warmup", type=int)
    f.add_argument("--iterations", type=int)
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("evaluate", help="score R_t estimates against a true series")
    v.add_argument("--truth", required=True, help="table with time,rt columns")
    v.add_argument("--fit", action="append", default=[], help="fit output directory (repeatable)")
    v.add_argument("--intervals", action="append", default=[], help="external interval table (repeatable)")
    v.add_argument("--scenario", help="label for the scenario column")
    v.add_argument("--out", required=True, help="output metrics table")
    v.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("summarize", help="plot-ready series from a fit directory")
    m.add_argument("--fit", required=True, help="fit output directory")
    m.add_argument("--out", help="output table (default <fit>/series.csv)")
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"wwrt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, WwrtError, OSError, ValueError) as exc:
        print(f"wwrt: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
