"""Command-line pipelines: simulate, fit, quality, evaluate, defuzz, cohort, report.

Every command accepts ``--seed``, ``--config`` (a JSON object of option
values), ``--out-dir`` and ``--format``. Explicit flags override the config
file, which overrides built-in defaults. The resolved settings are written
next to the outputs as ``<command>_config.json``.

Exit codes: 0 success, 2 usage or input error, 3 fit did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .estimator import FitOptions, FitResult, Observation, Variant, fit
from .evaluation import (
    CohortRule,
    in_sample_metrics,
    initial_position_analysis,
    kfold_cv,
    metrics,
    model_comparison,
    quality_popularity_report,
)
from .ingest import (
    FilterConfig,
    IngestError,
    KNNRegressor,
    Site,
    apply_inclusion_filters,
    defuzz_exact,
    defuzz_regress,
    dump_observations,
    final_scores,
    parse_observations,
    synthetic_fuzz_dataset,
    to_observations,
)
from .market_sim import (
    SimConfig,
    SimMode,
    exponential_view_curve,
    random_truth,
    run_aggregator_sim,
    run_musiclab_sim,
    spread_arrivals,
    to_raw_observations,
)
from .quality import (
    SiteMode,
    compute_vote_ratios,
    normalized_log_score,
    position_bias_curve,
    quality_scores,
    view_estimates,
)
from .ranking import RankingRule, RankMode

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3


class UsageError(Exception):
    """Bad flags, config or input files; reported with exit code 2."""


# ---------------------------------------------------------------- defaults

GLOBAL_DEFAULTS = {"seed": None, "format": "csv"}

FILTER_DEFAULTS = {
    "no_filter": False,
    "p_min": 5,
    "p_max": "median",
    "max_age": 12.0,
    "min_obs": 5,
    "window": "06:00-20:00",
    "all_days": False,
    "tz": "America/New_York",
    "bucket_minutes": 10,
}

FIT_DEFAULTS = {
    "variant": "full",
    "site": "reddit",
    "tol": 1e-8,
    "max_iter": 500,
    "ridge": 0.0,
    "min_votes": 1,
    "reference_position": None,
    **FILTER_DEFAULTS,
}

DEFAULTS = {
    "simulate": {
        "mode": "aggregator",
        "rule": "reddit",
        "articles": None,  # 100 aggregator, 48 musiclab
        "ticks": 500,
        "users": None,  # per tick (aggregator, 100) or in total (musiclab, 9000)
        "worlds": 9,
        "no_random_world": False,
        "view_scale": None,  # 20 aggregator, 15 musiclab
        "view_top": None,  # 1.0 aggregator, 0.9 musiclab
        "quality_min": None,
        "quality_max": 0.3,
        "social_weight": None,  # 0 aggregator, 0.0015 musiclab
        "age_decay": 0.0,
        "downvote_min": 0.05,
        "downvote_max": 0.3,
        "threshold": 0.0,
        "new_queue_view": 0.0,
        "arrival_window": 0.7,
    },
    "fit": FIT_DEFAULTS,
    "quality": {"site": "reddit", "bucket_minutes": 10},
    "report": {"site": "reddit", "bucket_minutes": 10, "dataset": "data", "no_figures": False},
    "evaluate": {
        **FIT_DEFAULTS,
        "k": 5,
        "variants": "base,basetime,full",
        "dataset": "data",
    },
    "defuzz": {
        "score": None,
        "ratio": None,
        "n": 2000,
        "k": 5,
        "fuzz_fraction": 0.6,
        "train_fraction": 0.8,
        "train": None,
        "query": None,
        "no_figures": False,
    },
    "cohort": {
        "site": "hn",
        "bucket_minutes": 10,
        "entry_score": 3,
        "max_entry_age": 30.0,
        "page_size": None,  # 30 for hn, 25 for reddit
        "no_figures": False,
    },
}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults."""
    defaults = {**GLOBAL_DEFAULTS, **DEFAULTS[args.command]}
    from_file: dict = {}
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        from_file = {k.replace("-", "_"): v for k, v in from_file.items()}
        unknown = sorted(set(from_file) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {unknown}")
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        resolved[key] = flag if flag is not None else from_file.get(key, default)
    if resolved["format"] not in ("csv", "json"):
        raise UsageError("--format must be csv or json")
    return resolved


# ---------------------------------------------------------------- output


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _write_table(out: Path, name: str, header: Sequence[str], rows: Sequence[Sequence], cfg: dict) -> Path:
    if cfg["format"] == "json":
        path = out / f"{name}.json"
        return _write_json(path, {"columns": list(header), "rows": [dict(zip(header, r)) for r in rows], "config": cfg})
    path = out / f"{name}.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------- input


def _read_raw(path: str, site: str):
    try:
        with open(path) as fh:
            return parse_observations(fh, Site(site))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _filter_config(cfg: dict) -> FilterConfig:
    try:
        start, end = (time.fromisoformat(s) for s in cfg["window"].split("-"))
    except ValueError as exc:
        raise UsageError(f"--window must look like 06:00-20:00, got {cfg['window']!r}") from exc
    p_max = cfg["p_max"]
    if isinstance(p_max, str) and p_max != "median":
        try:
            p_max = int(p_max)
        except ValueError as exc:
            raise UsageError("--p-max must be an integer or 'median'") from exc
    return FilterConfig(
        window_start=start,
        window_end=end,
        weekdays_only=not cfg["all_days"],
        p_min=cfg["p_min"],
        p_max=p_max,
        max_age_hours=cfg["max_age"],
        min_observations=cfg["min_obs"],
        timezone=cfg["tz"],
        bucket_minutes=cfg["bucket_minutes"],
    )


def _load_observations(path: str, cfg: dict, filtered: bool = True, out: Path | None = None) -> list[Observation]:
    raw = _read_raw(path, cfg["site"])
    if not filtered or cfg.get("no_filter", True):
        return to_observations(raw, cfg["bucket_minutes"])
    result = apply_inclusion_filters(raw, _filter_config(cfg))
    if out is not None:
        _write_json(out / "exclusions.json", {**result.report, "p_max": result.p_max})
    dropped = ", ".join(f"{k}={v}" for k, v in result.report.items())
    print(f"filters: kept {len(result.kept)} of {len(raw)} snapshots ({dropped} dropped)")
    if not result.observations:
        raise UsageError("no observations survive the inclusion filters (try --no-filter)")
    return result.observations


def _load_musiclab(path: str) -> list[Observation]:
    """Observations from a download log, random-world rows excluded."""
    obs = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    r = json.loads(line)
                    if r.get("random", False):
                        continue
                    obs.append(
                        Observation(
                            bucket=int(r["user"]),
                            article_id=str(r["item"]),
                            position=int(r["pos"]),
                            votes_up=int(r["downloaded"]),
                            displayed_score=int(r["downloads_before"]),
                        )
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise UsageError(f"{path} line {lineno}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return obs


def _load_fit(path: str) -> FitResult:
    try:
        return FitResult.from_json(Path(path).read_text())
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot read fit {path}: {exc}") from exc


def _fit_options(cfg: dict) -> FitOptions:
    return FitOptions(
        reference_position=cfg["reference_position"],
        tolerance=cfg["tol"],
        max_iterations=cfg["max_iter"],
        ridge=cfg["ridge"],
        min_article_votes=cfg["min_votes"],
    )


def _variants(text: str) -> list[Variant]:
    try:
        return [Variant(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"unknown variant in {text!r}") from exc


# ---------------------------------------------------------------- commands


def cmd_simulate(args, cfg: dict) -> int:
    if cfg["seed"] is None:
        raise UsageError("simulate needs --seed (or a seed in --config) so runs are reproducible")
    seed = int(cfg["seed"])
    out = _out_dir(args)
    rng = np.random.default_rng(seed)
    musiclab = cfg["mode"] == "musiclab"
    if cfg["mode"] not in ("aggregator", "musiclab"):
        raise UsageError("--mode must be aggregator or musiclab")

    def pick(key, aggregator, music):
        return cfg[key] if cfg[key] is not None else (music if musiclab else aggregator)

    n_articles = pick("articles", 100, 48)
    curve = exponential_view_curve(n_articles, pick("view_scale", 20.0, 15.0), pick("view_top", 1.0, 0.9))
    qmin = pick("quality_min", 0.02, 0.01)
    social = pick("social_weight", 0.0, 0.0015)
    reddit = cfg["rule"] == "reddit"

    if musiclab:
        random_world = not cfg["no_random_world"]
        n_social = cfg["worlds"] - (1 if random_world else 0)
        config = SimConfig(
            mode=SimMode.MUSICLAB,
            n_articles=n_articles,
            n_social_worlds=n_social,
            include_random_world=random_world,
            n_users=pick("users", 0, 9000),
            seed=seed,
        )
        truth = random_truth(config.article_ids(), rng, curve, (qmin, cfg["quality_max"]), social_weight=social)
        log = run_musiclab_sim(config, truth)
        with (out / "downloads.jsonl").open("w") as fh:
            for rec in log.records():
                rec["random"] = rec["world"] == log.random_world
                fh.write(json.dumps(rec) + "\n")
        print(f"simulated {config.total_users} users over {len(log.worlds)} worlds -> {out / 'downloads.jsonl'}")
    else:
        if cfg["rule"] not in ("reddit", "hn"):
            raise UsageError("--rule must be reddit or hn")
        rule = RankingRule(RankMode.REDDIT_HOT if reddit else RankMode.HN_TOP, hn_threshold=cfg["threshold"])
        config = SimConfig(
            n_articles=n_articles,
            n_ticks=cfg["ticks"],
            users_per_tick=pick("users", 100, 0),
            rule=rule,
            seed=seed,
            new_queue_view=cfg["new_queue_view"],
        )
        ids = config.article_ids()
        truth = random_truth(
            ids,
            rng,
            curve,
            (qmin, cfg["quality_max"]),
            social_weight=social,
            age_decay=cfg["age_decay"],
            downvote_range=(cfg["downvote_min"], cfg["downvote_max"]) if reddit else None,
        )
        last = int(round(cfg["arrival_window"] * (config.n_ticks - 1)))
        config.arrival_schedule = spread_arrivals(ids, config.n_ticks, rng, last_tick=last)
        log = run_aggregator_sim(config, truth)
        with (out / "observations.jsonl").open("w") as fh:
            n = dump_observations(to_raw_observations(log), fh)
        print(f"simulated {config.n_ticks} buckets, {n} snapshots -> {out / 'observations.jsonl'}")
    _write_json(out / "truth.json", truth.to_dict(seed))
    return EXIT_OK


def _print_fit_summary(result: FitResult) -> None:
    status = "yes" if result.converged else "NO"
    print(
        f"converged: {status}  iterations: {result.iterations}  gradient max-norm: {result.gradient_norm:.3g}  "
        f"log-likelihood: {result.log_likelihood:.6g}"
    )
    print(
        f"articles: {len(result.q)} fitted, {len(result.excluded)} excluded  "
        f"positions: {len(result.p)} fitted, {len(result.excluded_positions)} excluded  "
        f"reference position: {result.reference_position}"
    )
    if result.betas:
        print("coefficients: " + "  ".join(f"{k}={v:.6g}" for k, v in result.betas.items()))
    if result.rank_deficient:
        print("warning: design is rank deficient; only a ridge-regularized fit is identified")
    if position_bias_curve(result).non_monotone:
        print("diagnostic: position curve is NON-MONOTONE (view rate rises >5% between adjacent positions)")
    else:
        print("diagnostic: position curve is monotone")


def cmd_fit(args, cfg: dict) -> int:
    variant = _variants(cfg["variant"])[0]
    out = _out_dir(args)
    if variant is Variant.MUSICLAB:
        obs = _load_musiclab(args.input)
    else:
        obs = _load_observations(args.input, cfg, out=out)
    result = fit(obs, variant, _fit_options(cfg))
    payload = result.to_dict()
    payload["config"] = cfg
    _write_json(out / "fit.json", payload)
    _print_fit_summary(result)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _quality_report(fitted: FitResult, obs: list[Observation], site: str):
    mode = SiteMode(site)
    ratios = None
    if mode is SiteMode.REDDIT:
        ratios = compute_vote_ratios([o for o in obs if o.article_id in fitted.q])
    return quality_scores(fitted, ratios, mode)


def _quality_tables(out: Path, fitted: FitResult, report, cfg: dict) -> None:
    rows = [(a, _fmt(q), _fmt(u)) for a, q, u in sorted(report.rows())]
    _write_table(out, "quality", ("id", "quality", "quantile"), rows, cfg)
    curve = position_bias_curve(fitted)
    _write_table(out, "position_bias", ("position", "view_rate"), [(j, _fmt(r)) for j, r in curve], cfg)


def cmd_quality(args, cfg: dict) -> int:
    fitted = _load_fit(args.fit)
    obs = _load_observations(args.input, cfg, filtered=False)
    out = _out_dir(args)
    _quality_tables(out, fitted, _quality_report(fitted, obs, cfg["site"]), cfg)
    print(f"wrote quality and position-bias tables for {len(fitted.q)} articles to {out}")
    return EXIT_OK


def cmd_report(args, cfg: dict) -> int:
    fitted = _load_fit(args.fit)
    obs = _load_observations(args.input, cfg, filtered=False)
    out = _out_dir(args)
    report = _quality_report(fitted, obs, cfg["site"])
    _quality_tables(out, fitted, report, cfg)

    finals = final_scores(obs)
    # net-negative Reddit scores have no log; they sit at the bottom with score 1
    log_scores = normalized_log_score({a: max(finals[a], 1) for a in fitted.q})
    views = view_estimates(fitted, obs)
    score_corr, views_corr = quality_popularity_report(report, finals, views)
    _write_table(
        out, "spearman", ("dataset", "score_corr", "views_corr"),
        [(cfg["dataset"], _fmt(score_corr), _fmt(views_corr))], cfg,
    )
    ids = sorted(fitted.q)
    _write_table(
        out, "scatter", ("id", "quality_quantile", "normalized_log_score"),
        [(a, _fmt(report.quantile[a]), _fmt(log_scores[a])) for a in ids], cfg,
    )
    if not cfg["no_figures"]:
        from . import plotting

        plotting.position_bias(position_bias_curve(fitted), out / "position_bias.svg")
        plotting.quality_vs_score(
            [report.quantile[a] for a in ids], [log_scores[a] for a in ids], out / "quality_vs_score.svg"
        )
    print(f"spearman  quality~score: {score_corr:.3f}  quality~views: {views_corr:.3f}")
    return EXIT_OK


def cmd_evaluate(args, cfg: dict) -> int:
    seed = 0 if cfg["seed"] is None else int(cfg["seed"])
    variant = _variants(cfg["variant"])[0]
    variants = _variants(cfg["variants"])
    obs = _load_observations(args.input, cfg)
    options = _fit_options(cfg)
    mode = SiteMode(cfg["site"])
    out = _out_dir(args)

    _, insample = in_sample_metrics(obs, variant, options)
    cv = kfold_cv(obs, variant, k=cfg["k"], seed=seed, mode=mode, options=options)
    header = ("dataset", "target", "in_r2", "in_mae", "in_mse", "out_r2", "out_mae", "out_mse")
    rows = [
        (cfg["dataset"], "votes", f"{insample.r2:.2f}", f"{insample.mae:.2f}", f"{insample.mse:.2f}",
         cv.cell("r2"), cv.cell("mae"), cv.cell("mse"))
    ]
    if cv.score_growth is not None:
        g = cv.score_growth
        rows.append((cfg["dataset"], "score_growth", "", "", "", g.cell("r2"), g.cell("mae"), g.cell("mse")))
    _write_table(out, "accuracy", header, rows, cfg)
    print(f"{variant.value}: in-sample r2 {insample.r2:.3f}, out-of-sample r2 {cv.cell('r2', 3)}")
    if sum(cv.dropped):
        print(f"note: {sum(cv.dropped)} held-out rows had no fitted article or position and were not scored")

    comparison = model_comparison(obs, variants, k=cfg["k"], seed=seed, options=options)
    names = [r.variant.value for r in comparison]
    _write_table(
        out, "model_comparison", ("dataset", "row", *names),
        [
            (cfg["dataset"], "mean_r2", *(f"{r.mean_r2:.4f}" for r in comparison)),
            (cfg["dataset"], "non_monotone", *(str(r.non_monotone).lower() for r in comparison)),
        ],
        cfg,
    )
    for r in comparison:
        flag = "  (position curve non-monotone)" if r.non_monotone else ""
        print(f"model {r.variant.value}: mean out-of-sample r2 {r.mean_r2:.4f}{flag}")
    return EXIT_OK


def _read_defuzz_rows(path: str, columns: int) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if data.shape[1] != columns:
        raise UsageError(f"{path} must have {columns} columns")
    return data


def cmd_defuzz(args, cfg: dict) -> int:
    out = _out_dir(args)
    if args.action == "exact":
        if cfg["score"] is None or cfg["ratio"] is None:
            raise UsageError("defuzz exact needs --score and --ratio")
        u, d = defuzz_exact(int(cfg["score"]), float(cfg["ratio"]))
        _write_table(out, "defuzz", ("score", "ratio", "upvotes", "downvotes"),
                     [(cfg["score"], cfg["ratio"], u, d)], cfg)
        print(f"upvotes {u}  downvotes {d}")
        return EXIT_OK

    if args.action == "regress":
        if not cfg["train"] or not cfg["query"]:
            raise UsageError("defuzz regress needs --train and --query CSV files")
        train = _read_defuzz_rows(cfg["train"], 4)
        query = _read_defuzz_rows(cfg["query"], 3)
        pred = defuzz_regress(train, query, k=cfg["k"])
        _write_table(out, "defuzz", ("u_obs", "s_obs", "r_obs", "u_true_estimate"),
                     [(*map(_fmt, q), _fmt(p)) for q, p in zip(query, pred)], cfg)
        print(f"estimated true upvotes for {len(query)} snapshots")
        return EXIT_OK

    # benchmark
    seed = 0 if cfg["seed"] is None else int(cfg["seed"])
    bench = synthetic_fuzz_dataset(cfg["n"], seed, fuzz_fraction=cfg["fuzz_fraction"])
    order = np.random.default_rng(seed).permutation(cfg["n"])
    cut = int(cfg["train_fraction"] * cfg["n"])
    tr, te = order[:cut], order[cut:]
    model = KNNRegressor(cfg["k"]).fit(bench.features[tr], bench.u_true[tr])
    pred = model.predict(bench.features[te])
    knn = metrics(bench.u_true[te], pred)
    naive = metrics(bench.u_true[te], bench.features[te, 0])
    _write_table(
        out, "defuzz_benchmark", ("method", "r2", "mae", "mse", "n_test"),
        [(name, _fmt(m.r2), _fmt(m.mae), _fmt(m.mse), m.n) for name, m in (("knn", knn), ("observed", naive))],
        cfg,
    )
    if not cfg["no_figures"]:
        from . import plotting

        plotting.predicted_vs_actual(bench.u_true[te].tolist(), pred.tolist(), out / "defuzz_benchmark.svg",
                                     xlabel="true upvotes", ylabel="estimated upvotes")
    print(f"knn r2 {knn.r2:.3f}  (observed upvotes as estimate: r2 {naive.r2:.3f})")
    return EXIT_OK


def cmd_cohort(args, cfg: dict) -> int:
    obs = _load_observations(args.input, cfg, filtered=False)
    rule = CohortRule(entry_score=cfg["entry_score"], max_entry_age_minutes=cfg["max_entry_age"])
    if cfg["page_size"] is None:
        cfg["page_size"] = 30 if cfg["site"] == "hn" else 25
    pages = initial_position_analysis(obs, final_scores(obs), rule, page_size=cfg["page_size"])
    out = _out_dir(args)
    _write_table(out, "cohort", ("page", "count", "median", "mean"),
                 [(s.page, s.count, _fmt(s.median), _fmt(s.mean)) for s in pages], cfg)
    if not cfg["no_figures"]:
        from . import plotting

        plotting.cohort_pages(pages, out / "cohort.svg")
    for s in pages:
        print(f"page {s.page}: {s.count} articles, median final score {s.median:g}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "quality": cmd_quality,
    "report": cmd_report,
    "evaluate": cmd_evaluate,
    "defuzz": cmd_defuzz,
    "cohort": cmd_cohort,
}


# ---------------------------------------------------------------- parser


def _flag(p, name, type=None, help=None, choices=None):
    p.add_argument(name, type=type, default=None, choices=choices, help=help)


def _switch(p, name, help):
    p.add_argument(name, action="store_const", const=True, default=None, help=help)


def _add_filter_flags(p):
    _switch(p, "--no-filter", "skip the inclusion filters")
    _flag(p, "--p-min", int, "lowest position kept (default 5)")
    _flag(p, "--p-max", str, "highest position kept, or 'median' of initial positions (default)")
    _flag(p, "--max-age", float, "drop snapshots older than this many hours (default 12)")
    _flag(p, "--min-obs", int, "drop articles with fewer snapshots (default 5)")
    _flag(p, "--window", str, "local clock window HH:MM-HH:MM (default 06:00-20:00)")
    _switch(p, "--all-days", "keep weekend snapshots")
    _flag(p, "--tz", str, "timezone of the clock window (default America/New_York)")


def _add_fit_flags(p):
    _flag(p, "--variant", str, "base, basetime, full or musiclab (default full)")
    _flag(p, "--site", str, "hn or reddit (default reddit)", choices=("hn", "reddit"))
    _flag(p, "--tol", float, "gradient max-norm tolerance (default 1e-8)")
    _flag(p, "--max-iter", int, "iteration budget (default 500)")
    _flag(p, "--ridge", float, "ridge penalty on fixed effects (default 0)")
    _flag(p, "--min-votes", int, "exclude articles with fewer votes (default 1)")
    _flag(p, "--reference-position", int, "position pinned to p=0 (default: smallest observed)")
    _flag(p, "--bucket-minutes", int, "snapshot bucket length (default 10)")
    _add_filter_flags(p)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--config", default=None, help="JSON file of option values")
    common.add_argument("--out-dir", default=".", help="output directory (default: current)")
    common.add_argument("--format", default=None, choices=("csv", "json"), help="table format (default csv)")

    parser = argparse.ArgumentParser(prog="votequality", description="Quality estimation from position-biased votes.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic vote or download logs")
    _flag(p, "--mode", str, "aggregator or musiclab (default aggregator)", choices=("aggregator", "musiclab"))
    _flag(p, "--rule", str, "aggregator ranking rule (default reddit)", choices=("reddit", "hn"))
    _flag(p, "--articles", int, "number of articles or songs")
    _flag(p, "--ticks", int, "number of 10-minute buckets (aggregator)")
    _flag(p, "--users", int, "users per bucket (aggregator) or in total (musiclab)")
    _flag(p, "--worlds", int, "musiclab worlds including the random world (default 9)")
    _switch(p, "--no-random-world", "musiclab: all worlds are social")
    _flag(p, "--view-scale", float, "decay length of the exponential view curve")
    _flag(p, "--view-top", float, "view probability of position 1")
    _flag(p, "--quality-min", float, "lower end of the log-uniform quality range")
    _flag(p, "--quality-max", float, "upper end of the quality range (default 0.3)")
    _flag(p, "--social-weight", float, "weight of log score (aggregator) or downloads (musiclab)")
    _flag(p, "--age-decay", float, "per-hour change in log vote propensity (<= 0)")
    _flag(p, "--downvote-min", float, "reddit: lower end of downvote probabilities")
    _flag(p, "--downvote-max", float, "reddit: upper end of downvote probabilities")
    _flag(p, "--threshold", float, "hn: minimum score to be ranked")
    _flag(p, "--new-queue-view", float, "view probability of young off-list articles")
    _flag(p, "--arrival-window", float, "share of the run over which articles arrive (default 0.7)")

    p = sub.add_parser("fit", parents=[common], help="fit the Poisson model to an observation file")
    p.add_argument("input", help="observations JSONL (or musiclab downloads JSONL)")
    _add_fit_flags(p)

    for name, help_text in (("quality", "quality scores and position-bias curve"),
                            ("report", "quality, position bias, spearman and scatter tables plus figures")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("fit", help="fit.json from the fit command")
        p.add_argument("input", help="observations JSONL")
        _flag(p, "--site", str, "hn or reddit (default reddit)", choices=("hn", "reddit"))
        _flag(p, "--bucket-minutes", int, "snapshot bucket length (default 10)")
        if name == "report":
            _flag(p, "--dataset", str, "dataset label for the tables")
            _switch(p, "--no-figures", "skip SVG figures")

    p = sub.add_parser("evaluate", parents=[common], help="in-sample and cross-validated accuracy")
    p.add_argument("input", help="observations JSONL")
    _add_fit_flags(p)
    _flag(p, "--k", int, "number of folds (default 5)")
    _flag(p, "--variants", str, "comma-separated variants to compare (default base,basetime,full)")
    _flag(p, "--dataset", str, "dataset label for the tables")

    p = sub.add_parser("defuzz", parents=[common], help="recover true Reddit vote counts")
    p.add_argument("action", choices=("exact", "benchmark", "regress"))
    _flag(p, "--score", int, "exact: true score")
    _flag(p, "--ratio", float, "exact: true upvote ratio")
    _flag(p, "--n", int, "benchmark: synthetic snapshots (default 2000)")
    _flag(p, "--k", int, "neighbours for the regressor (default 5)")
    _flag(p, "--fuzz-fraction", float, "benchmark: maximum fuzz as a share of votes (default 0.6)")
    _flag(p, "--train-fraction", float, "benchmark: training share (default 0.8)")
    _flag(p, "--train", str, "regress: CSV with header and columns u_obs,s_obs,r_obs,u_true")
    _flag(p, "--query", str, "regress: CSV with header and columns u_obs,s_obs,r_obs")
    _switch(p, "--no-figures", "skip SVG figures")

    p = sub.add_parser("cohort", parents=[common], help="final score by initial page for an entry cohort")
    p.add_argument("input", help="observations JSONL")
    _flag(p, "--site", str, "hn or reddit (default hn)", choices=("hn", "reddit"))
    _flag(p, "--bucket-minutes", int, "snapshot bucket length (default 10)")
    _flag(p, "--entry-score", int, "score at entry (default 3)")
    _flag(p, "--max-entry-age", float, "maximum age at entry in minutes (default 30)")
    _flag(p, "--page-size", int, "positions per page (default 30 for hn, 25 for reddit)")
    _switch(p, "--no-figures", "skip SVG figures")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(args)
        status = COMMANDS[args.command](args, cfg)
        _write_json(_out_dir(args) / f"{args.command}_config.json", cfg)
        return status
    except (UsageError, IngestError, ValueError, KeyError, OSError) as exc:
        print(f"votequality {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
