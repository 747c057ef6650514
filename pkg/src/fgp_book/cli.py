import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from fgp_book.attribution import attribute_series, attribution_frame, diagnostics_frame
from fgp_book.backtester import compare_to_market, relative_to_benchmark, run_backtest
from fgp_book.common import *
from fgp_book.errors import FgpError, ManifestError
from fgp_book.market_model import compute_weights
from fgp_book.panel_io import export_panel, load_panel, write_frame, write_json
from fgp_book.portfolio_zoo import (
    ZooEntry,
    book_value,
    book_value_log_decomposition,
    parse_portfolio,
    resolve,
)
from fgp_book.sim_market import simulate
from fgp_book.types import (
    BacktestResult,
    MarketSeries,
    PortfolioRequest,
    RunConfig,
    RunManifest,
    SimConfig,
    WeightPath,
)
from fgp_book.verification import require_passed, run_verification

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "backtest", "decompose", "attribute", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgp-book",
        description="Portfolios generated from market weights and book values.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--data", type=Path, help="panel CSV with date,ticker,cap,book")
    parser.add_argument("--universe", type=Path, help="tickers in index order, one per line")
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--out", type=Path, help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--dt", type=float)
    parser.add_argument(
        "--portfolio",
        action="append",
        default=[],
        metavar="NAME[:k=v,...]",
        help="portfolio to run; repeatable",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
    )
    return parser


def _load_config(path: Optional[Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    if not path.exists():
        raise ManifestError(f"{path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return RunConfig.from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} is not valid JSON: {e}") from e
    except (ValidationError, KeyError, TypeError, AttributeError) as e:
        raise ManifestError(f"{path}: {_one_line(e)}") from e


def _one_line(error: Exception) -> str:
    return " ".join(str(error).split())


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    config = _load_config(args.config)
    sim_updates: dict[str, float | int] = {}
    if args.seed is not None:
        sim_updates["seed"] = args.seed
    if args.dt is not None:
        sim_updates["dt"] = args.dt
    if sim_updates:
        try:
            sim = SimConfig.from_dict({**config.sim.model_dump(), **sim_updates})
        except ValidationError as e:
            raise ManifestError(_one_line(e)) from e
        config = config.model_copy(update={"sim": sim})
    portfolios = [parse_portfolio(p) for p in args.portfolio] or list(config.portfolios)
    if not portfolios:
        portfolios = [PortfolioRequest(name="market")]
    out = args.out or Path(os.environ.get(OUT_DIR_ENV, "out"))
    manifest = RunManifest(
        command=args.command,
        data_path=args.data,
        universe_path=args.universe,
        portfolios=portfolios,
        output_dir=out,
        seed=args.seed,
        dt=args.dt,
        config=config,
    )
    for request in manifest.portfolios:
        resolve(request, config.rho_safety, config.delta_safety)
    return manifest


def file_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", label)


def _date_column(series: MarketSeries) -> list[str] | np.ndarray:
    return list(series.dates) if series.dates is not None else series.times


def _entries(manifest: RunManifest) -> list[tuple[str, ZooEntry]]:
    config = manifest.config
    return [
        (request.label, resolve(request, config.rho_safety, config.delta_safety))
        for request in manifest.portfolios
    ]


def _backtest_all(
    entries: list[tuple[str, ZooEntry]], series: MarketSeries, path: WeightPath
) -> list[BacktestResult]:
    def run(item: tuple[str, ZooEntry]) -> BacktestResult:
        label, entry = item
        return run_backtest(series, entry.weight_rule(path), name=label, path=path)

    with ThreadPoolExecutor() as pool:
        return list(pool.map(run, entries))


def _load(manifest: RunManifest) -> tuple[MarketSeries, WeightPath]:
    assert manifest.data_path is not None, f"{manifest.command} needs data"
    series = load_panel(manifest.data_path, manifest.universe_path)
    return series, compute_weights(series)


def cmd_simulate(manifest: RunManifest) -> None:
    series = simulate(manifest.config.sim)
    export_panel(series, manifest.output_dir)


def cmd_backtest(manifest: RunManifest) -> None:
    series, path = _load(manifest)
    out = manifest.output_dir
    results = _backtest_all(_entries(manifest), series, path)

    steps = np.arange(series.n_steps)
    dates = _date_column(series)
    combined = pd.DataFrame({"step": steps, "date": dates})
    summary: dict[str, dict[str, object]] = {}
    for result in results:
        label = file_label(result.name)
        write_frame(
            pd.DataFrame(
                {
                    "step": steps,
                    "date": dates,
                    "wealth": result.wealth,
                    "relative_value": result.relative_value,
                    "log_relative_value": result.log_relative_value,
                    "turnover": result.turnover,
                }
            ),
            out / f"backtest_{label}.csv",
        )
        if manifest.config.weights_dump:
            weights = pd.DataFrame(result.weights_used, columns=list(series.tickers))
            weights.insert(0, "step", steps)
            write_frame(weights, out / f"weights_{label}.csv")
        combined[result.name] = result.relative_value
        summary[result.name] = compare_to_market(result).to_dict()
    write_frame(combined, out / RELATIVE_VALUES_NAME)
    write_json(summary, out / SUMMARY_NAME)

    if manifest.config.benchmark == "book_value":
        entry = book_value()
        benchmark = run_backtest(series, entry.weight_rule(path), name="book_value", path=path)
        relative = pd.DataFrame({"step": steps, "date": dates})
        for result in results:
            relative[result.name] = relative_to_benchmark(result, benchmark)
        write_frame(relative, out / RELATIVE_TO_BOOK_NAME)


def cmd_decompose(manifest: RunManifest) -> None:
    series, path = _load(manifest)
    parts = book_value_log_decomposition(path)
    result = run_backtest(series, book_value().weight_rule(path), name="book_value", path=path)
    frame = pd.DataFrame(
        {
            "step": np.arange(series.n_steps),
            "date": _date_column(series),
            "log_G": parts.log_g,
            "quadratic": parts.quadratic,
            "beta_term": parts.beta_term,
            "log_relative_value": result.log_relative_value,
        }
    )
    write_frame(frame, manifest.output_dir / DECOMPOSITION_NAME)


def cmd_attribute(manifest: RunManifest) -> None:
    series, path = _load(manifest)
    out = manifest.output_dir
    for result in _backtest_all(_entries(manifest), series, path):
        report = attribute_series(result, path)
        label = file_label(result.name)
        write_frame(attribution_frame(report), out / f"attribution_{label}.csv")
        write_frame(diagnostics_frame(report), out / f"attribution_diagnostics_{label}.csv")


def cmd_verify(manifest: RunManifest) -> None:
    report = run_verification(manifest.config)
    write_json(report, manifest.output_dir / VERIFY_REPORT_NAME)
    require_passed(report)


def run(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    try:
        manifest = manifest_from_args(args)
        manifest.output_dir.mkdir(parents=True, exist_ok=True)
        match manifest.command:
            case "simulate":
                cmd_simulate(manifest)
            case "backtest":
                cmd_backtest(manifest)
            case "decompose":
                cmd_decompose(manifest)
            case "attribute":
                cmd_attribute(manifest)
            case "verify":
                cmd_verify(manifest)
    except FgpError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[list[str]] = None) -> None:
    sys.exit(run(argv))
