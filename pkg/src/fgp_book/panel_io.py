"""
CSV panels in and out: one row per (date, ticker) with `cap` and `book`,
an optional 0/1 `book_updated` column and an optional `time` column (years
from the first row; calendar days / 365.25 when absent). A universe file
lists the tickers in index order, one per line.
"""

import json
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from fgp_book.common import *
from fgp_book.errors import PanelIncomplete, UnflaggedBookChange
from fgp_book.types import MarketSeries

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25


def read_universe(path: Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as f:
        tickers = [line.strip() for line in f if line.strip()]
    if len(set(tickers)) != len(tickers):
        raise PanelIncomplete(f"{path} lists a ticker twice")
    return tickers


def write_universe(tickers: tuple[str, ...] | list[str], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("".join(f"{t}\n" for t in tickers))


def _pivot(frame: pd.DataFrame, column: str, tickers: list[str]) -> pd.DataFrame:
    wide = frame.pivot(index=DATE_COL, columns=TICKER_COL, values=column)
    return wide.reindex(columns=tickers)


def _numeric(frame: pd.DataFrame, column: str) -> None:
    try:
        frame[column] = pd.to_numeric(frame[column])
    except (ValueError, TypeError) as e:
        raise PanelIncomplete(f"{column} column is not numeric: {e}") from e


def _book_flags(
    frame: pd.DataFrame, tickers: list[str], book_values: npt.NDArray[np.float64]
) -> tuple[npt.NDArray[np.bool_], bool]:
    """
    Jump flags and whether the books move continuously. An explicit flag
    column that is all zero while the books move marks continuously updated
    books; once any step is flagged, every book move must be flagged.
    """
    changed = np.concatenate([[False], np.any(book_values[1:] != book_values[:-1], axis=1)])
    if BOOK_UPDATED_COL not in frame.columns:
        logger.warning("no %s column; inferred %d book updates", BOOK_UPDATED_COL, int(changed.sum()))
        return changed, False
    flags = _pivot(frame, BOOK_UPDATED_COL, tickers).sort_index().fillna(0).to_numpy() != 0
    flags = flags.any(axis=1)
    unflagged = changed & ~flags
    if not unflagged.any():
        return flags, False
    if flags[1:].any():
        step = int(np.argmax(unflagged))
        raise UnflaggedBookChange(f"books change at unflagged step {step}")
    logger.info("books move at %d steps with no update flagged; continuous books", int(unflagged.sum()))
    return flags, True


def _times(frame: pd.DataFrame, tickers: list[str], dates: pd.DatetimeIndex) -> npt.NDArray[np.float64]:
    """The `time` column when present, else calendar years since the first date."""
    if TIME_COL not in frame.columns:
        return (dates - dates[0]).days.to_numpy() / DAYS_PER_YEAR
    wide = _pivot(frame, TIME_COL, tickers).sort_index().to_numpy(dtype=np.float64)
    if np.any(wide != wide[:, :1]):
        step = int(np.argmax(np.any(wide != wide[:, :1], axis=1)))
        raise PanelIncomplete(f"tickers disagree on {TIME_COL} on {dates[step]:%Y-%m-%d}")
    return wide[:, 0].copy()


def panel_from_frame(frame: pd.DataFrame, tickers: Optional[list[str]] = None) -> MarketSeries:
    missing = {DATE_COL, TICKER_COL, CAP_COL, BOOK_COL} - set(frame.columns)
    if missing:
        raise PanelIncomplete(f"panel is missing columns {sorted(missing)}")
    frame = frame.copy()
    frame[TICKER_COL] = frame[TICKER_COL].astype(str)
    try:
        frame[DATE_COL] = pd.to_datetime(frame[DATE_COL])
    except (ValueError, TypeError) as e:
        raise PanelIncomplete(f"unreadable {DATE_COL}: {e}") from e
    for column in (CAP_COL, BOOK_COL, BOOK_UPDATED_COL, TIME_COL):
        if column in frame.columns:
            _numeric(frame, column)

    if tickers is None:
        tickers = list(dict.fromkeys(frame[TICKER_COL]))
    extra = sorted(set(frame[TICKER_COL]) - set(tickers))
    if extra:
        raise PanelIncomplete(f"tickers outside the universe: {extra}")
    duplicated = frame.duplicated([DATE_COL, TICKER_COL])
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise PanelIncomplete(f"{row[TICKER_COL]} appears twice on {row[DATE_COL]:%Y-%m-%d}")

    caps = _pivot(frame, CAP_COL, tickers).sort_index()
    books = _pivot(frame, BOOK_COL, tickers).sort_index()
    gaps = caps.isna() | books.isna()
    if gaps.to_numpy().any():
        date, ticker = gaps.stack()[lambda s: s].index[0]
        raise PanelIncomplete(f"no row for {ticker} on {date:%Y-%m-%d}")

    book_values = books.to_numpy(dtype=np.float64)
    flags, continuous = _book_flags(frame, tickers, book_values)
    dates = pd.DatetimeIndex(caps.index)
    series = MarketSeries(
        times=_times(frame, tickers, dates),
        caps=caps.to_numpy(dtype=np.float64),
        books=book_values,
        book_updated=flags,
        tickers=tuple(tickers),
        dates=tuple(dates.strftime("%Y-%m-%d")),
        books_continuous=continuous,
    )
    logger.info("loaded %d dates x %d tickers", series.n_steps, series.n_stocks)
    return series


def load_panel(data: Path, universe: Optional[Path] = None) -> MarketSeries:
    try:
        frame = pd.read_csv(data, dtype={TICKER_COL: str}, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise PanelIncomplete(f"cannot parse {data}: {e}") from e
    tickers = read_universe(universe) if universe is not None else None
    return panel_from_frame(frame, tickers)


def panel_frame(series: MarketSeries) -> pd.DataFrame:
    """Long format, dates outer and tickers inner in universe order."""
    n, d = series.n_steps, series.n_stocks
    if series.dates is not None:
        dates = list(series.dates)
    else:
        dates = list(pd.bdate_range("2000-01-03", periods=n).strftime("%Y-%m-%d"))
    return pd.DataFrame(
        {
            DATE_COL: np.repeat(dates, d),
            TICKER_COL: np.tile(series.tickers, n),
            CAP_COL: series.caps.reshape(-1),
            BOOK_COL: series.books.reshape(-1),
            BOOK_UPDATED_COL: np.repeat(series.book_updated.astype(int), d),
            TIME_COL: np.repeat(series.times, d),
        }
    )


def export_panel(series: MarketSeries, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / PANEL_NAME
    write_frame(panel_frame(series), path)
    write_universe(series.tickers, out_dir / UNIVERSE_NAME)
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False)
    logger.info("wrote %s (%d rows)", path, len(frame))


def write_json(obj: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
    logger.info("wrote %s", path)
