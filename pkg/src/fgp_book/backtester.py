import logging
from typing import Callable, Literal, Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from fgp_book.common import *
from fgp_book.errors import LengthMismatch, LookAheadViolation, WeightSumError
from fgp_book.market_model import compute_weights
from fgp_book.types import BacktestResult, FloatArray, MarketSeries, MarketSummary, WeightPath

logger = logging.getLogger(__name__)

ViewField = Literal["times", "caps", "books", "mu", "beta", "rho", "g", "h", "jumps"]


class MarketView:
    """
    The market as known at decision step `last`. With `truncate` every
    history ends at `last` and asking for a later row raises
    LookAheadViolation; without it the full series is exposed, which only
    predictable rules survive unchanged.
    """

    def __init__(
        self, series: MarketSeries, path: WeightPath, last: int, truncate: bool = True
    ):
        assert 0 <= last < series.n_steps, f"step {last} outside the series"
        self.last = last
        self.truncate = truncate
        self.tickers = series.tickers
        self._fields: dict[str, npt.NDArray[np.generic]] = {
            "times": series.times,
            "caps": series.caps,
            "books": series.books,
            "mu": path.mu,
            "beta": path.beta,
            "rho": path.rho,
            "g": path.g,
            "h": path.h,
            "jumps": path.jumps,
        }

    @property
    def n_stocks(self) -> int:
        return self._fields["caps"].shape[1]

    def history(self, field: ViewField) -> FloatArray:
        arr = self._fields[field]
        out = arr[: self.last + 1] if self.truncate else arr[:]
        out.setflags(write=False)
        return out

    def at(self, field: ViewField, step: int) -> FloatArray:
        if self.truncate and step > self.last:
            raise LookAheadViolation(f"asked for {field} at step {step} from step {self.last}")
        row = self._fields[field][step]
        if isinstance(row, np.ndarray):
            row = row.view()
            row.setflags(write=False)
        return row

    def current(self, field: ViewField) -> FloatArray:
        return self.at(field, self.last)


WeightRule = Callable[[MarketView], npt.ArrayLike]


def run_backtest(
    series: MarketSeries,
    weight_rule: WeightRule,
    name: str = "portfolio",
    truncate: bool = True,
    path: Optional[WeightPath] = None,
) -> BacktestResult:
    """
    Rebalance once per step: the weights decided from data up to t_{l-1}
    are held over (t_{l-1}, t_l], so
    W(t_l) = W(t_{l-1}) sum_i pi_i(t_{l-1}) S_i(t_l) / S_i(t_{l-1}),
    starting from W(t_0) = total capitalization at t_0.
    """
    if path is None:
        path = compute_weights(series)
    n, d = series.caps.shape
    weights = np.empty((n, d))
    for step in range(n):
        pi = np.asarray(weight_rule(MarketView(series, path, step, truncate)), dtype=np.float64)
        if pi.shape != (d,):
            raise WeightSumError(f"{name}: rule returned shape {pi.shape} at step {step}")
        total = pi.sum()
        if not np.isfinite(total) or abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise WeightSumError(f"{name}: weights sum to {total} at step {step}")
        weights[step] = pi

    growth = series.caps[1:] / series.caps[:-1]
    period = np.sum(weights[:-1] * growth, axis=1)
    wealth = series.total_cap[0] * np.concatenate([[1.0], np.cumprod(period)])
    relative_value = wealth / series.total_cap

    drifted = weights[:-1] * growth
    drifted /= drifted.sum(axis=1, keepdims=True)
    turnover = np.concatenate([[0.0], np.abs(weights[1:] - drifted).sum(axis=1)])

    logger.info("backtest %s: final relative value %.6f", name, relative_value[-1])
    return BacktestResult(
        name=name,
        times=series.times,
        wealth=wealth,
        relative_value=relative_value,
        weights_used=weights,
        turnover=turnover,
        dates=series.dates,
    )


def _max_drawdown(log_value: FloatArray) -> float:
    return float(np.max(np.maximum.accumulate(log_value) - log_value))


def compare_to_market(result: BacktestResult) -> MarketSummary:
    """
    Final relative value, the largest drop of log V from a running peak, and
    the change of log V over each calendar year (or each unit of time when
    the series carries no dates).
    """
    log_value = result.log_relative_value
    if result.dates is not None:
        index = pd.to_datetime(list(result.dates)).year
    else:
        index = pd.Index(np.floor(result.times).astype(int))
    series = pd.Series(log_value, index=index)
    year_end = series.groupby(level=0).last()
    year_start = year_end.shift(1).fillna(series.iloc[0])
    per_year = {str(year): float(change) for year, change in (year_end - year_start).items()}
    return MarketSummary(
        final_value=float(result.relative_value[-1]),
        max_drawdown=_max_drawdown(log_value),
        per_year_log_value=per_year,
    )


def relative_to_benchmark(result: BacktestResult, benchmark: BacktestResult) -> FloatArray:
    """Value of `result` measured in units of `benchmark` instead of the market."""
    if result.relative_value.shape != benchmark.relative_value.shape:
        raise LengthMismatch(
            f"{result.name} has {len(result.relative_value)} steps, "
            f"{benchmark.name} has {len(benchmark.relative_value)}"
        )
    return result.relative_value / benchmark.relative_value
