import logging

import numpy as np

from fgp_book.common import *
from fgp_book.types import FloatArray, MarketSeries, WeightPath

logger = logging.getLogger(__name__)


def canonical_decomposition(beta: FloatArray) -> tuple[FloatArray, FloatArray]:
    """
    Split each column of `beta` into nondecreasing paths g, h with
    g - h = beta, g(0) = beta(0) and h(0) = 0, using
    g(t_l) = g(t_{l-1}) + (d beta)^+ and h(t_l) = h(t_{l-1}) + (d beta)^-.

    g is rebuilt as beta + h so that the difference reproduces beta to the
    last bit; it still only moves where beta rises.
    """
    dbeta = np.diff(beta, axis=0)
    h = np.zeros_like(beta)
    h[1:] = np.cumsum(np.maximum(-dbeta, 0.0), axis=0)
    g = beta + h
    return g, h


def compute_weights(series: MarketSeries) -> WeightPath:
    caps = series.caps
    books = series.books
    mu = caps / caps.sum(axis=1, keepdims=True)
    beta = books / books.sum(axis=1, keepdims=True)
    rho = mu / beta
    g, h = canonical_decomposition(beta)
    logger.debug(
        "weights for %d steps x %d stocks, %d book updates",
        series.n_steps,
        series.n_stocks,
        int(series.book_updated.sum()),
    )
    return WeightPath(
        times=series.times,
        mu=mu,
        beta=beta,
        rho=rho,
        g=g,
        h=h,
        jumps=series.book_updated,
        tickers=series.tickers,
        dates=series.dates,
    )


def left_limits(path: WeightPath) -> tuple[FloatArray, FloatArray, FloatArray]:
    """The (t-) evaluation point per step: mu now, g and h before any jump at t."""
    return path.mu, path.g_minus, path.h_minus


def rho_bounds(path: WeightPath, safety: float = RHO_SAFETY_FACTOR) -> tuple[float, float]:
    assert safety >= 1.0, f"safety factor must be at least 1, got {safety}"
    m = float(path.rho.min()) / safety
    M = float(path.rho.max()) * safety
    return m, M


def delta_bound(path: WeightPath, safety: float = DELTA_SAFETY_FACTOR) -> float:
    assert safety >= 1.0, f"safety factor must be at least 1, got {safety}"
    return float(path.beta.min()) / safety
