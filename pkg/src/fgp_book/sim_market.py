"""
Synthetic markets and the share-level replication oracle. Nothing here
shares integration code with fgp_engine; the oracle walks the holdings step
by step.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable

import numpy as np
import pandas as pd

from fgp_book.common import *
from fgp_book.errors import BadCovariance, LengthMismatch
from fgp_book.types import FloatArray, MarketSeries, OraclePath, SimConfig, StrategyPath, WeightPath

logger = logging.getLogger(__name__)

DEFAULT_VOL = 0.2
DEFAULT_DRIFT = 0.05
COVARIANCE_TOL = 1e-12


def covariance_of(config: SimConfig) -> FloatArray:
    """Covariance per unit time, from `covariance`, `vol_matrix` or 0.2^2 I."""
    d = config.d
    if config.covariance is not None:
        cov = np.asarray(config.covariance, dtype=np.float64)
    elif config.vol_matrix is not None:
        loadings = np.asarray(config.vol_matrix, dtype=np.float64)
        if loadings.ndim != 2 or loadings.shape[0] != d:
            raise BadCovariance(f"vol_matrix must have {d} rows, got shape {loadings.shape}")
        cov = loadings @ loadings.T
    else:
        cov = DEFAULT_VOL**2 * np.eye(d)
    if cov.shape != (d, d):
        raise BadCovariance(f"covariance must be {d}x{d}, got {cov.shape}")
    if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, atol=COVARIANCE_TOL):
        raise BadCovariance("covariance must be finite and symmetric")
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues.min() < -COVARIANCE_TOL * max(1.0, float(np.abs(eigenvalues).max())):
        raise BadCovariance(f"covariance has eigenvalue {eigenvalues.min():.3e}")
    return cov


def _factor(cov: FloatArray) -> FloatArray:
    eigenvalues, vectors = np.linalg.eigh(cov)
    return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def _vector(values: list[float] | None, default: FloatArray) -> FloatArray:
    return default if values is None else np.asarray(values, dtype=np.float64)


def _continuous_books(config: SimConfig, times: FloatArray, b0: FloatArray) -> FloatArray:
    """
    db/b = (book_drift + book_wave sin(2 pi t / book_period + phase_i)) dt,
    integrated exactly.
    """
    d = config.d
    drift = _vector(config.book_drift, np.full(d, DEFAULT_DRIFT))
    phase = 2.0 * np.pi * np.arange(d) / d
    omega = 2.0 * np.pi / config.book_period
    t = times[:, None]
    wave = -(config.book_wave / omega) * (np.cos(omega * t + phase) - np.cos(phase))
    return b0 * np.exp(drift * t + wave)


def _jump_books(
    config: SimConfig, rng: np.random.Generator, b0: FloatArray
) -> tuple[FloatArray, FloatArray]:
    d, n = config.d, config.n_steps
    drift = _vector(config.book_drift, np.full(d, DEFAULT_DRIFT))
    every = max(1, int(round(config.jump_period / config.dt)))
    flags = np.zeros(n, dtype=bool)
    flags[every::every] = True
    sizes = np.zeros((n, d))
    vol = config.book_jump_vol
    n_jumps = int(flags.sum())
    sizes[flags] = (
        drift * config.jump_period - 0.5 * vol**2 + vol * rng.standard_normal((n_jumps, d))
    )
    return b0 * np.exp(np.cumsum(sizes, axis=0)), flags


def simulate(config: SimConfig) -> MarketSeries:
    """
    Log-Euler paths of the capitalizations,
    log S(t + dt) = log S(t) + (a - sigma_ii / 2) dt + L dW,
    with books either drifting smoothly or jumping once per `jump_period`.
    """
    d, n, dt = config.d, config.n_steps, config.dt
    cov = covariance_of(config)
    rng = np.random.default_rng(config.seed)

    drifts = _vector(config.drifts, np.full(d, DEFAULT_DRIFT))
    caps0 = _vector(config.initial_caps, np.linspace(2.0, 1.0, d))
    books0 = _vector(config.initial_books, np.linspace(1.0, 2.0, d))

    shocks = rng.standard_normal((n - 1, d)) @ _factor(cov).T * np.sqrt(dt)
    log_moves = (drifts - 0.5 * np.diag(cov)) * dt + shocks
    log_caps = np.vstack([np.zeros((1, d)), np.cumsum(log_moves, axis=0)])
    caps = caps0 * np.exp(log_caps)
    times = np.arange(n) * dt

    match config.book_mode:
        case "continuous":
            books = _continuous_books(config, times, books0)
            flags = np.zeros(n, dtype=bool)
            continuous = True
        case "annual_jump":
            books, flags = _jump_books(config, rng, books0)
            continuous = False

    dates = tuple(pd.bdate_range(config.start_date, periods=n).strftime("%Y-%m-%d"))
    logger.debug("simulated %d steps x %d stocks (seed %d, %s books)", n, d, config.seed, config.book_mode)
    return MarketSeries(
        times=times,
        caps=caps,
        books=books,
        book_updated=flags,
        dates=dates,
        books_continuous=continuous,
    )


def simulate_many(config: SimConfig, seeds: Iterable[int]) -> list[MarketSeries]:
    configs = [config.model_copy(update={"seed": seed}) for seed in seeds]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(simulate, configs))


def coarsen(series: MarketSeries, factor: int) -> MarketSeries:
    """
    Keep every `factor`-th step. A kept step is flagged if any step since the
    previous kept one was.
    """
    assert factor >= 1, f"factor must be positive, got {factor}"
    keep = np.arange(0, series.n_steps, factor)
    seen = np.cumsum(series.book_updated)[keep]
    flags = np.concatenate([[False], np.diff(seen) > 0])
    dates = None if series.dates is None else tuple(series.dates[i] for i in keep)
    return MarketSeries(
        times=series.times[keep],
        caps=series.caps[keep],
        books=series.books[keep],
        book_updated=flags,
        tickers=series.tickers,
        dates=dates,
        books_continuous=series.books_continuous,
    )


def replicate(sp: StrategyPath, path: WeightPath) -> OraclePath:
    """
    Trade the holdings one step at a time. Going into step l the position is
    `holdings[l]`; a rebalance to `holdings_after[l]` at a flagged step is
    credited at that step's weights, and the position then rides mu to the
    next step.
    """
    if sp.holdings.shape != path.mu.shape or sp.holdings_after.shape != path.mu.shape:
        raise LengthMismatch(
            f"holdings {sp.holdings.shape} do not match weights {path.mu.shape}"
        )
    n = path.n_steps
    wealth = np.empty(n)
    corrections = np.zeros(n)
    wealth[0] = float(np.dot(sp.holdings[0], path.mu[0]))
    for step in range(1, n):
        prev = step - 1
        if path.jumps[prev]:
            corrections[prev] = float(
                np.dot(sp.holdings_after[prev] - sp.holdings[prev], path.mu[prev])
            )
        move = path.mu[step] - path.mu[prev]
        wealth[step] = wealth[prev] + corrections[prev] + float(np.dot(sp.holdings_after[prev], move))
    if path.jumps[-1]:
        corrections[-1] = float(np.dot(sp.holdings_after[-1] - sp.holdings[-1], path.mu[-1]))
    gap = float(np.max(np.abs(wealth - sp.closed_form_wealth)))
    logger.debug("replication gap %.3e over %d steps", gap, n)
    return OraclePath(
        replicated_wealth=wealth,
        closed_form_wealth=sp.closed_form_wealth,
        jump_corrections=corrections,
        max_abs_gap=gap,
    )
