"""
Size and value attribution of relative returns. For a portfolio held over
(t0, t1] the distributional component DC compares it with the portfolio that
freezes its share counts per size rank, and the market-to-book ratio
component MBRC does the same per rank of rho.
"""

import logging
from typing import Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from fgp_book.common import *
from fgp_book.errors import DegenerateWeights, LengthMismatch
from fgp_book.rank_engine import estimate_local_times, rank_path
from fgp_book.types import (
    AttributionReport,
    BacktestResult,
    FloatArray,
    IntArray,
    LocalTimeSet,
    RankFrame,
    WeightPath,
)

logger = logging.getLogger(__name__)


def _positive(mu: FloatArray, label: str) -> FloatArray:
    if np.any(mu <= 0):
        raise DegenerateWeights(f"{label} has a zero market weight")
    return mu


def size_weight_ratios(pi: npt.ArrayLike, mu: npt.ArrayLike, perm: Optional[IntArray] = None) -> FloatArray:
    """w_k = pi_{p(k)} / mu_(k), with p the size permutation. Works row-wise."""
    pi_arr = np.atleast_2d(np.asarray(pi, dtype=np.float64))
    mu_arr = _positive(np.atleast_2d(np.asarray(mu, dtype=np.float64)), "mu")
    if perm is None:
        perm = rank_path(mu_arr).perm
    perm = np.atleast_2d(perm)
    return np.take_along_axis(pi_arr / mu_arr, perm, axis=1)


def mtb_weight_ratios(pi: npt.ArrayLike, mu: npt.ArrayLike, rho_perm: IntArray) -> FloatArray:
    """v_k = pi_{r(k)} / mu_{r(k)}, with r the permutation of descending rho."""
    pi_arr = np.atleast_2d(np.asarray(pi, dtype=np.float64))
    mu_arr = _positive(np.atleast_2d(np.asarray(mu, dtype=np.float64)), "mu")
    return np.take_along_axis(pi_arr / mu_arr, np.atleast_2d(rho_perm), axis=1)


def distributional_component(
    pi_t0: npt.ArrayLike,
    mu_t0: npt.ArrayLike,
    mu_t1: npt.ArrayLike,
    perm_t0: Optional[IntArray] = None,
    rank_t1: Optional[FloatArray] = None,
) -> float:
    """DC = log(sum_k w_k(t0) mu_(k)(t1))."""
    w = size_weight_ratios(pi_t0, mu_t0, perm_t0)[0]
    if rank_t1 is None:
        rank_t1 = rank_path(np.atleast_2d(mu_t1)).ranked_values[0]
    ranked = _positive(np.asarray(rank_t1, dtype=np.float64), "mu(t1)")
    return float(np.log(np.dot(w, ranked)))


def mtb_ratio_component(
    pi_t0: npt.ArrayLike,
    mu_t0: npt.ArrayLike,
    mu_t1: npt.ArrayLike,
    rho_perm_t0: IntArray,
    rho_perm_t1: IntArray,
) -> float:
    """MBRC = log(sum_k v_k(t0) mu_{r_t1(k)}(t1))."""
    v = mtb_weight_ratios(pi_t0, mu_t0, rho_perm_t0)[0]
    mu1 = _positive(np.asarray(mu_t1, dtype=np.float64), "mu(t1)")
    return float(np.log(np.dot(v, mu1[np.asarray(rho_perm_t1)])))


def local_time_correction(
    pi_t0: npt.ArrayLike,
    size_frame: RankFrame,
    lt: LocalTimeSet,
    t0: int,
    t1: int,
) -> float:
    """
    The local-time term that DC leaves out: with the share counts frozen
    at t0 and G(mu(t0)) = 1, (1/2) sum_k (w_{k+1} - w_k) (L_k(t1) - L_k(t0)).
    """
    assert 0 <= t0 < t1 < size_frame.n_steps, f"bad period ({t0}, {t1})"
    mu_t0 = np.take_along_axis(
        size_frame.ranked_values[t0], size_frame.inverse_perm[t0], axis=0
    )
    w = size_weight_ratios(pi_t0, mu_t0, size_frame.perm[t0])[0]
    return float(0.5 * np.dot(np.diff(w), lt.L[t1] - lt.L[t0]))


def attribute_series(
    result: BacktestResult,
    path: WeightPath,
    size_frame: Optional[RankFrame] = None,
    rho_frame: Optional[RankFrame] = None,
    lt: Optional[LocalTimeSet] = None,
) -> AttributionReport:
    """
    DC and MBRC for every period (t_l, t_{l+1}], using the weights the
    backtest held over that period.
    """
    if result.weights_used.shape != path.mu.shape:
        raise LengthMismatch(
            f"{result.name} has weights of shape {result.weights_used.shape}, "
            f"the path has {path.mu.shape}"
        )
    mu = _positive(path.mu, "mu")
    if size_frame is None:
        size_frame = rank_path(mu)
    if rho_frame is None:
        rho_frame = rank_path(path.rho)
    if lt is None:
        lt = estimate_local_times(size_frame)
    pi = result.weights_used[:-1]

    w = size_weight_ratios(pi, mu[:-1], size_frame.perm[:-1])
    dc = np.log(np.sum(w * size_frame.ranked_values[1:], axis=1))

    v = mtb_weight_ratios(pi, mu[:-1], rho_frame.perm[:-1])
    mu_by_rho = np.take_along_axis(mu[1:], rho_frame.perm[1:], axis=1)
    mbrc = np.log(np.sum(v * mu_by_rho, axis=1))

    correction = 0.5 * np.sum(np.diff(w, axis=1) * np.diff(lt.L, axis=0), axis=1)
    logger.info(
        "attribution %s: total DC %.6f, total MBRC %.6f", result.name, dc.sum(), mbrc.sum()
    )
    return AttributionReport(dc=dc, mbrc=mbrc, w=w, v=v, local_time_correction=correction)


def aggregate(report: AttributionReport, window: int) -> pd.DataFrame:
    """Sum DC, MBRC and the correction over blocks of `window` periods."""
    assert window >= 1, f"window must be positive, got {window}"
    frame = pd.DataFrame(
        {
            "DC": report.dc,
            "MBRC": report.mbrc,
            "local_time_correction": report.local_time_correction,
        }
    )
    block = np.arange(len(frame)) // window
    out = frame.groupby(block).sum()
    out.insert(0, "first_step", out.index * window)
    return out.reset_index(drop=True)


def attribution_frame(report: AttributionReport) -> pd.DataFrame:
    return pd.DataFrame(
        {"step": np.arange(len(report.dc)), "DC": report.dc, "MBRC": report.mbrc}
    )


def diagnostics_frame(report: AttributionReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "step": np.arange(len(report.dc)),
            "local_time_correction": report.local_time_correction,
        }
    )
