"""
Ranks, local times of rank gaps and generation from functions of ranked
market-to-book ratios.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt

from fgp_book.common import *
from fgp_book.errors import JumpsNotSupported
from fgp_book.fgp_engine import (
    LogWealthComponents,
    additive_from_ledger,
    cumulative,
    log_wealth_components,
    multiplicative_from_ledger,
)
from fgp_book.types import (
    FloatArray,
    GammaLedger,
    LocalTimeSet,
    RankFrame,
    StrategyPath,
    TieReport,
    WeightPath,
)

logger = logging.getLogger(__name__)

RankEvaluator = Callable[[FloatArray], FloatArray]

_HESS_BLOCK = 1 << 22


@dataclass(frozen=True)
class RankGenerator:
    """
    A function G of a descending-ranked vector. Callables are vectorized over
    leading axes: `value` maps (..., d) to (...), `grad` to (..., d) with
    entry k the derivative in rank k, `hess` to (..., d, d).
    """

    name: str
    value: RankEvaluator
    grad: RankEvaluator
    hess: RankEvaluator


def constant_rebalanced_generator(c: npt.ArrayLike) -> RankGenerator:
    """G = prod_k nu_[k]^c_k, which holds the fraction c_k in rank k."""
    coef = np.asarray(c, dtype=np.float64)

    def value(nu: FloatArray) -> FloatArray:
        return np.exp(np.sum(coef * np.log(nu), axis=-1))

    def grad(nu: FloatArray) -> FloatArray:
        return coef / nu * value(nu)[..., None]

    def hess(nu: FloatArray) -> FloatArray:
        a = coef / nu
        outer = a[..., :, None] * a[..., None, :]
        diag = np.zeros_like(outer)
        idx = np.arange(nu.shape[-1])
        diag[..., idx, idx] = coef / nu**2
        return (outer - diag) * value(nu)[..., None, None]

    label = "/".join(f"{x:g}" for x in coef)
    return RankGenerator(name=f"rank_cr[{label}]", value=value, grad=grad, hess=hess)


# ---------------------------------------------------------------------------
# Ranks
# ---------------------------------------------------------------------------


def rank_path(values: npt.ArrayLike) -> RankFrame:
    """
    Rank every row in descending order. Equal values keep index order, so
    the smaller index gets the higher rank.
    """
    arr = np.asarray(values, dtype=np.float64)
    assert arr.ndim == 2, f"expected a (steps, stocks) matrix, got shape {arr.shape}"
    assert np.all(np.isfinite(arr)), "cannot rank non-finite values"
    perm = np.argsort(-arr, axis=1, kind="stable")
    ranked = np.take_along_axis(arr, perm, axis=1)
    inverse = np.empty_like(perm)
    ranks = np.broadcast_to(np.arange(arr.shape[1]), perm.shape)
    np.put_along_axis(inverse, perm, ranks, axis=1)
    return RankFrame(ranked_values=ranked, perm=perm, inverse_perm=inverse)


def tie_diagnostics(frame: RankFrame) -> TieReport:
    gaps = frame.ranked_values[:, :-1] - frame.ranked_values[:, 1:]
    tied = gaps == 0
    two_way = int(np.any(tied, axis=1).sum())
    three_way = int(np.any(tied[:, :-1] & tied[:, 1:], axis=1).sum())
    if three_way:
        logger.warning("%d steps have a three-way tie in ranks", three_way)
    return TieReport(two_way_steps=two_way, three_way_steps=three_way, n_steps=frame.n_steps)


def estimate_local_times(frame: RankFrame) -> LocalTimeSet:
    """
    Local time at 0 of each gap nu_[k] - nu_[k+1], from the ranked-process
    identity for the top-k sum T_k:
    dT_k = sum_{j<=k} d nu_{r(j)} + dL_k / 2.
    Over one step the names that held ranks 1..k at its start are carried
    forward, so dL_k is twice the amount by which the sorted top-k sum now
    beats theirs. For two names this is the Tanaka sum with sgn(0) = -1;
    without a change of top-k membership the increment is zero.
    A change of membership within a step counts even when the gap is
    positive at both ends: names ranked (2, 1) moving to (1, 2) give an
    increment of 2 * (2 - 1) = 2.
    """
    ranked = frame.ranked_values
    assert frame.n_steps >= 2, "need at least two steps"
    carried = np.take_along_axis(frame.inverse_perm[1:], frame.perm[:-1], axis=1)
    carried_values = np.take_along_axis(ranked[1:], carried, axis=1)
    excess = np.cumsum(ranked[1:], axis=1) - np.cumsum(carried_values, axis=1)
    raw = np.vstack([np.zeros((1, ranked.shape[1] - 1)), np.cumsum(2.0 * excess[:, :-1], axis=0)])
    local_time = np.maximum.accumulate(raw, axis=0)
    lt = LocalTimeSet(L=local_time, clamp=local_time - raw)
    if lt.clamp_total > CLAMP_WARN_TOTAL:
        logger.warning("local-time clamp added %.3e in total", lt.clamp_total)
    else:
        logger.debug("local-time clamp added %.3e in total", lt.clamp_total)
    return lt


# ---------------------------------------------------------------------------
# Generation by ranks of rho
# ---------------------------------------------------------------------------


def _frames(
    path: WeightPath, frame: Optional[RankFrame], lt: Optional[LocalTimeSet]
) -> tuple[RankFrame, LocalTimeSet]:
    if path.has_jumps:
        raise JumpsNotSupported("rank-based generation needs continuous book values")
    if frame is None:
        frame = rank_path(path.rho)
    if lt is None:
        lt = estimate_local_times(frame)
    assert frame.perm.shape == path.rho.shape, "rank frame and path are not aligned"
    assert lt.L.shape == (path.n_steps, path.n_stocks - 1), "local times and path are not aligned"
    return frame, lt


def ranked_theta(gen: RankGenerator, path: WeightPath, frame: RankFrame) -> FloatArray:
    """theta_i = D_k G / beta_i for the rank k that stock i holds."""
    by_stock = np.take_along_axis(gen.grad(frame.ranked_values), frame.inverse_perm, axis=1)
    return by_stock / path.beta


def ranked_gamma(
    gen: RankGenerator,
    path: WeightPath,
    frame: Optional[RankFrame] = None,
    lt: Optional[LocalTimeSet] = None,
) -> GammaLedger:
    frame, lt = _frames(path, frame, lt)
    nu = frame.ranked_values
    values = gen.value(nu)
    grad = gen.grad(nu)
    theta = ranked_theta(gen, path, frame)

    mu, beta = path.mu, path.beta
    dmu = np.diff(mu, axis=0)
    gamma = values[0] - values + cumulative(np.sum(theta[:-1] * dmu, axis=1))

    # d rho_i / d beta_i carried by the rank each stock holds
    sensitivity = (theta * path.rho)[:-1]
    g_inc = np.sum(sensitivity * np.diff(path.g, axis=0), axis=1)
    h_inc = -np.sum(sensitivity * np.diff(path.h, axis=0), axis=1)

    ranked_moves = np.take_along_axis(dmu / beta[:-1], frame.perm[:-1], axis=1)
    n, d = ranked_moves.shape
    qv_inc = np.empty(n)
    block = max(1, _HESS_BLOCK // (d * d))
    for start in range(0, n, block):
        rows = slice(start, start + block)
        z = ranked_moves[rows]
        qv_inc[rows] = np.einsum("lij,li,lj->l", gen.hess(nu[:-1][rows]), z, z)
    qv_inc *= -0.5

    lt_inc = 0.5 * np.sum((grad[:-1, 1:] - grad[:-1, :-1]) * np.diff(lt.L, axis=0), axis=1)

    qv_term = cumulative(qv_inc)
    gamma_integral_term = cumulative(g_inc)
    xi_integral_term = cumulative(h_inc)
    local_time_term = cumulative(lt_inc)
    return GammaLedger(
        gamma=gamma,
        gamma_continuous=qv_term + gamma_integral_term + xi_integral_term + local_time_term,
        qv_term=qv_term,
        gamma_integral_term=gamma_integral_term,
        xi_integral_term=xi_integral_term,
        jump_term=np.zeros_like(values),
        local_time_term=local_time_term,
        values=values,
        values_minus=values,
    )


def rank_multiplicative_strategy(
    gen: RankGenerator,
    path: WeightPath,
    frame: Optional[RankFrame] = None,
    lt: Optional[LocalTimeSet] = None,
) -> StrategyPath:
    frame, lt = _frames(path, frame, lt)
    ledger = ranked_gamma(gen, path, frame, lt)
    theta = ranked_theta(gen, path, frame)
    sp = multiplicative_from_ledger(theta, theta, ledger, path.mu)
    logger.debug("%s multiplicative: max replication gap %.3e", gen.name, sp.max_gap)
    return sp


def rank_additive_strategy(
    gen: RankGenerator,
    path: WeightPath,
    frame: Optional[RankFrame] = None,
    lt: Optional[LocalTimeSet] = None,
) -> StrategyPath:
    frame, lt = _frames(path, frame, lt)
    ledger = ranked_gamma(gen, path, frame, lt)
    theta = ranked_theta(gen, path, frame)
    sp = additive_from_ledger(theta, theta, ledger, path.mu)
    logger.debug("%s additive: max replication gap %.3e", gen.name, sp.max_gap)
    return sp


def leakage_decomposition(
    gen: RankGenerator,
    path: WeightPath,
    frame: Optional[RankFrame] = None,
    lt: Optional[LocalTimeSet] = None,
) -> LogWealthComponents:
    """
    Split log V of the multiplicative rank strategy into log G, the
    d beta integral (g and h parts), the quadratic term and the local-time
    term. For c = e_1 the last is -1/2 int dL_1 / rho_[1], the leakage.
    """
    return log_wealth_components(ranked_gamma(gen, path, frame, lt))
