import logging
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgp_book.attribution import (
    aggregate,
    attribute_series,
    attribution_frame,
    diagnostics_frame,
    distributional_component,
    local_time_correction,
    mtb_ratio_component,
    size_weight_ratios,
)
from fgp_book.backtester import MarketView, run_backtest
from fgp_book.errors import DegenerateWeights, LengthMismatch
from fgp_book.rank_engine import estimate_local_times, rank_path
from fgp_book.types import AttributionReport, FloatArray

from tests.common import check_close, sim_path

logger = logging.getLogger(__name__)


def equal_rule(view: MarketView):
    return np.full(view.n_stocks, 1.0 / view.n_stocks)


def test_two_stock_example():
    pi, mu0, mu1 = [0.5, 0.5], [0.8, 0.2], [0.6, 0.4]
    check_close(size_weight_ratios(pi, mu0), [[0.625, 2.5]], 1e-15)
    assert distributional_component(pi, mu0, mu1) == pytest.approx(np.log(1.375), abs=1e-15)
    assert distributional_component(mu0, mu0, mu1) == pytest.approx(0.0, abs=1e-15)
    assert distributional_component(pi, mu0, mu0) == pytest.approx(0.0, abs=1e-15)


def brute_force_mbrc(pi, mu0, mu1, rho_perm_t0, rho_perm_t1) -> float:
    """Move each stock to the stock holding its rho-rank at t1, by search."""
    d = len(pi)
    for sigma in permutations(range(d)):
        if all(sigma[rho_perm_t0[k]] == rho_perm_t1[k] for k in range(d)):
            return float(np.log(sum(pi[j] / mu0[j] * mu1[sigma[j]] for j in range(d))))
    raise AssertionError("no matching permutation")


@pytest.mark.parametrize("rho_perm_t1", [[0, 1], [1, 0]])
def test_mtb_component_matches_brute_force(rho_perm_t1: list[int]):
    pi, mu0, mu1 = [0.3, 0.7], [0.4, 0.6], [0.5, 0.5]
    rho_perm_t0 = [0, 1]
    value = mtb_ratio_component(pi, mu0, mu1, np.array(rho_perm_t0), np.array(rho_perm_t1))
    assert value == pytest.approx(brute_force_mbrc(pi, mu0, mu1, rho_perm_t0, rho_perm_t1), abs=1e-15)
    if rho_perm_t1 == [0, 1]:
        assert value == pytest.approx(0.0, abs=1e-15)
    else:
        assert value == pytest.approx(np.log(0.75 * 0.5 + 0.7 / 0.6 * 0.5))


def test_mtb_component_on_three_stocks():
    pi, mu0, mu1 = [0.2, 0.5, 0.3], [0.5, 0.3, 0.2], [0.4, 0.35, 0.25]
    for perm in permutations(range(3)):
        value = mtb_ratio_component(pi, mu0, mu1, np.array([2, 0, 1]), np.array(perm))
        assert value == pytest.approx(brute_force_mbrc(pi, mu0, mu1, [2, 0, 1], perm), abs=1e-14)


def simplex(values: list[float]) -> FloatArray:
    arr = np.array(values)
    return arr / arr.sum()


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=0.1, max_value=1.0), min_size=4, max_size=4),
    st.lists(st.integers(1, 1000), min_size=4, max_size=4, unique=True),
    st.lists(st.integers(1, 1000), min_size=4, max_size=4, unique=True),
    st.lists(st.integers(1, 1000), min_size=4, max_size=4, unique=True),
    st.permutations(range(4)),
)
def test_relabeling_invariance(pi_raw, mu0_raw, mu1_raw, rho_raw, relabel):
    pi, mu0, mu1 = simplex(pi_raw), simplex(mu0_raw), simplex(mu1_raw)
    rho0 = np.array(rho_raw, dtype=np.float64)
    rho1 = rho0[::-1].copy()
    order = np.array(relabel)

    def components(idx: FloatArray) -> tuple[float, float]:
        dc = distributional_component(pi[idx], mu0[idx], mu1[idx])
        mbrc = mtb_ratio_component(
            pi[idx],
            mu0[idx],
            mu1[idx],
            rank_path(rho0[idx][None, :]).perm[0],
            rank_path(rho1[idx][None, :]).perm[0],
        )
        return dc, mbrc

    base = components(np.arange(4))
    moved = components(order)
    assert moved == pytest.approx(base, abs=1e-14)


def test_market_has_no_attribution():
    series, path = sim_path(d=4)
    result = run_backtest(series, lambda view: view.current("mu"), "market", path=path)
    report = attribute_series(result, path)
    check_close(report.dc, 0.0, 1e-12)
    check_close(report.mbrc, 0.0, 1e-12)
    check_close(report.w, 1.0, 1e-12)
    check_close(report.v, 1.0, 1e-12)


def test_series_matches_per_period_recomputation():
    series, path = sim_path(d=4, n_steps=200)
    result = run_backtest(series, equal_rule, "equal", path=path)
    report = attribute_series(result, path)
    assert report.dc.shape == (path.n_steps - 1,)
    size_frame = rank_path(path.mu)
    rho_frame = rank_path(path.rho)
    lt = estimate_local_times(size_frame)
    for step in range(path.n_steps - 1):
        pi = result.weights_used[step]
        dc = distributional_component(pi, path.mu[step], path.mu[step + 1])
        mbrc = mtb_ratio_component(
            pi, path.mu[step], path.mu[step + 1], rho_frame.perm[step], rho_frame.perm[step + 1]
        )
        correction = local_time_correction(pi, size_frame, lt, step, step + 1)
        assert report.dc[step] == pytest.approx(dc, abs=1e-12)
        assert report.mbrc[step] == pytest.approx(mbrc, abs=1e-12)
        assert report.local_time_correction[step] == pytest.approx(correction, abs=1e-12)


def test_weight_ratios_reproduce_the_weights():
    series, path = sim_path(d=3)
    result = run_backtest(series, equal_rule, "equal", path=path)
    report = attribute_series(result, path)
    ranked = rank_path(path.mu).ranked_values[:-1]
    check_close(np.sum(report.w * ranked, axis=1), 1.0, 1e-12)


def test_errors():
    series, path = sim_path()
    result = run_backtest(series.truncated(100), equal_rule, "equal")
    with pytest.raises(LengthMismatch):
        attribute_series(result, path)
    with pytest.raises(DegenerateWeights):
        distributional_component([0.5, 0.5], [1.0, 0.0], [0.5, 0.5])
    # zero portfolio weights are fine
    assert np.isfinite(distributional_component([1.0, 0.0], [0.5, 0.5], [0.6, 0.4]))


def test_aggregate():
    report = AttributionReport(
        dc=np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
        mbrc=np.array([0.5, 0.5, 0.5, 0.5, 0.5]),
        w=np.ones((5, 2)),
        v=np.ones((5, 2)),
        local_time_correction=np.zeros(5),
    )
    frame = aggregate(report, 2)
    assert frame["first_step"].tolist() == [0, 2, 4]
    assert frame["DC"].tolist() == [3.0, 7.0, 5.0]
    assert frame["MBRC"].tolist() == [1.0, 1.0, 0.5]
    assert list(attribution_frame(report).columns) == ["step", "DC", "MBRC"]
    assert list(diagnostics_frame(report).columns) == ["step", "local_time_correction"]


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    test_two_stock_example()
    test_mtb_component_on_three_stocks()
    test_series_matches_per_period_recomputation()
