import logging
from dataclasses import replace

import numpy as np
import pytest

from fgp_book.errors import (
    BalanceMismatch,
    DerivativeMismatch,
    NonPositiveG,
    NotMonotone,
    UnbalancedWithJumps,
    ZeroWealth,
)
from fgp_book.fgp_engine import (
    GammaAccumulator,
    GeneratorSpec,
    accumulate_gamma,
    additive_strategy,
    arbitrage_certificate,
    check_generator,
    log_wealth_components,
    multiplicative_strategy,
    normalize_generator,
    prepare_generator,
    strong_arbitrage_horizon,
    weights_from_strategy,
)
from fgp_book.market_model import compute_weights, rho_bounds
from fgp_book.portfolio_zoo import book_value_generator, modified_book_value_generator
from fgp_book.sim_market import coarsen, replicate, simulate
from fgp_book.types import FloatArray, GammaLedger, WeightPath

from tests.common import (
    check_close,
    constant_generator,
    corrupt_generator,
    jump_path,
    sim_config,
    sim_path,
    sqrt_generator,
    square_generator,
    toy_series,
)

logger = logging.getLogger(__name__)


def ledger_from_gamma(gamma_c: FloatArray) -> GammaLedger:
    zeros = np.zeros_like(gamma_c)
    ones = np.ones_like(gamma_c)
    return GammaLedger(
        gamma=gamma_c,
        gamma_continuous=gamma_c,
        qv_term=gamma_c,
        gamma_integral_term=zeros,
        xi_integral_term=zeros,
        jump_term=zeros,
        local_time_term=zeros,
        values=ones,
        values_minus=ones,
    )


def check_ledger_reconciles(ledger: GammaLedger) -> None:
    parts = (
        ledger.qv_term
        + ledger.gamma_integral_term
        + ledger.xi_integral_term
        + ledger.local_time_term
    )
    check_close(ledger.gamma_continuous, parts, 1e-10)
    assert ledger.gamma[0] == 0
    assert ledger.gamma_continuous[0] == 0


def test_constant_generator_is_the_market():
    _, path = sim_path()
    ledger = accumulate_gamma(constant_generator(), path)
    check_close(ledger.gamma, 0.0, 0.0)
    sp = additive_strategy(constant_generator(), path)
    check_close(sp.holdings, 1.0, 1e-15)
    check_close(sp.wealth, 1.0, 1e-12)
    sp = multiplicative_strategy(constant_generator(), path)
    check_close(sp.holdings, 1.0, 1e-15)
    check_close(weights_from_strategy(sp, path), path.mu, 1e-15)


def test_square_generator_one_step():
    series = toy_series([[0.5, 0.5], [0.6, 0.4]], [[1.0, 1.0], [1.0, 1.0]])
    ledger = accumulate_gamma(square_generator(), compute_weights(series))
    assert ledger.gamma[1] == pytest.approx(-0.02, abs=1e-15)
    assert ledger.gamma_continuous[1] == pytest.approx(-0.02, abs=1e-15)
    check_ledger_reconciles(ledger)


def test_gamma_matches_direct_sum():
    _, path = sim_path(d=2)
    spec = prepare_generator(book_value_generator(), path)
    ledger = accumulate_gamma(book_value_generator(), path)

    direct = np.zeros(path.n_steps)
    integral = 0.0
    g0 = float(spec.value(path.mu[0], path.g[0], path.h[0]))
    for step in range(1, path.n_steps):
        prev = step - 1
        grad = spec.grad_mu(path.mu[prev], path.g[prev], path.h[prev])
        integral += float(np.dot(grad, path.mu[step] - path.mu[prev]))
        value = float(spec.value(path.mu[step], path.g[step], path.h[step]))
        direct[step] = g0 - value + integral
    check_close(ledger.gamma, direct, 1e-12)
    check_ledger_reconciles(ledger)


def test_additive_wealth_identity():
    _, path = sim_path(dt=1e-4, n_steps=2001)
    sp = additive_strategy(sqrt_generator(), path)
    oracle = replicate(sp, path)
    assert oracle.max_abs_gap <= 1e-3
    assert sp.max_gap == pytest.approx(oracle.max_abs_gap, abs=1e-12)
    check_close(sp.wealth, np.sum(sp.holdings * path.mu, axis=1), 1e-10)
    check_close(sp.closed_form_wealth, sp.ledger.values_minus + sp.ledger.gamma_continuous, 1e-12)


def test_multiplicative_wealth_identity():
    _, path = sim_path(dt=1e-4, n_steps=2001)
    sp = multiplicative_strategy(sqrt_generator(), path)
    assert replicate(sp, path).max_abs_gap <= 1e-3


def test_multiplicative_matches_log_decomposition():
    _, path = sim_path()
    sp = multiplicative_strategy(sqrt_generator(), path)
    parts = log_wealth_components(sp.ledger)
    check_close(parts.total, np.log(sp.closed_form_wealth), 1e-8)


@pytest.mark.parametrize("jumps", [False, True])
def test_book_value_portfolio_holds_beta(jumps: bool):
    _, path = jump_path() if jumps else sim_path()
    sp = multiplicative_strategy(book_value_generator(), path)
    check_close(weights_from_strategy(sp, path), path.beta_minus, 1e-12)
    check_close(weights_from_strategy(sp, path, after=True), path.beta, 1e-12)
    check_close(sp.defect_Q, 0.0, 1e-3)


def test_jump_value_equals_generator_jump():
    _, path = jump_path()
    flagged = np.flatnonzero(path.jumps)
    assert len(flagged) >= 2
    sp = additive_strategy(book_value_generator(), path)
    theta_jump = np.sum((sp.theta_after - sp.theta)[flagged] * path.mu[flagged], axis=1)
    g_jump = (sp.ledger.values - sp.ledger.values_minus)[flagged]
    check_close(theta_jump, g_jump, 1e-10)
    assert replicate(sp, path).max_abs_gap <= 1e-3


def test_unbalanced_generator_rejects_jumps():
    _, path = jump_path()
    with pytest.raises(UnbalancedWithJumps):
        additive_strategy(sqrt_generator(), path)
    with pytest.raises(UnbalancedWithJumps):
        multiplicative_strategy(sqrt_generator(), path)


def test_generator_checks():
    check = check_generator(book_value_generator(), 4)
    assert check.balance_residual <= 1e-9
    assert check.gradient_residual <= 1e-6
    with pytest.raises(DerivativeMismatch) as info:
        check_generator(corrupt_generator(), 4)
    assert info.value.code == "DERIVATIVE_MISMATCH"
    with pytest.raises(BalanceMismatch):
        check_generator(replace(sqrt_generator(), is_balanced=True), 4)


def test_normalization():
    _, path = sim_path()
    mu0, g0, h0 = path.mu[0], path.g[0], path.h[0]
    spec = normalize_generator(square_generator(), mu0, g0, h0)
    assert float(spec.value(mu0, g0, h0)) == pytest.approx(1.0)

    zero = replace(square_generator(), value=lambda mu, g, h: np.sum(mu**2, axis=-1) - np.sum(mu0**2))
    shifted = normalize_generator(zero, mu0, g0, h0)
    assert float(shifted.value(mu0, g0, h0)) == pytest.approx(1.0)
    assert not shifted.is_balanced

    negative = replace(square_generator(), value=lambda mu, g, h: -np.sum(mu**2, axis=-1))
    with pytest.raises(NonPositiveG):
        normalize_generator(negative, mu0, g0, h0)


def test_negative_generator_has_no_multiplicative_strategy():
    _, path = sim_path()
    base = square_generator()

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return -base.value(mu, g, h)

    def grad(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return -base.grad_mu(mu, g, h)

    def hess(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        assert base.hess_mu is not None
        return -base.hess_mu(mu, g, h)

    negative = GeneratorSpec("negative_square", value, grad, base.grad_g, base.grad_h, hess_mu=hess)
    with pytest.raises(NonPositiveG):
        multiplicative_strategy(negative, path)


def test_weights_from_holdings():
    _, path = sim_path()
    sp = additive_strategy(constant_generator(), path)
    same = replace(sp, holdings=np.full_like(path.mu, 3.0))
    check_close(weights_from_strategy(same, path), path.mu, 1e-15)
    inverse = replace(sp, holdings=1.0 / path.mu)
    check_close(weights_from_strategy(inverse, path), 1.0 / path.n_stocks, 1e-15)
    zero = np.zeros_like(path.mu)
    zero[:, 0] = path.mu[:, 1]
    zero[:, 1] = -path.mu[:, 0]
    with pytest.raises(ZeroWealth):
        weights_from_strategy(replace(sp, holdings=zero), path)


def test_arbitrage_certificate():
    assert arbitrage_certificate(ledger_from_gamma(np.zeros(10)), 1.0) is None
    gamma = np.linspace(0.0, 4.0, 9)
    step = arbitrage_certificate(ledger_from_gamma(gamma), 2.0)
    assert step == 5
    assert gamma[step] > 2.0 >= gamma[step - 1]
    with pytest.raises(NotMonotone):
        arbitrage_certificate(ledger_from_gamma(np.array([0.0, 1.0, 0.5])), 2.0)


def test_arbitrage_certificate_needs_nonnegative_generator():
    ledger = replace(ledger_from_gamma(np.linspace(0.0, 4.0, 9)), values=np.linspace(1.0, -1.0, 9))
    with pytest.raises(NonPositiveG):
        arbitrage_certificate(ledger, 2.0)
    ledger = replace(ledger, values=np.zeros(9))
    assert arbitrage_certificate(ledger, 2.0) == 5


def test_modified_book_value_threshold_and_scan():
    _, path = sim_path(n_steps=1001)
    m, M = rho_bounds(path)
    spec = modified_book_value_generator(m, M)
    ledger = accumulate_gamma(spec, path)
    rho0, beta0 = path.rho[0], path.beta[0]
    threshold = float(np.prod((rho0 * np.exp(1.0 - np.log(M))) ** beta0))
    assert ledger.g0 == pytest.approx(threshold, rel=1e-12)

    target = 0.5 * float(ledger.gamma_continuous[-1])
    step = arbitrage_certificate(ledger, target)
    assert step is not None
    assert ledger.gamma_continuous[step] > target >= ledger.gamma_continuous[step - 1]

    horizon = strong_arbitrage_horizon(spec, path)
    if horizon is not None:
        step, time = horizon
        assert ledger.gamma_continuous[step] > ledger.g0
        assert time == path.times[step]


def check_accumulator(path: WeightPath) -> None:
    spec = prepare_generator(book_value_generator(), path)
    acc = GammaAccumulator(spec, path.mu[0], path.g[0], path.h[0])
    for step in range(1, path.n_steps):
        acc.advance(path.mu[step], path.g[step], path.h[step], bool(path.jumps[step]))
    additive = additive_strategy(book_value_generator(), path)
    multiplicative = multiplicative_strategy(book_value_generator(), path)
    assert acc.gamma_continuous == pytest.approx(additive.ledger.gamma_continuous[-1], abs=1e-12)
    check_close(acc.holdings("additive"), additive.holdings_after[-1], 1e-9)
    check_close(acc.holdings("multiplicative"), multiplicative.holdings_after[-1], 1e-9)


def test_accumulator_matches_ledger():
    check_accumulator(sim_path()[1])
    check_accumulator(jump_path()[1])


@pytest.mark.slow
def test_additive_gap_shrinks_under_refinement():
    levels = 3
    gaps = np.zeros((levels, 4))
    for seed in range(4):
        fine = simulate(sim_config(dt=2.5e-4, n_steps=4001, seed=seed))
        for level in range(levels):
            path = compute_weights(coarsen(fine, 2 ** (levels - 1 - level)))
            gaps[level, seed] = additive_strategy(sqrt_generator(), path).max_gap
    mean_gap = gaps.mean(axis=1)
    logger.info("mean gaps by level: %s", mean_gap)
    assert np.all(np.diff(mean_gap) <= 0)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    test_square_generator_one_step()
    test_gamma_matches_direct_sum()
    test_additive_wealth_identity()
    test_jump_value_equals_generator_jump()
