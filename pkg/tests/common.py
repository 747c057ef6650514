from pathlib import Path
from typing import Any

import numpy as np

from fgp_book.fgp_engine import GeneratorSpec
from fgp_book.market_model import compute_weights
from fgp_book.portfolio_zoo import book_value_generator
from fgp_book.sim_market import simulate
from fgp_book.types import FloatArray, MarketSeries, SimConfig, WeightPath

TEST_DATA = Path("tests/test_data")
TOY_PANEL = TEST_DATA / "toy_panel.csv"
TOY_PANEL_INFERRED = TEST_DATA / "toy_panel_inferred.csv"
TOY_PANEL_GAP = TEST_DATA / "toy_panel_gap.csv"
TOY_UNIVERSE = TEST_DATA / "toy_universe.txt"


def sim_config(**overrides: Any) -> SimConfig:
    base: dict[str, Any] = {"d": 3, "n_steps": 501, "dt": 1e-3, "seed": 7}
    base.update(overrides)
    return SimConfig(**base)


def sim_path(**overrides: Any) -> tuple[MarketSeries, WeightPath]:
    series = simulate(sim_config(**overrides))
    return series, compute_weights(series)


def jump_path(**overrides: Any) -> tuple[MarketSeries, WeightPath]:
    overrides.setdefault("book_mode", "annual_jump")
    overrides.setdefault("jump_period", 0.125)
    return sim_path(**overrides)


def toy_series(
    caps: list[list[float]], books: list[list[float]], flags: list[bool] | None = None
) -> MarketSeries:
    n = len(caps)
    return MarketSeries(
        times=np.arange(n, dtype=np.float64),
        caps=np.array(caps, dtype=np.float64),
        books=np.array(books, dtype=np.float64),
        book_updated=np.zeros(n, dtype=bool) if flags is None else np.array(flags),
    )


def _zero(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
    return np.zeros_like(mu)


def constant_generator() -> GeneratorSpec:
    """G = 1, which generates the market."""

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.ones(mu.shape[:-1])

    def hess(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.zeros(mu.shape + (mu.shape[-1],))

    return GeneratorSpec("constant", value, _zero, _zero, _zero, hess_mu=hess)


def square_generator() -> GeneratorSpec:
    """G = sum mu^2, no dependence on books."""

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.sum(mu**2, axis=-1)

    def grad(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 2.0 * mu

    def hess(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 2.0 * np.broadcast_to(np.eye(mu.shape[-1]), mu.shape + (mu.shape[-1],)).copy()

    return GeneratorSpec("square", value, grad, _zero, _zero, hess_mu=hess)


def sqrt_generator() -> GeneratorSpec:
    """G = sum sqrt(mu) / sqrt(d), concave and unbalanced."""

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.sum(np.sqrt(mu), axis=-1) / np.sqrt(mu.shape[-1])

    def grad(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 0.5 / np.sqrt(mu) / np.sqrt(mu.shape[-1])

    return GeneratorSpec("sqrt", value, grad, _zero, _zero)


def rho_sum_generator() -> GeneratorSpec:
    """G = sum_i mu_i / (g_i - h_i), the sum of market-to-book ratios."""

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.sum(mu / (g - h), axis=-1)

    def grad_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 1.0 / (g - h)

    def grad_g(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return -mu / (g - h) ** 2

    def grad_h(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return mu / (g - h) ** 2

    def hess(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.zeros(mu.shape + (mu.shape[-1],))

    return GeneratorSpec("rho_sum", value, grad_mu, grad_g, grad_h, hess_mu=hess, is_balanced=True)


def corrupt_generator() -> GeneratorSpec:
    """The book-value generator with a wrong mu-gradient."""
    spec = book_value_generator()

    def grad_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 1.1 * spec.grad_mu(mu, g, h)

    return GeneratorSpec(
        "corrupt_book_value",
        spec.value,
        grad_mu,
        spec.grad_g,
        spec.grad_h,
        hess_mu=spec.hess_mu,
        is_balanced=False,
    )


def check_close(actual: Any, expected: Any, tol: float) -> None:
    gap = float(np.max(np.abs(np.asarray(actual) - np.asarray(expected))))
    assert gap <= tol, f"max deviation {gap:.3e} exceeds {tol:.1e}"
