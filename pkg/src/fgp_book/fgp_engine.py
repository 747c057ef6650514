"""
Functional generation along a discrete path.

Integrals against mu are evaluated at the left point of every step, so the
integrand for (t_{l-1}, t_l] is read at (mu, g, h)(t_{l-1}). Increments of
g and h at flagged steps are jumps; all other increments are continuous.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Literal, Optional

import numpy as np

from fgp_book.common import *
from fgp_book.errors import (
    BalanceMismatch,
    DerivativeMismatch,
    JumpsNotSupported,
    NonPositiveG,
    NotMonotone,
    NumericalFailure,
    UnbalancedWithJumps,
    ZeroWealth,
)
from fgp_book.types import FloatArray, GammaLedger, StrategyKind, StrategyPath, WeightPath

logger = logging.getLogger(__name__)

Evaluator = Callable[[FloatArray, FloatArray, FloatArray], FloatArray]
PathCheck = Callable[[WeightPath], None]

# Upper bound on Hessian entries materialized at once.
_HESS_BLOCK = 1 << 22


@dataclass(frozen=True)
class GeneratorSpec:
    """
    A generating function G(mu, g, h) together with its partial derivatives.

    All callables are vectorized over leading axes: arguments have shape
    (..., d), `value` returns (...), the gradients (..., d) and `hess_mu`
    (..., d, d). Leaving `hess_mu` unset selects central differences of
    `grad_mu`.
    """

    name: str
    value: Evaluator
    grad_mu: Evaluator
    grad_g: Evaluator
    grad_h: Evaluator
    hess_mu: Optional[Evaluator] = None
    is_balanced: bool = False
    requires_continuous_aux: bool = False
    normalize_at_start: bool = False
    validate_path: Optional[PathCheck] = None

    def hessian(self, mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        if self.hess_mu is not None:
            return self.hess_mu(mu, g, h)
        return finite_difference_hessian(self.grad_mu, mu, g, h)


@dataclass(frozen=True)
class GeneratorCheck:
    name: str
    balance_residual: float
    gradient_residual: float
    hessian_residual: float


@dataclass(frozen=True, eq=False)
class LogWealthComponents:
    """
    Cumulative contributions to log V of the multiplicative strategy. The
    Gamma parts are sums of per-step increments divided by G at the start
    of the step.
    """

    log_g: FloatArray
    quadratic: FloatArray
    gamma_integral: FloatArray
    xi_integral: FloatArray
    local_time: FloatArray

    @property
    def total(self) -> FloatArray:
        return self.log_g + self.quadratic + self.gamma_integral + self.xi_integral + self.local_time


# ---------------------------------------------------------------------------
# Finite differences and self checks
# ---------------------------------------------------------------------------


def finite_difference_hessian(
    grad_mu: Evaluator, mu: FloatArray, g: FloatArray, h: FloatArray
) -> FloatArray:
    d = mu.shape[-1]
    step = FD_REL_STEP * np.maximum(np.abs(mu), FD_MIN_SCALE)
    out = np.empty(mu.shape + (d,))
    for j in range(d):
        up = mu.copy()
        down = mu.copy()
        up[..., j] += step[..., j]
        down[..., j] -= step[..., j]
        width = (up[..., j] - down[..., j])[..., None]
        out[..., :, j] = (grad_mu(up, g, h) - grad_mu(down, g, h)) / width
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _central_partials(
    fn: Callable[[FloatArray, FloatArray, FloatArray], FloatArray],
    args: tuple[FloatArray, FloatArray, FloatArray],
    wrt: int,
) -> FloatArray:
    """Central differences of `fn` in each component of argument `wrt`."""
    x = args[wrt]
    d = x.shape[-1]
    step = FD_REL_STEP * np.maximum(np.abs(x), FD_MIN_SCALE)
    first = fn(*args)
    out = np.empty(first.shape + (d,))
    for i in range(d):
        up = x.copy()
        down = x.copy()
        up[..., i] += step[..., i]
        down[..., i] -= step[..., i]
        up_args = list(args)
        down_args = list(args)
        up_args[wrt] = up
        down_args[wrt] = down
        width = up[..., i] - down[..., i]
        out[..., i] = (fn(*up_args) - fn(*down_args)) / width
    return out


def sample_interior_points(
    d: int, n_points: int = N_CHECK_POINTS, seed: int = CHECK_SEED
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Seeded (mu, g, h) points with every weight at least 1/(2d) and h > 0."""
    rng = np.random.default_rng(seed)
    mu = 0.5 * rng.dirichlet(np.full(d, 2.0), size=n_points) + 0.5 / d
    beta = 0.5 * rng.dirichlet(np.full(d, 2.0), size=n_points) + 0.5 / d
    h = beta * rng.uniform(0.05, 0.5, size=(n_points, d))
    return mu, beta + h, h


def _relative_gap(analytic: FloatArray, numeric: FloatArray, scale: FloatArray) -> float:
    axes = tuple(range(1, analytic.ndim))
    denom = np.maximum(np.abs(analytic).max(axis=axes), scale)
    return float((np.abs(analytic - numeric).max(axis=axes) / denom).max())


def check_generator(
    spec: GeneratorSpec,
    d: int,
    n_points: int = N_CHECK_POINTS,
    seed: int = CHECK_SEED,
    balance_tol: float = BALANCE_TOL,
    derivative_tol: float = DERIVATIVE_TOL,
) -> GeneratorCheck:
    """
    Compare the declared derivatives of `spec` against central differences,
    and the balance identity sum_i mu_i D_i G = G when it is claimed, on
    seeded random interior points.
    """
    mu, g, h = sample_interior_points(d, n_points, seed)
    args = (mu, g, h)
    values = spec.value(*args)
    if not np.all(np.isfinite(values)):
        raise DerivativeMismatch(f"{spec.name}: value is not finite at sampled points")
    scale = np.maximum(np.abs(values), ZERO_WEALTH_TOL)

    grad_mu = spec.grad_mu(*args)
    balance = float((np.abs(np.sum(mu * grad_mu, axis=-1) - values) / scale).max())
    if spec.is_balanced and balance > balance_tol:
        raise BalanceMismatch(f"{spec.name}: balance identity off by {balance:.3e} relative")

    gradient = 0.0
    for wrt, analytic, label in (
        (0, grad_mu, "grad_mu"),
        (1, spec.grad_g(*args), "grad_g"),
        (2, spec.grad_h(*args), "grad_h"),
    ):
        numeric = _central_partials(spec.value, args, wrt)
        gap = _relative_gap(analytic, numeric, scale)
        if gap > derivative_tol:
            raise DerivativeMismatch(f"{spec.name}: {label} off by {gap:.3e} relative")
        gradient = max(gradient, gap)

    hessian = 0.0
    if spec.hess_mu is not None:
        analytic_hess = spec.hess_mu(*args)
        numeric_hess = finite_difference_hessian(spec.grad_mu, *args)
        grad_scale = np.maximum(np.abs(grad_mu).max(axis=-1), scale)
        hessian = _relative_gap(analytic_hess, numeric_hess, grad_scale)
        if hessian > derivative_tol:
            raise DerivativeMismatch(f"{spec.name}: hess_mu off by {hessian:.3e} relative")

    logger.debug(
        "%s passed checks: balance %.2e, gradient %.2e, hessian %.2e",
        spec.name,
        balance,
        gradient,
        hessian,
    )
    return GeneratorCheck(spec.name, balance, gradient, hessian)


# ---------------------------------------------------------------------------
# Preparing a generator for a path
# ---------------------------------------------------------------------------


def _scale_evaluator(fn: Evaluator, factor: float) -> Evaluator:
    def scaled(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return factor * fn(mu, g, h)

    return scaled


def _shift_evaluator(fn: Evaluator, shift: float) -> Evaluator:
    def shifted(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return fn(mu, g, h) + shift

    return shifted


def normalize_generator(
    spec: GeneratorSpec, mu0: FloatArray, g0: FloatArray, h0: FloatArray
) -> GeneratorSpec:
    """
    Make G(0) = 1: divide by G(0) when it is positive, add 1 when it is 0.
    A shifted generator is no longer balanced.
    """
    start = float(spec.value(mu0, g0, h0))
    if start > 0:
        factor = 1.0 / start
        return replace(
            spec,
            value=_scale_evaluator(spec.value, factor),
            grad_mu=_scale_evaluator(spec.grad_mu, factor),
            grad_g=_scale_evaluator(spec.grad_g, factor),
            grad_h=_scale_evaluator(spec.grad_h, factor),
            hess_mu=None if spec.hess_mu is None else _scale_evaluator(spec.hess_mu, factor),
            normalize_at_start=False,
        )
    if start == 0:
        return replace(
            spec,
            value=_shift_evaluator(spec.value, 1.0),
            is_balanced=False,
            normalize_at_start=False,
        )
    raise NonPositiveG(f"{spec.name}: cannot normalize, G(0) = {start}")


def prepare_generator(spec: GeneratorSpec, path: WeightPath) -> GeneratorSpec:
    """Run the generator's own path checks and apply start normalization."""
    if spec.requires_continuous_aux and path.has_jumps:
        raise JumpsNotSupported(f"{spec.name} needs continuous book values")
    if spec.validate_path is not None:
        spec.validate_path(path)
    if spec.normalize_at_start:
        spec = normalize_generator(spec, path.mu[0], path.g[0], path.h[0])
    return spec


# ---------------------------------------------------------------------------
# Gamma ledger
# ---------------------------------------------------------------------------


def cumulative(increments: FloatArray) -> FloatArray:
    """Running sum with a leading zero: shape (n,) -> (n + 1,)."""
    return np.concatenate([[0.0], np.cumsum(increments)])


def _require_finite(label: str, arr: FloatArray, offset: int) -> None:
    bad = ~np.isfinite(arr)
    if arr.ndim > 1:
        bad = bad.reshape(arr.shape[0], -1).any(axis=1)
    if np.any(bad):
        step = int(np.argmax(bad)) + offset
        raise NumericalFailure(f"{label} is not finite at step {step}", step)


def quadratic_increments(
    spec: GeneratorSpec,
    mu: FloatArray,
    g: FloatArray,
    h: FloatArray,
    dmu: FloatArray,
) -> FloatArray:
    """sum_ij D2_ij G(row) dmu_i dmu_j per row, evaluated in blocks of rows."""
    n, d = dmu.shape
    block = max(1, _HESS_BLOCK // (d * d))
    out = np.empty(n)
    for start in range(0, n, block):
        rows = slice(start, start + block)
        hess = spec.hessian(mu[rows], g[rows], h[rows])
        out[rows] = np.einsum("lij,li,lj->l", hess, dmu[rows], dmu[rows])
    return out


def accumulate_gamma(spec: GeneratorSpec, path: WeightPath, check: bool = True) -> GammaLedger:
    if check:
        check_generator(spec, path.n_stocks)
    spec = prepare_generator(spec, path)

    mu, g, h = path.mu, path.g, path.h
    values = spec.value(mu, g, h)
    values_minus = spec.value(mu, path.g_minus, path.h_minus)
    _require_finite("G", values, 0)
    _require_finite("G(t-)", values_minus, 0)

    start = (mu[:-1], g[:-1], h[:-1])
    grad = spec.grad_mu(*start)
    _require_finite("D_mu G", grad, 1)
    dmu = np.diff(mu, axis=0)
    gamma = values[0] - values + cumulative(np.sum(grad * dmu, axis=1))

    continuous = path.continuous_steps
    qv_inc = -0.5 * quadratic_increments(spec, *start, dmu)
    g_inc = -np.sum(spec.grad_g(*start) * np.diff(g, axis=0), axis=1)
    h_inc = -np.sum(spec.grad_h(*start) * np.diff(h, axis=0), axis=1)
    g_inc = np.where(continuous, g_inc, 0.0)
    h_inc = np.where(continuous, h_inc, 0.0)
    for label, inc in (("quadratic term", qv_inc), ("g term", g_inc), ("h term", h_inc)):
        _require_finite(label, inc, 1)

    qv_term = cumulative(qv_inc)
    gamma_integral_term = cumulative(g_inc)
    xi_integral_term = cumulative(h_inc)
    local_time_term = np.zeros_like(qv_term)
    jump_term = np.cumsum(values - values_minus)

    return GammaLedger(
        gamma=gamma,
        gamma_continuous=qv_term + gamma_integral_term + xi_integral_term + local_time_term,
        qv_term=qv_term,
        gamma_integral_term=gamma_integral_term,
        xi_integral_term=xi_integral_term,
        jump_term=jump_term,
        local_time_term=local_time_term,
        values=values,
        values_minus=values_minus,
    )


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


def self_financing_wealth(pre: FloatArray, post: FloatArray, mu: FloatArray) -> FloatArray:
    """
    Wealth of holdings that are `pre` going into each step and `post` right
    after it, where a change pre -> post at a step is credited at that
    step's weights:
    V(l) = V(l-1) + sum post(l-1) dmu(l) + sum (post - pre)(l-1) mu(l-1).
    """
    v0 = float(np.dot(pre[0], mu[0]))
    inc = np.sum(post[:-1] * mu[1:], axis=1) - np.sum(pre[:-1] * mu[:-1], axis=1)
    return v0 + cumulative(inc)


def self_financing_defect(pre: FloatArray, post: FloatArray, mu: FloatArray) -> FloatArray:
    return np.sum(pre * mu, axis=1) - self_financing_wealth(pre, post, mu)


def _strategy(
    kind: StrategyKind,
    theta: FloatArray,
    theta_after: FloatArray,
    holdings: FloatArray,
    holdings_after: FloatArray,
    closed_form: FloatArray,
    defect_Q: FloatArray,
    defect_C: FloatArray,
    ledger: GammaLedger,
    mu: FloatArray,
) -> StrategyPath:
    replicated = self_financing_wealth(holdings, holdings_after, mu)
    max_gap = float(np.abs(replicated - closed_form).max())
    return StrategyPath(
        kind=kind,
        theta=theta,
        theta_after=theta_after,
        holdings=holdings,
        holdings_after=holdings_after,
        wealth=np.sum(holdings * mu, axis=1),
        closed_form_wealth=closed_form,
        defect_Q=defect_Q,
        defect_C=defect_C,
        max_gap=max_gap,
        ledger=ledger,
    )


def additive_from_ledger(
    theta: FloatArray, theta_after: FloatArray, ledger: GammaLedger, mu: FloatArray
) -> StrategyPath:
    """phi = theta + Gamma^c - C^G, with C^G = sum theta mu - G(t-)."""
    gamma_c = ledger.gamma_continuous
    defect_pre = np.sum(theta * mu, axis=1) - ledger.values_minus
    defect_post = np.sum(theta_after * mu, axis=1) - ledger.values
    holdings = theta + (gamma_c - defect_pre)[:, None]
    holdings_after = theta_after + (gamma_c - defect_post)[:, None]
    return _strategy(
        "additive",
        theta,
        theta_after,
        holdings,
        holdings_after,
        closed_form=ledger.values_minus + gamma_c,
        defect_Q=self_financing_defect(theta, theta_after, mu),
        defect_C=defect_pre,
        ledger=ledger,
        mu=mu,
    )


def _require_positive(values: FloatArray, label: str) -> None:
    bad = ~(values > 0)
    if np.any(bad):
        step = int(np.argmax(bad))
        raise NonPositiveG(f"{label} is {values[step]} at step {step}")


def growth_factor(ledger: GammaLedger) -> FloatArray:
    """exp of the left-point sum of dGamma^c / G."""
    _require_positive(ledger.values, "G")
    return np.exp(cumulative(np.diff(ledger.gamma_continuous) / ledger.values[:-1]))


def multiplicative_from_ledger(
    theta: FloatArray, theta_after: FloatArray, ledger: GammaLedger, mu: FloatArray
) -> StrategyPath:
    """
    eta = theta K with K = exp(int dGamma^c / G), and psi = eta plus the
    market position that brings the value to G(t-) K. For a balanced
    generator that position is zero.
    """
    _require_positive(ledger.values_minus, "G(t-)")
    factor = growth_factor(ledger)
    eta = theta * factor[:, None]
    eta_after = theta_after * factor[:, None]
    closed_form = ledger.values_minus * factor
    holdings = eta + (closed_form - np.sum(eta * mu, axis=1))[:, None]
    holdings_after = eta_after + (ledger.values * factor - np.sum(eta_after * mu, axis=1))[:, None]
    return _strategy(
        "multiplicative",
        theta,
        theta_after,
        holdings,
        holdings_after,
        closed_form=closed_form,
        defect_Q=self_financing_defect(eta, eta_after, mu),
        defect_C=np.sum(theta * mu, axis=1) - ledger.values_minus,
        ledger=ledger,
        mu=mu,
    )


def require_jump_support(spec: GeneratorSpec, path: WeightPath) -> None:
    """Strategies across book jumps need a balanced generator."""
    if path.has_jumps and not spec.is_balanced:
        if spec.requires_continuous_aux:
            raise JumpsNotSupported(f"{spec.name} needs continuous book values")
        raise UnbalancedWithJumps(f"{spec.name} is not balanced and the path has book jumps")


def _prepared_thetas(
    spec: GeneratorSpec, path: WeightPath
) -> tuple[GeneratorSpec, FloatArray, FloatArray]:
    require_jump_support(spec, path)
    spec = prepare_generator(spec, path)
    theta = spec.grad_mu(path.mu, path.g_minus, path.h_minus)
    theta_after = spec.grad_mu(path.mu, path.g, path.h)
    _require_finite("theta", theta, 0)
    return spec, theta, theta_after


def additive_strategy(spec: GeneratorSpec, path: WeightPath, check: bool = True) -> StrategyPath:
    prepared, theta, theta_after = _prepared_thetas(spec, path)
    ledger = accumulate_gamma(prepared, path, check=check)
    sp = additive_from_ledger(theta, theta_after, ledger, path.mu)
    logger.debug("%s additive: max replication gap %.3e", spec.name, sp.max_gap)
    return sp


def multiplicative_strategy(
    spec: GeneratorSpec, path: WeightPath, check: bool = True
) -> StrategyPath:
    prepared, theta, theta_after = _prepared_thetas(spec, path)
    ledger = accumulate_gamma(prepared, path, check=check)
    sp = multiplicative_from_ledger(theta, theta_after, ledger, path.mu)
    logger.debug("%s multiplicative: max replication gap %.3e", spec.name, sp.max_gap)
    return sp


def weights_from_strategy(sp: StrategyPath, path: WeightPath, after: bool = False) -> FloatArray:
    """
    Portfolio weights pi_i = holdings_i mu_i / sum_j holdings_j mu_j. With
    `after` the post-jump holdings are used, which is what is actually held
    over the following step.
    """
    holdings = sp.holdings_after if after else sp.holdings
    assert holdings.shape == path.mu.shape, "holdings and path are not aligned"
    invested = holdings * path.mu
    total = invested.sum(axis=1)
    small = np.abs(total) <= ZERO_WEALTH_TOL
    if np.any(small):
        step = int(np.argmax(small))
        raise ZeroWealth(f"strategy value is {total[step]} at step {step}")
    return invested / total[:, None]


# ---------------------------------------------------------------------------
# Arbitrage detection and log-wealth accounting
# ---------------------------------------------------------------------------


def arbitrage_certificate(
    ledger: GammaLedger,
    g0: float,
    component: Literal["continuous", "total"] = "continuous",
    tol: float = MONOTONE_TOL,
) -> Optional[int]:
    """First step at which Gamma exceeds g0, for a nonnegative G and a nondecreasing Gamma."""
    low = min(float(ledger.values.min()), float(ledger.values_minus.min()))
    if low < 0:
        raise NonPositiveG(f"G takes the negative value {low:.3e}, no arbitrage certificate")
    series = ledger.gamma_continuous if component == "continuous" else ledger.gamma
    drops = np.diff(series) < -tol
    if np.any(drops):
        step = int(np.argmax(drops)) + 1
        raise NotMonotone(
            f"Gamma decreases by {series[step - 1] - series[step]:.3e} at step {step}"
        )
    above = series > g0
    if not np.any(above):
        return None
    return int(np.argmax(above))


def strong_arbitrage_horizon(
    spec: GeneratorSpec, path: WeightPath, check: bool = True
) -> Optional[tuple[int, float]]:
    """The first (step, time) at which Gamma^c exceeds G(0), if any."""
    ledger = accumulate_gamma(spec, path, check=check)
    step = arbitrage_certificate(ledger, ledger.g0)
    if step is None:
        logger.info("%s: Gamma^c stays below G(0) = %.6g", spec.name, ledger.g0)
        return None
    logger.info("%s: Gamma^c exceeds G(0) at step %d", spec.name, step)
    return step, float(path.times[step])


def log_wealth_components(ledger: GammaLedger) -> LogWealthComponents:
    _require_positive(ledger.values, "G")
    _require_positive(ledger.values_minus, "G(t-)")
    start = ledger.values[:-1]

    def scaled(term: FloatArray) -> FloatArray:
        return cumulative(np.diff(term) / start)

    return LogWealthComponents(
        log_g=np.log(ledger.values_minus),
        quadratic=scaled(ledger.qv_term),
        gamma_integral=scaled(ledger.gamma_integral_term),
        xi_integral=scaled(ledger.xi_integral_term),
        local_time=scaled(ledger.local_time_term),
    )


# ---------------------------------------------------------------------------
# Incremental accumulation for backtests
# ---------------------------------------------------------------------------


class GammaAccumulator:
    """
    Gamma^c and the multiplicative growth factor built one step at a time,
    so a weight rule only ever touches data up to its decision time. The
    increments are the same left-point sums `accumulate_gamma` uses.
    """

    def __init__(self, spec: GeneratorSpec, mu: FloatArray, g: FloatArray, h: FloatArray):
        self.spec = spec
        self.steps = 0
        self.gamma_continuous = 0.0
        self.log_factor = 0.0
        self._point = (mu, g, h)
        self._value = float(spec.value(mu, g, h))

    @property
    def value(self) -> float:
        return self._value

    def advance(self, mu: FloatArray, g: FloatArray, h: FloatArray, jump: bool) -> None:
        prev = self._point
        dmu = mu - prev[0]
        inc = -0.5 * float(dmu @ self.spec.hessian(*prev) @ dmu)
        if not jump:
            inc -= float(np.dot(self.spec.grad_g(*prev), g - prev[1]))
            inc -= float(np.dot(self.spec.grad_h(*prev), h - prev[2]))
        if not np.isfinite(inc):
            raise NumericalFailure(f"{self.spec.name}: Gamma increment not finite", self.steps + 1)
        self.log_factor += inc / self._value if self._value > 0 else np.nan
        self.gamma_continuous += inc
        self._point = (mu, g, h)
        self._value = float(self.spec.value(mu, g, h))
        self.steps += 1

    def holdings(self, kind: StrategyKind) -> FloatArray:
        """Post-jump holdings at the current point."""
        mu, g, h = self._point
        theta = self.spec.grad_mu(mu, g, h)
        if kind == "additive":
            return theta + self.gamma_continuous - (float(theta @ mu) - self._value)
        if not self._value > 0 or not np.isfinite(self.log_factor):
            raise NonPositiveG(f"{self.spec.name}: G is {self._value} at step {self.steps}")
        factor = float(np.exp(self.log_factor))
        eta = theta * factor
        return eta + (self._value * factor - float(eta @ mu))
