"""
Concrete generating functions and weight rules, and the registry behind
`--portfolio NAME[:k=v,...]`.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
import numpy.typing as npt

from fgp_book.backtester import MarketView, WeightRule
from fgp_book.common import *
from fgp_book.errors import (
    BadComposition,
    BadParameter,
    BoundsViolated,
    DeltaViolated,
    UnknownPortfolio,
)
from fgp_book.fgp_engine import (
    GammaAccumulator,
    GeneratorSpec,
    LogWealthComponents,
    PathCheck,
    check_generator,
    log_wealth_components,
    multiplicative_strategy,
    normalize_generator,
    prepare_generator,
    require_jump_support,
)
from fgp_book.market_model import delta_bound, rho_bounds
from fgp_book.rank_engine import RankGenerator, constant_rebalanced_generator, rank_path
from fgp_book.types import FloatArray, ParamValue, PortfolioRequest, StrategyKind, WeightPath

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Path checks
# ---------------------------------------------------------------------------


def _rho_within(m: float, M: float) -> PathCheck:
    def check(path: WeightPath) -> None:
        for label, rho in (("rho", path.rho), ("rho(t-)", path.rho_minus)):
            lo, hi = float(rho.min()), float(rho.max())
            if lo < m or hi > M:
                raise BoundsViolated(f"{label} spans [{lo:.6g}, {hi:.6g}], outside [{m:.6g}, {M:.6g}]")

    return check


def _beta_at_least(delta: float) -> PathCheck:
    def check(path: WeightPath) -> None:
        lo = float(path.beta.min())
        if lo < delta:
            raise DeltaViolated(f"min beta {lo:.6g} is below delta {delta:.6g}")

    return check


def _all_checks(*checks: PathCheck) -> PathCheck:
    def check(path: WeightPath) -> None:
        for c in checks:
            c(path)

    return check


def _check_bounds(m: float, M: float) -> None:
    if not 0 < m < M:
        raise BadParameter(f"need 0 < m < M, got m={m}, M={M}")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _book_value_core(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
    beta = g - h
    return np.exp(np.sum(beta * np.log(mu / beta), axis=-1))


def _book_value_hessian(mu: FloatArray, beta: FloatArray, value: FloatArray) -> FloatArray:
    a = beta / mu
    hess = a[..., :, None] * a[..., None, :]
    idx = np.arange(mu.shape[-1])
    hess[..., idx, idx] -= beta / mu**2
    return hess * value[..., None, None]


def book_value_generator(m: Optional[float] = None, M: Optional[float] = None) -> GeneratorSpec:
    """
    G = prod_i rho_i^beta_i, divided by its value at the start. Balanced;
    its multiplicative portfolio holds beta(t-).
    """

    def grad_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return (g - h) / mu * _book_value_core(mu, g, h)[..., None]

    def grad_g(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        beta = g - h
        return (np.log(mu / beta) - 1.0) * _book_value_core(mu, g, h)[..., None]

    def grad_h(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return -grad_g(mu, g, h)

    def hess_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return _book_value_hessian(mu, g - h, _book_value_core(mu, g, h))

    validate = None
    if m is not None and M is not None:
        _check_bounds(m, M)
        validate = _rho_within(m, M)
    return GeneratorSpec(
        name="book_value",
        value=_book_value_core,
        grad_mu=grad_mu,
        grad_g=grad_g,
        grad_h=grad_h,
        hess_mu=hess_mu,
        is_balanced=True,
        normalize_at_start=True,
        validate_path=validate,
    )


def modified_book_value_generator(m: float, M: float) -> GeneratorSpec:
    """
    prod_i rho_i^beta_i exp((1 - log M) g_i + (log m - 1) h_i), left
    unnormalized. D_g G = log(rho/M) G and D_h G = log(m/rho) G are both
    nonpositive inside the bounds.
    """
    _check_bounds(m, M)
    log_m, log_M = np.log(m), np.log(M)

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        drift = (1.0 - log_M) * g.sum(axis=-1) + (log_m - 1.0) * h.sum(axis=-1)
        return _book_value_core(mu, g, h) * np.exp(drift)

    def grad_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return (g - h) / mu * value(mu, g, h)[..., None]

    def grad_g(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return (np.log(mu / (g - h)) - log_M) * value(mu, g, h)[..., None]

    def grad_h(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return (log_m - np.log(mu / (g - h))) * value(mu, g, h)[..., None]

    def hess_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return _book_value_hessian(mu, g - h, value(mu, g, h))

    return GeneratorSpec(
        name=f"modified_book_value[m={m:g},M={M:g}]",
        value=value,
        grad_mu=grad_mu,
        grad_g=grad_g,
        grad_h=grad_h,
        hess_mu=hess_mu,
        is_balanced=True,
        validate_path=_rho_within(m, M),
    )


LogScore = Callable[[FloatArray, FloatArray, FloatArray], FloatArray]


def _power_mean_generator(
    name: str,
    p: float,
    log_score: LogScore,
    dlog_dg: LogScore,
    dlog_dh: LogScore,
    normalize: bool,
    validate: Optional[PathCheck] = None,
) -> GeneratorSpec:
    """
    G = (sum_i x_i^p)^(1/p) for scores x_i that are linear in mu_i, the
    geometric mean when p = 0. With pi_hat = x^p / sum x^p every partial
    is G pi_hat times the partial of log x.
    """

    def weights_and_value(mu: FloatArray, g: FloatArray, h: FloatArray) -> tuple[FloatArray, FloatArray]:
        logs = log_score(mu, g, h)
        if p == 0:
            value = np.exp(logs.mean(axis=-1))
            return np.full_like(logs, 1.0 / logs.shape[-1]), value
        top = logs.max(axis=-1, keepdims=True)
        scaled = np.exp(p * (logs - top))
        total = scaled.sum(axis=-1)
        value = np.exp(top[..., 0]) * total ** (1.0 / p)
        return scaled / total[..., None], value

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return weights_and_value(mu, g, h)[1]

    def grad_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        pi_hat, value = weights_and_value(mu, g, h)
        return pi_hat / mu * value[..., None]

    def grad_g(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        pi_hat, value = weights_and_value(mu, g, h)
        return pi_hat * dlog_dg(mu, g, h) * value[..., None]

    def grad_h(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        pi_hat, value = weights_and_value(mu, g, h)
        return pi_hat * dlog_dh(mu, g, h) * value[..., None]

    def hess_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        pi_hat, value = weights_and_value(mu, g, h)
        hess = pi_hat[..., :, None] * pi_hat[..., None, :]
        idx = np.arange(mu.shape[-1])
        hess[..., idx, idx] -= pi_hat
        scale = (1.0 - p) * value[..., None, None] / (mu[..., :, None] * mu[..., None, :])
        return hess * scale

    return GeneratorSpec(
        name=name,
        value=value,
        grad_mu=grad_mu,
        grad_g=grad_g,
        grad_h=grad_h,
        hess_mu=hess_mu,
        is_balanced=True,
        normalize_at_start=normalize,
        validate_path=validate,
    )


def _zeros(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
    return np.zeros_like(mu)


def mtb_generator(p: float) -> GeneratorSpec:
    """(sum rho^p / sum rho(0)^p)^(1/p); concave for p < 1."""

    def log_score(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.log(mu / (g - h))

    def dlog_dg(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return -1.0 / (g - h)

    def dlog_dh(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 1.0 / (g - h)

    return _power_mean_generator(f"mtb[p={p:g}]", p, log_score, dlog_dg, dlog_dh, normalize=True)


def diversity_generator(p: float) -> GeneratorSpec:
    def log_score(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.log(mu)

    return _power_mean_generator(f"diversity[p={p:g}]", p, log_score, _zeros, _zeros, normalize=True)


def modified_mtb_generator(p: float, delta: float) -> GeneratorSpec:
    """
    (sum_i (rho_i g_i exp(-h_i / delta))^p)^(1/p), unnormalized. Needs
    beta >= delta on the path for both g and h partials to be nonpositive.
    """
    if p == 0:
        raise BadParameter("modified_mtb needs p != 0")
    if not delta > 0:
        raise BadParameter(f"delta must be positive, got {delta}")

    def log_score(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.log(mu * g / (g - h)) - h / delta

    def dlog_dg(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return -h / (g * (g - h))

    def dlog_dh(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return 1.0 / (g - h) - 1.0 / delta

    return _power_mean_generator(
        f"modified_mtb[p={p:g},delta={delta:g}]",
        p,
        log_score,
        dlog_dg,
        dlog_dh,
        normalize=False,
        validate=_beta_at_least(delta),
    )


def log_kappa(m: float) -> float:
    """kappa = ((1 + m) / m) log(1 + m)."""
    return (1.0 + m) / m * float(np.log1p(m))


def logarithmic_generator(m: float, M: float, delta: float) -> GeneratorSpec:
    """
    G = sum_i log(1 + rho_i) exp(-h_i / (delta kappa)). Not balanced, so it
    only runs on paths with continuous book values.
    """
    _check_bounds(m, M)
    if not delta > 0:
        raise BadParameter(f"delta must be positive, got {delta}")
    damping = delta * log_kappa(m)

    def value(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.sum(np.log1p(mu / (g - h)) * np.exp(-h / damping), axis=-1)

    def grad_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        return np.exp(-h / damping) / (g - h + mu)

    def grad_g(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        beta = g - h
        return -np.exp(-h / damping) * (mu / beta) / (beta + mu)

    def grad_h(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        beta = g - h
        rho = mu / beta
        return np.exp(-h / damping) * (rho / (beta + mu) - np.log1p(rho) / damping)

    def hess_mu(mu: FloatArray, g: FloatArray, h: FloatArray) -> FloatArray:
        diag = -np.exp(-h / damping) / (g - h + mu) ** 2
        hess = np.zeros(mu.shape + (mu.shape[-1],))
        idx = np.arange(mu.shape[-1])
        hess[..., idx, idx] = diag
        return hess

    return GeneratorSpec(
        name=f"logarithmic[m={m:g},M={M:g},delta={delta:g}]",
        value=value,
        grad_mu=grad_mu,
        grad_g=grad_g,
        grad_h=grad_h,
        hess_mu=hess_mu,
        is_balanced=False,
        requires_continuous_aux=True,
        validate_path=_all_checks(_rho_within(m, M), _beta_at_least(delta)),
    )


# ---------------------------------------------------------------------------
# Book-value log-wealth decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BookValueDecomposition:
    """log V of the book-value portfolio without stochastic integrals."""

    log_g: FloatArray
    quadratic: FloatArray
    beta_term: FloatArray

    @property
    def total(self) -> FloatArray:
        return self.log_g + self.quadratic + self.beta_term


def book_value_log_decomposition(path: WeightPath) -> BookValueDecomposition:
    """
    log V^beta = log G(t-) (G normalized at the start)
                 + 1/2 int sum d<mu_i> / (rho_i mu_i) - 1/2 int sum d<mu_i, mu_j> / (rho_i rho_j)
                 - int sum log rho_i d beta^c_i.
    """
    parts: LogWealthComponents = book_value_components(path)
    return BookValueDecomposition(
        log_g=parts.log_g,
        quadratic=parts.quadratic,
        beta_term=parts.gamma_integral + parts.xi_integral,
    )


def book_value_components(path: WeightPath) -> LogWealthComponents:
    sp = multiplicative_strategy(book_value_generator(), path)
    return log_wealth_components(sp.ledger)


# ---------------------------------------------------------------------------
# Weight rules
# ---------------------------------------------------------------------------


def _normalized_power(values: FloatArray, p: float) -> FloatArray:
    """values^p / sum values^p, computed in logs."""
    if p == 0:
        return np.full(values.shape, 1.0 / values.shape[-1])
    logs = p * np.log(values)
    scaled = np.exp(logs - logs.max())
    return scaled / scaled.sum()


class GeneratedWeightRule:
    """
    Weights of an additively or multiplicatively generated strategy, held
    over the step after each decision. Gamma^c is advanced incrementally from
    the view, so the rule never needs rows past the decision step.
    """

    def __init__(self, spec: GeneratorSpec, kind: StrategyKind):
        self.spec = spec
        self.kind: StrategyKind = kind
        self._acc: Optional[GammaAccumulator] = None

    def _start(self, view: MarketView) -> GammaAccumulator:
        mu, g, h = view.at("mu", 0), view.at("g", 0), view.at("h", 0)
        spec = self.spec
        if spec.normalize_at_start:
            spec = normalize_generator(spec, mu, g, h)
        return GammaAccumulator(spec, mu, g, h)

    def __call__(self, view: MarketView) -> FloatArray:
        if self._acc is None or self._acc.steps > view.last:
            self._acc = self._start(view)
        acc = self._acc
        while acc.steps < view.last:
            step = acc.steps + 1
            acc.advance(
                view.at("mu", step),
                view.at("g", step),
                view.at("h", step),
                bool(view.at("jumps", step)),
            )
        invested = acc.holdings(self.kind) * view.current("mu")
        return invested / invested.sum()


def _rank_weights(coefficients: FloatArray) -> WeightRule:
    def rule(view: MarketView) -> FloatArray:
        ranks = rank_path(view.current("rho")[None, :]).inverse_perm[0]
        return coefficients[ranks]

    return rule


def _size_weights(count: int, top: bool) -> WeightRule:
    def rule(view: MarketView) -> FloatArray:
        d = view.n_stocks
        ranks = rank_path(view.current("mu")[None, :]).inverse_perm[0]
        chosen = ranks < count if top else ranks >= d - count
        return chosen / float(count)

    return rule


def _market_rule(view: MarketView) -> FloatArray:
    return np.array(view.current("mu"))


def _equal_rule(view: MarketView) -> FloatArray:
    return np.full(view.n_stocks, 1.0 / view.n_stocks)


# ---------------------------------------------------------------------------
# Zoo entries
# ---------------------------------------------------------------------------

Style = Literal["multiplicative", "additive", "direct", "rank"]
GeneratorBuilder = Callable[[WeightPath], GeneratorSpec]
CoefficientBuilder = Callable[[int], FloatArray]


@dataclass(frozen=True)
class ZooEntry:
    """
    A named portfolio. Generator entries build their GeneratorSpec from a
    path so unset bounds (m, M, delta) can default to the data; direct
    entries carry a weight function; rank entries carry the coefficient
    vector c of prod_k rho_[k]^c_k.
    """

    name: str
    description: str
    style: Style
    params: dict[str, ParamValue] = field(default_factory=dict)
    generator: Optional[GeneratorBuilder] = None
    direct: Optional[WeightRule] = None
    coefficients: Optional[CoefficientBuilder] = None

    def build_generator(self, path: WeightPath) -> GeneratorSpec:
        if self.generator is None:
            raise BadParameter(f"{self.name} has no generating function")
        return self.generator(path)

    def rank_generator(self, d: int) -> RankGenerator:
        if self.coefficients is None:
            raise BadParameter(f"{self.name} is not a rank portfolio")
        return constant_rebalanced_generator(self.coefficients(d))

    def weight_rule(self, path: WeightPath) -> WeightRule:
        match self.style:
            case "direct":
                assert self.direct is not None, f"{self.name} has no weight function"
                return self.direct
            case "rank":
                assert self.coefficients is not None, f"{self.name} has no coefficients"
                return _rank_weights(self.coefficients(path.n_stocks))
            case "multiplicative" | "additive":
                spec = self.build_generator(path)
                require_jump_support(spec, path)
                spec = prepare_generator(spec, path)
                check_generator(spec, path.n_stocks)
                return GeneratedWeightRule(spec, self.style)


def _bounds(
    path: WeightPath, m: Optional[float], M: Optional[float], safety: float
) -> tuple[float, float]:
    lo, hi = rho_bounds(path, safety)
    return (lo if m is None else m), (hi if M is None else M)


def market() -> ZooEntry:
    return ZooEntry("market", "the market portfolio mu", "direct", direct=_market_rule)


def equal_weighted() -> ZooEntry:
    return ZooEntry("equal_weighted", "1/d in every stock", "direct", direct=_equal_rule)


def book_value(m: Optional[float] = None, M: Optional[float] = None) -> ZooEntry:
    def build(path: WeightPath) -> GeneratorSpec:
        return book_value_generator(m, M)

    params: dict[str, ParamValue] = {}
    if m is not None and M is not None:
        params = {"m": m, "M": M}
    return ZooEntry(
        "book_value",
        "multiplicatively generated from prod rho^beta; holds beta(t-)",
        "multiplicative",
        params=params,
        generator=build,
    )


def mtb_weighted_portfolio(p: float) -> ZooEntry:
    def rule(view: MarketView) -> FloatArray:
        return _normalized_power(view.current("rho"), p)

    def build(path: WeightPath) -> GeneratorSpec:
        return mtb_generator(p)

    return ZooEntry(
        "mtb_weighted",
        "rho(t-)^p / sum rho(t-)^p",
        "direct",
        params={"p": p},
        generator=build,
        direct=rule,
    )


def diversity_weighted_portfolio(p: float) -> ZooEntry:
    def rule(view: MarketView) -> FloatArray:
        return _normalized_power(view.current("mu"), p)

    def build(path: WeightPath) -> GeneratorSpec:
        return diversity_generator(p)

    return ZooEntry(
        "diversity_weighted",
        "mu^p / sum mu^p",
        "direct",
        params={"p": p},
        generator=build,
        direct=rule,
    )


def modified_book_value(
    m: Optional[float] = None, M: Optional[float] = None, rho_safety: float = RHO_SAFETY_FACTOR
) -> ZooEntry:
    def build(path: WeightPath) -> GeneratorSpec:
        return modified_book_value_generator(*_bounds(path, m, M, rho_safety))

    return ZooEntry(
        "modified_book_value",
        "additive; interpolates between mu and beta(t-)",
        "additive",
        params={k: v for k, v in (("m", m), ("M", M)) if v is not None},
        generator=build,
    )


def modified_mtb(
    p: float = 1.0, delta: Optional[float] = None, delta_safety: float = DELTA_SAFETY_FACTOR
) -> ZooEntry:
    def build(path: WeightPath) -> GeneratorSpec:
        return modified_mtb_generator(p, delta_bound(path, delta_safety) if delta is None else delta)

    params: dict[str, ParamValue] = {"p": p}
    if delta is not None:
        params["delta"] = delta
    return ZooEntry(
        "modified_mtb",
        "additive; interpolates between mu and (rho g exp(-h/delta))^p weights",
        "additive",
        params=params,
        generator=build,
    )


def logarithmic(
    m: Optional[float] = None,
    M: Optional[float] = None,
    delta: Optional[float] = None,
    rho_safety: float = RHO_SAFETY_FACTOR,
    delta_safety: float = DELTA_SAFETY_FACTOR,
) -> ZooEntry:
    def build(path: WeightPath) -> GeneratorSpec:
        lo, hi = _bounds(path, m, M, rho_safety)
        d = delta_bound(path, delta_safety) if delta is None else delta
        return logarithmic_generator(lo, hi, d)

    return ZooEntry(
        "logarithmic",
        "additive; sum log(1 + rho) exp(-h / (delta kappa))",
        "additive",
        params={k: v for k, v in (("m", m), ("M", M), ("delta", delta)) if v is not None},
        generator=build,
    )


def check_composition(c: npt.ArrayLike) -> FloatArray:
    coef = np.asarray(c, dtype=np.float64)
    if coef.ndim != 1 or coef.size < 2:
        raise BadParameter(f"c must be a vector with at least two entries, got {coef.shape}")
    if abs(coef.sum() - 1.0) > COMPOSITION_TOL:
        raise BadComposition(f"c sums to {coef.sum()!r}, not 1")
    return coef


def rank_constant_rebalanced(c: npt.ArrayLike, name: str = "rank_cr") -> ZooEntry:
    coef = check_composition(c)

    def coefficients(d: int) -> FloatArray:
        if d != coef.size:
            raise BadParameter(f"c has {coef.size} entries for {d} stocks")
        return coef

    return ZooEntry(
        name,
        "constant proportion c_k in the stock of k-th largest rho",
        "rank",
        params={"c": coef.tolist()},
        coefficients=coefficients,
    )


def _rank_block(name: str, count: Optional[int], top: bool) -> ZooEntry:
    def coefficients(d: int) -> FloatArray:
        n = d // 2 if count is None else count
        if not 1 <= n <= d:
            raise BadParameter(f"{name} needs 1 <= l <= {d}, got {n}")
        coef = np.zeros(d)
        if top:
            coef[:n] = 1.0 / n
        else:
            coef[d - n :] = 1.0 / n
        return coef

    return ZooEntry(
        name,
        f"equal weights on the {'highest' if top else 'lowest'} l market-to-book ratios",
        "rank",
        params={} if count is None else {"l": float(count)},
        coefficients=coefficients,
    )


def ew_top(l: Optional[int] = None) -> ZooEntry:
    return _rank_block("ew_top", l, top=True)


def ew_bottom(l: Optional[int] = None) -> ZooEntry:
    return _rank_block("ew_bottom", l, top=False)


def top_one() -> ZooEntry:
    entry = _rank_block("top_one", 1, top=True)
    return ZooEntry(entry.name, "all wealth in the highest market-to-book ratio", "rank", {}, coefficients=entry.coefficients)


def bottom_one() -> ZooEntry:
    entry = _rank_block("bottom_one", 1, top=False)
    return ZooEntry(entry.name, "all wealth in the lowest market-to-book ratio", "rank", {}, coefficients=entry.coefficients)


def size_ranked_equal_weight(l: Optional[int] = None, top: bool = True) -> ZooEntry:
    name = "size_top" if top else "size_bottom"

    def rule(view: MarketView) -> FloatArray:
        d = view.n_stocks
        n = d // 2 if l is None else l
        if not 1 <= n <= d:
            raise BadParameter(f"{name} needs 1 <= l <= {d}, got {n}")
        return _size_weights(n, top)(view)

    return ZooEntry(
        name,
        f"equal weights on the {'largest' if top else 'smallest'} l stocks by capitalization",
        "direct",
        params={} if l is None else {"l": float(l)},
        direct=rule,
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


class _Params:
    """Typed access to request parameters; unknown or unused keys are rejected."""

    def __init__(self, request: PortfolioRequest, allowed: tuple[str, ...]):
        unknown = set(request.params) - set(allowed)
        if unknown:
            raise BadParameter(f"{request.name} does not take {sorted(unknown)}")
        self.name = request.name
        self.params = request.params

    def real(self, key: str, default: Optional[float] = None) -> Optional[float]:
        value = self.params.get(key)
        if value is None:
            return default
        if isinstance(value, list):
            raise BadParameter(f"{self.name}: {key} must be a number")
        return float(value)

    def count(self, key: str) -> Optional[int]:
        value = self.real(key)
        if value is None:
            return None
        if value != int(value):
            raise BadParameter(f"{self.name}: {key} must be an integer, got {value}")
        return int(value)

    def vector(self, key: str) -> list[float]:
        value = self.params.get(key)
        if value is None:
            raise BadParameter(f"{self.name} needs {key}")
        return [float(value)] if not isinstance(value, list) else [float(x) for x in value]


Builder = Callable[[_Params, float, float], ZooEntry]

_REGISTRY: dict[str, tuple[tuple[str, ...], Builder]] = {
    "market": ((), lambda a, rs, ds: market()),
    "equal_weighted": ((), lambda a, rs, ds: equal_weighted()),
    "book_value": (("m", "M"), lambda a, rs, ds: book_value(a.real("m"), a.real("M"))),
    "mtb_weighted": (("p",), lambda a, rs, ds: mtb_weighted_portfolio(a.real("p", 0.5) or 0.0)),
    "diversity_weighted": (
        ("p",),
        lambda a, rs, ds: diversity_weighted_portfolio(a.real("p", 0.5) or 0.0),
    ),
    "modified_book_value": (
        ("m", "M"),
        lambda a, rs, ds: modified_book_value(a.real("m"), a.real("M"), rs),
    ),
    "modified_mtb": (
        ("p", "delta"),
        lambda a, rs, ds: modified_mtb(a.real("p", 1.0) or 0.0, a.real("delta"), ds),
    ),
    "logarithmic": (
        ("m", "M", "delta"),
        lambda a, rs, ds: logarithmic(a.real("m"), a.real("M"), a.real("delta"), rs, ds),
    ),
    "rank_cr": (("c",), lambda a, rs, ds: rank_constant_rebalanced(a.vector("c"))),
    "ew_top": (("l",), lambda a, rs, ds: ew_top(a.count("l"))),
    "ew_bottom": (("l",), lambda a, rs, ds: ew_bottom(a.count("l"))),
    "top_one": ((), lambda a, rs, ds: top_one()),
    "bottom_one": ((), lambda a, rs, ds: bottom_one()),
    "size_top": (("l",), lambda a, rs, ds: size_ranked_equal_weight(a.count("l"), top=True)),
    "size_bottom": (("l",), lambda a, rs, ds: size_ranked_equal_weight(a.count("l"), top=False)),
}


def portfolio_names() -> list[str]:
    return list(_REGISTRY)


def parse_portfolio(text: str) -> PortfolioRequest:
    """
    Parse NAME[:k=v,k=v]. A vector value is written with slashes,
    e.g. rank_cr:c=0.5/0.5/0.
    """
    name, _, rest = text.strip().partition(":")
    if not name:
        raise BadParameter(f"no portfolio name in {text!r}")
    params: dict[str, ParamValue] = {}
    for item in filter(None, (part.strip() for part in rest.split(","))):
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise BadParameter(f"expected k=v in {text!r}, got {item!r}")
        try:
            if "/" in raw:
                params[key] = [float(x) for x in raw.split("/")]
            else:
                params[key] = float(raw)
        except ValueError:
            raise BadParameter(f"{key}={raw!r} in {text!r} is not a number")
    return PortfolioRequest(name=name, params=params)


def resolve(
    request: PortfolioRequest,
    rho_safety: float = RHO_SAFETY_FACTOR,
    delta_safety: float = DELTA_SAFETY_FACTOR,
) -> ZooEntry:
    if request.name not in _REGISTRY:
        raise UnknownPortfolio(
            f"unknown portfolio {request.name!r}; known: {', '.join(portfolio_names())}"
        )
    allowed, builder = _REGISTRY[request.name]
    entry = builder(_Params(request, allowed), rho_safety, delta_safety)
    logger.debug("resolved %s as %s (%s)", request.label, entry.name, entry.style)
    return entry
