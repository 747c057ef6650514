from typing import Any, Literal, Optional

from pathlib import Path
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, model_validator

from fgp_book.errors import (
    GridTooShort,
    ManifestError,
    NonPositiveInput,
    UnflaggedBookChange,
)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]


def _frozen(arr: npt.ArrayLike, dtype: type = np.float64) -> Any:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def shift_down(arr: FloatArray) -> FloatArray:
    """Row ℓ of the result is row ℓ-1 of `arr`; row 0 is repeated."""
    return np.concatenate([arr[:1], arr[:-1]], axis=0)


# ---------------------------------------------------------------------------
# Market data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarketSeries:
    """
    Capitalizations and book values of a fixed universe on a time grid.
    Row ℓ of `caps` / `books` is time `times[ℓ]`. `book_updated[ℓ]` marks a
    jump of the books at ℓ (the new value holds from ℓ onward). With
    `books_continuous` the books may also drift at unflagged steps.
    """

    times: FloatArray
    caps: FloatArray
    books: FloatArray
    book_updated: BoolArray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    tickers: tuple[str, ...] = ()
    dates: Optional[tuple[str, ...]] = None
    books_continuous: bool = False

    def __post_init__(self) -> None:
        caps = np.asarray(self.caps, dtype=np.float64)
        books = np.asarray(self.books, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64)
        if caps.ndim != 2 or books.shape != caps.shape:
            raise GridTooShort(
                f"caps {caps.shape} and books {books.shape} must be matching (steps, stocks) matrices"
            )
        n_steps, n_stocks = caps.shape
        if n_steps < 2:
            raise GridTooShort(f"need at least 2 time steps, got {n_steps}")
        if n_stocks < 2:
            raise GridTooShort(f"need at least 2 stocks, got {n_stocks}")
        if times.shape != (n_steps,):
            raise GridTooShort(f"times has shape {times.shape}, expected ({n_steps},)")
        if np.any(np.diff(times) <= 0):
            raise GridTooShort("times must be strictly increasing")
        for name, arr in (("cap", caps), ("book", books)):
            bad = ~np.isfinite(arr) | (arr <= 0)
            if np.any(bad):
                step, stock = np.argwhere(bad)[0]
                raise NonPositiveInput(
                    f"{name} at step {step}, stock {stock} is {arr[step, stock]}"
                )

        flags = np.asarray(self.book_updated, dtype=bool)
        if flags.size == 0:
            flags = np.zeros(n_steps, dtype=bool)
        assert flags.shape == (n_steps,), f"book_updated has shape {flags.shape}"
        flags = flags.copy()
        flags[0] = False
        if not self.books_continuous:
            moved = np.any(books[1:] != books[:-1], axis=1) & ~flags[1:]
            if np.any(moved):
                step = int(np.argmax(moved)) + 1
                raise UnflaggedBookChange(f"books changed at unflagged step {step}")

        tickers = self.tickers or tuple(f"S{i}" for i in range(n_stocks))
        assert len(tickers) == n_stocks, "one ticker per stock"
        if self.dates is not None:
            assert len(self.dates) == n_steps, "one date per step"

        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "caps", _frozen(caps))
        object.__setattr__(self, "books", _frozen(books))
        object.__setattr__(self, "book_updated", _frozen(flags, bool))
        object.__setattr__(self, "tickers", tuple(tickers))
        if self.dates is not None:
            object.__setattr__(self, "dates", tuple(self.dates))

    @property
    def n_steps(self) -> int:
        return self.caps.shape[0]

    @property
    def n_stocks(self) -> int:
        return self.caps.shape[1]

    @property
    def total_cap(self) -> FloatArray:
        return self.caps.sum(axis=1)

    def truncated(self, last: int) -> "MarketSeries":
        """The series restricted to steps 0..last (at least two steps)."""
        stop = max(last + 1, 2)
        return MarketSeries(
            times=self.times[:stop],
            caps=self.caps[:stop],
            books=self.books[:stop],
            book_updated=self.book_updated[:stop],
            tickers=self.tickers,
            dates=None if self.dates is None else self.dates[:stop],
            books_continuous=self.books_continuous,
        )


@dataclass(frozen=True, eq=False)
class WeightPath:
    """
    Market weights mu, relative book values beta, market-to-book ratios rho
    and the nondecreasing pair (g, h) with g - h = beta.
    """

    times: FloatArray
    mu: FloatArray
    beta: FloatArray
    rho: FloatArray
    g: FloatArray
    h: FloatArray
    jumps: BoolArray
    tickers: tuple[str, ...] = ()
    dates: Optional[tuple[str, ...]] = None

    @property
    def n_steps(self) -> int:
        return self.mu.shape[0]

    @property
    def n_stocks(self) -> int:
        return self.mu.shape[1]

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(self.jumps))

    @property
    def continuous_steps(self) -> BoolArray:
        """Mask over increments 1..N-1: True where the aux move is continuous."""
        return ~self.jumps[1:]

    @property
    def g_minus(self) -> FloatArray:
        return np.where(self.jumps[:, None], shift_down(self.g), self.g)

    @property
    def h_minus(self) -> FloatArray:
        return np.where(self.jumps[:, None], shift_down(self.h), self.h)

    @property
    def beta_minus(self) -> FloatArray:
        return np.where(self.jumps[:, None], shift_down(self.beta), self.beta)

    @property
    def rho_minus(self) -> FloatArray:
        return self.mu / self.beta_minus


# ---------------------------------------------------------------------------
# Generation results
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GammaLedger:
    """
    Cumulative Gamma process and its parts, all of shape (N,).

    `gamma` is the telescoped definition G(0) - G(t) + sum D G(t-) dmu.
    `gamma_continuous` is the expanded form, the sum of the quadratic,
    g, h and local-time terms. `residual` is what the two disagree by
    after accounting for jumps, and shrinks as the grid is refined.
    """

    gamma: FloatArray
    gamma_continuous: FloatArray
    qv_term: FloatArray
    gamma_integral_term: FloatArray
    xi_integral_term: FloatArray
    jump_term: FloatArray
    local_time_term: FloatArray
    values: FloatArray
    values_minus: FloatArray

    @property
    def residual(self) -> FloatArray:
        return self.gamma - (self.gamma_continuous - self.jump_term)

    @property
    def g0(self) -> float:
        return float(self.values[0])


StrategyKind = Literal["additive", "multiplicative"]


@dataclass(frozen=True, eq=False)
class StrategyPath:
    """
    Share holdings per step. `holdings[ℓ]` is the position carried into
    t_ℓ (the left limit), `holdings_after[ℓ]` the position right after any
    book jump at t_ℓ. They only differ at flagged steps.
    """

    kind: StrategyKind
    theta: FloatArray
    theta_after: FloatArray
    holdings: FloatArray
    holdings_after: FloatArray
    wealth: FloatArray
    closed_form_wealth: FloatArray
    defect_Q: FloatArray
    defect_C: FloatArray
    max_gap: float
    ledger: GammaLedger


# ---------------------------------------------------------------------------
# Ranks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RankFrame:
    """
    Descending ranks per step. `perm[ℓ, k]` is the (0-based) index of the
    stock holding rank k; `inverse_perm[ℓ, i]` is the rank of stock i.
    """

    ranked_values: FloatArray
    perm: IntArray
    inverse_perm: IntArray

    @property
    def n_steps(self) -> int:
        return self.perm.shape[0]


@dataclass(frozen=True, eq=False)
class LocalTimeSet:
    """
    `L[ℓ, k]` is the cumulative local time at 0 of the gap between ranks k
    and k+1. `clamp[ℓ, k]` is how much the monotone repair added.
    """

    L: FloatArray
    clamp: FloatArray

    @property
    def clamp_total(self) -> float:
        return float(self.clamp[-1].sum()) if self.clamp.size else 0.0


@dataclass(frozen=True)
class TieReport:
    two_way_steps: int
    three_way_steps: int
    n_steps: int

    @property
    def two_way_fraction(self) -> float:
        return self.two_way_steps / self.n_steps


# ---------------------------------------------------------------------------
# Backtests, attribution, oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BacktestResult:
    name: str
    times: FloatArray
    wealth: FloatArray
    relative_value: FloatArray
    weights_used: FloatArray
    turnover: FloatArray
    dates: Optional[tuple[str, ...]] = None

    @property
    def log_relative_value(self) -> FloatArray:
        return np.log(self.relative_value)


@dataclass(frozen=True)
class MarketSummary:
    final_value: float
    max_drawdown: float
    per_year_log_value: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "finalValue": self.final_value,
            "maxDrawdown": self.max_drawdown,
            "perYearLogValue": self.per_year_log_value,
        }


@dataclass(frozen=True, eq=False)
class AttributionReport:
    """Per-period values; period ℓ runs from step ℓ to step ℓ+1."""

    dc: FloatArray
    mbrc: FloatArray
    w: FloatArray
    v: FloatArray
    local_time_correction: FloatArray


@dataclass(frozen=True, eq=False)
class OraclePath:
    replicated_wealth: FloatArray
    closed_form_wealth: FloatArray
    jump_corrections: FloatArray
    max_abs_gap: float


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class SimConfig(BaseModel):
    d: int = 5
    n_steps: int = 1001
    dt: float = 1e-3
    drifts: Optional[list[float]] = None
    vol_matrix: Optional[list[list[float]]] = None
    covariance: Optional[list[list[float]]] = None
    book_mode: Literal["continuous", "annual_jump"] = "continuous"
    book_drift: Optional[list[float]] = None
    book_wave: float = 0.3
    book_period: float = 0.5
    jump_period: float = 1.0
    book_jump_vol: float = 0.1
    initial_caps: Optional[list[float]] = None
    initial_books: Optional[list[float]] = None
    start_date: str = "2001-01-02"
    seed: int = 0

    @model_validator(mode="after")
    def grid_must_be_valid(self) -> "SimConfig":
        assert self.d >= 2, f"need at least 2 stocks, got d={self.d}"
        assert self.n_steps >= 2, f"need at least 2 steps, got {self.n_steps}"
        assert self.dt > 0, f"dt must be positive, got {self.dt}"
        for name in ("drifts", "book_drift", "initial_caps", "initial_books"):
            values = getattr(self, name)
            assert values is None or len(values) == self.d, f"{name} needs {self.d} entries"
        return self

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)

    @classmethod
    def from_dict(cls, obj: Any) -> "SimConfig":
        return cls.model_validate(obj)


ParamValue = float | list[float]


class PortfolioRequest(BaseModel):
    name: str
    params: dict[str, ParamValue] = Field(default_factory=dict)

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        parts: list[str] = []
        for key, value in sorted(self.params.items()):
            if isinstance(value, list):
                parts.append(f"{key}={'/'.join(f'{x:g}' for x in value)}")
            else:
                parts.append(f"{key}={value:g}")
        return f"{self.name}:{','.join(parts)}"

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, obj: Any) -> "PortfolioRequest":
        return cls(name=obj["name"], params=obj.get("params", {}))


class Tolerances(BaseModel):
    oracle_gap: float = 1e-3
    jump_consistency: float = 1e-10
    balance: float = 1e-9
    derivative: float = 1e-6
    monotone: float = 1e-12


class RunConfig(BaseModel):
    portfolios: list[PortfolioRequest] = Field(default_factory=list)
    sim: SimConfig = Field(default_factory=SimConfig)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    rho_safety: float = 2.0
    delta_safety: float = 2.0
    benchmark: Literal["market", "book_value"] = "market"
    weights_dump: bool = False
    refinement_levels: int = 3

    def to_dict(self) -> dict[str, Any]:
        return {
            "portfolios": [p.to_dict() for p in self.portfolios],
            "sim": self.sim.to_dict(),
            "tolerances": self.tolerances.model_dump(),
            "rhoSafety": self.rho_safety,
            "deltaSafety": self.delta_safety,
            "benchmark": self.benchmark,
            "weightsDump": self.weights_dump,
            "refinementLevels": self.refinement_levels,
        }

    @classmethod
    def from_dict(cls, obj: Any) -> "RunConfig":
        return cls(
            portfolios=[PortfolioRequest.from_dict(p) for p in obj.get("portfolios", [])],
            sim=SimConfig.from_dict(obj.get("sim", {})),
            tolerances=Tolerances.model_validate(obj.get("tolerances", {})),
            rho_safety=obj.get("rhoSafety", 2.0),
            delta_safety=obj.get("deltaSafety", 2.0),
            benchmark=obj.get("benchmark", "market"),
            weights_dump=obj.get("weightsDump", False),
            refinement_levels=obj.get("refinementLevels", 3),
        )


Command = Literal["simulate", "backtest", "decompose", "attribute", "verify"]


class RunManifest(BaseModel):
    command: Command
    data_path: Optional[Path] = None
    universe_path: Optional[Path] = None
    portfolios: list[PortfolioRequest] = Field(default_factory=list)
    output_dir: Path = Path("out")
    seed: Optional[int] = None
    dt: Optional[float] = None
    config: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode="after")
    def files_must_exist(self) -> "RunManifest":
        for path in (self.data_path, self.universe_path):
            if path is not None and not path.exists():
                raise ManifestError(f"{path} does not exist")
        if self.command in ("backtest", "decompose", "attribute") and self.data_path is None:
            raise ManifestError(f"{self.command} needs --data")
        return self
