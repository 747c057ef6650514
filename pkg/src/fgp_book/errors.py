"""
Every failure the library reports on purpose. The CLI prints `code` so
callers can match on a stable token instead of a message.
"""


class FgpError(Exception):
    """Base class for all fgp-book errors."""

    code = "FGP_ERROR"


# Market data


class NonPositiveInput(FgpError):
    """A capitalization or book value is zero, negative or not finite."""

    code = "NON_POSITIVE_INPUT"


class GridTooShort(FgpError):
    """Fewer than two time steps or fewer than two stocks."""

    code = "GRID_TOO_SHORT"


class PanelIncomplete(FgpError):
    """A (date, ticker) cell is missing from the panel."""

    code = "PANEL_INCOMPLETE"


class UnflaggedBookChange(FgpError):
    """Book values moved at a step that is not flagged as a book update."""

    code = "UNFLAGGED_BOOK_CHANGE"


# Generation


class DerivativeMismatch(FgpError):
    """Declared derivatives disagree with central finite differences."""

    code = "DERIVATIVE_MISMATCH"


class BalanceMismatch(DerivativeMismatch):
    """A generator claims to be balanced but sum(mu * grad) != G."""

    code = "BALANCE_MISMATCH"


class NumericalFailure(FgpError):
    """A NaN or infinity appeared while accumulating a path."""

    code = "NUMERICAL_FAILURE"

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


class UnbalancedWithJumps(FgpError):
    """Book jumps present but the generator is not balanced."""

    code = "UNBALANCED_WITH_JUMPS"


class NonPositiveG(FgpError):
    """Multiplicative generation needs G > 0 along the whole path."""

    code = "NON_POSITIVE_G"


class ZeroWealth(FgpError):
    """Strategy value vanished, so portfolio weights are undefined."""

    code = "ZERO_WEALTH"


class NotMonotone(FgpError):
    """Gamma decreased, so the arbitrage certificate does not apply."""

    code = "NOT_MONOTONE"


class JumpsNotSupported(FgpError):
    """The operation needs continuous book values."""

    code = "JUMPS_NOT_SUPPORTED"


# Portfolio zoo


class BoundsViolated(FgpError):
    """Market-to-book ratios left the interval [m, M]."""

    code = "BOUNDS_VIOLATED"


class DeltaViolated(FgpError):
    """Some relative book value fell below delta."""

    code = "DELTA_VIOLATED"


class BadComposition(FgpError):
    """Rank coefficients do not sum to one."""

    code = "BAD_COMPOSITION"


class UnknownPortfolio(FgpError):
    """Portfolio name does not resolve in the zoo."""

    code = "UNKNOWN_PORTFOLIO"


class BadParameter(FgpError):
    """A portfolio parameter is missing or out of range."""

    code = "BAD_PARAMETER"


# Backtesting and attribution


class LookAheadViolation(FgpError):
    """A weight rule asked for data beyond its view."""

    code = "LOOK_AHEAD"


class WeightSumError(FgpError):
    """Portfolio weights do not sum to one."""

    code = "WEIGHT_SUM"


class DegenerateWeights(FgpError):
    """A market weight is zero, so weight ratios are undefined."""

    code = "DEGENERATE_WEIGHTS"


class LengthMismatch(FgpError):
    """Inputs cover different numbers of steps or stocks."""

    code = "LENGTH_MISMATCH"


# Simulation and CLI


class BadCovariance(FgpError):
    """Volatility input does not define a valid covariance."""

    code = "BAD_COVARIANCE"


class ManifestError(FgpError):
    """A run manifest references missing files or is inconsistent."""

    code = "MANIFEST_ERROR"


class VerificationFailed(FgpError):
    """A verification check exceeded its configured tolerance."""

    code = "VERIFY_FAILED"
