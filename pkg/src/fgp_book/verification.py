"""
The oracle suite behind `fgp-book verify`: derivative and balance checks,
replication gaps, Gamma monotonicity, jump consistency and a refinement
sweep, all on simulated markets.
"""

import logging
from typing import Any, Callable, Optional, Sequence

import numpy as np

from fgp_book.common import *
from fgp_book.errors import FgpError, JumpsNotSupported, UnbalancedWithJumps, VerificationFailed
from fgp_book.fgp_engine import (
    GeneratorSpec,
    additive_strategy,
    check_generator,
    multiplicative_strategy,
)
from fgp_book.market_model import compute_weights
from fgp_book.portfolio_zoo import (
    book_value,
    book_value_generator,
    diversity_generator,
    logarithmic,
    logarithmic_generator,
    modified_book_value,
    modified_book_value_generator,
    modified_mtb,
    modified_mtb_generator,
    mtb_generator,
)
from fgp_book.rank_engine import (
    RankGenerator,
    constant_rebalanced_generator,
    estimate_local_times,
    rank_multiplicative_strategy,
    rank_path,
    tie_diagnostics,
)
from fgp_book.sim_market import coarsen, replicate, simulate
from fgp_book.types import RunConfig, StrategyKind, StrategyPath, WeightPath

logger = logging.getLogger(__name__)

REFINEMENT_SEEDS = 4
JUMPS_PER_PATH = 3

Report = dict[str, Any]


def reference_generators() -> list[GeneratorSpec]:
    """Every generator family, at parameters inside the sampled interior."""
    return [
        book_value_generator(),
        modified_book_value_generator(0.1, 10.0),
        modified_mtb_generator(1.0, 0.05),
        modified_mtb_generator(0.5, 0.05),
        logarithmic_generator(0.1, 10.0, 0.05),
        mtb_generator(0.5),
        mtb_generator(-0.5),
        diversity_generator(0.5),
    ]


class _Checks:
    """Collects results and remembers the first failure."""

    def __init__(self) -> None:
        self.report: Report = {"passed": True, "firstFailure": None}

    def fail(self, check: str, code: str, message: str) -> None:
        logger.warning("verify %s failed: %s: %s", check, code, message)
        if self.report["firstFailure"] is None:
            self.report["firstFailure"] = {"check": check, "code": code, "message": message}
        self.report["passed"] = False

    def attempt(self, check: str, fn: Callable[[], Optional[Report]]) -> Optional[Report]:
        try:
            return fn()
        except FgpError as e:
            self.fail(check, e.code, str(e))
            return None


def _strategy(kind: StrategyKind, spec: GeneratorSpec, path: WeightPath) -> StrategyPath:
    if kind == "additive":
        return additive_strategy(spec, path)
    return multiplicative_strategy(spec, path)


def _oracle_cases(path: WeightPath, config: RunConfig) -> list[tuple[StrategyKind, GeneratorSpec]]:
    rs, ds = config.rho_safety, config.delta_safety
    return [
        ("multiplicative", book_value().build_generator(path)),
        ("additive", book_value().build_generator(path)),
        ("additive", modified_book_value(rho_safety=rs).build_generator(path)),
        ("additive", modified_mtb(1.0, delta_safety=ds).build_generator(path)),
        ("additive", modified_mtb(0.5, delta_safety=ds).build_generator(path)),
        ("additive", logarithmic(rho_safety=rs, delta_safety=ds).build_generator(path)),
        ("multiplicative", logarithmic(rho_safety=rs, delta_safety=ds).build_generator(path)),
    ]


def _check_generators(checks: _Checks, config: RunConfig, extra: Sequence[GeneratorSpec]) -> None:
    rows: list[Report] = []
    tol = config.tolerances
    for spec in [*reference_generators(), *extra]:

        def run(spec: GeneratorSpec = spec) -> Report:
            result = check_generator(
                spec,
                config.sim.d,
                balance_tol=tol.balance,
                derivative_tol=tol.derivative,
            )
            return {
                "name": spec.name,
                "balanceResidual": result.balance_residual,
                "gradientResidual": result.gradient_residual,
                "hessianResidual": result.hessian_residual,
                "passed": True,
            }

        row = checks.attempt(f"generator {spec.name}", run)
        rows.append(row if row is not None else {"name": spec.name, "passed": False})
    checks.report["generators"] = rows


def _check_oracle(checks: _Checks, config: RunConfig, path: WeightPath) -> None:
    oracle: list[Report] = []
    monotone: list[Report] = []
    tol = config.tolerances
    for kind, spec in _oracle_cases(path, config):
        label = f"{kind} {spec.name}"

        def run(kind: StrategyKind = kind, spec: GeneratorSpec = spec) -> Report:
            sp = _strategy(kind, spec, path)
            gap = replicate(sp, path).max_abs_gap
            passed = gap <= tol.oracle_gap
            if not passed:
                checks.fail(f"oracle {label}", "ORACLE_GAP", f"gap {gap:.3e} exceeds {tol.oracle_gap:.1e}")
            min_step = float(np.diff(sp.ledger.gamma_continuous).min())
            if kind == "additive" and spec.name != "book_value":
                ok = min_step >= -tol.monotone
                monotone.append({"name": spec.name, "minIncrement": min_step, "passed": ok})
                if not ok:
                    checks.fail(f"monotone {spec.name}", "NOT_MONOTONE", f"Gamma^c drops by {-min_step:.3e}")
            return {"name": spec.name, "kind": kind, "maxGap": gap, "passed": passed}

        row = checks.attempt(f"oracle {label}", run)
        oracle.append(row if row is not None else {"name": spec.name, "kind": kind, "passed": False})
    checks.report["oracle"] = oracle
    checks.report["monotonicity"] = monotone


def _check_ranks(checks: _Checks, config: RunConfig, path: WeightPath) -> None:
    d = path.n_stocks
    frame = rank_path(path.rho)
    lt = estimate_local_times(frame)
    ties = tie_diagnostics(frame)
    checks.report["localTimes"] = {
        "clampTotal": lt.clamp_total,
        "finalLocalTime": lt.L[-1].tolist(),
        "twoWayTieSteps": ties.two_way_steps,
        "threeWayTieSteps": ties.three_way_steps,
    }
    top = np.zeros(d)
    top[: d // 2] = 1.0 / (d // 2)
    rows: list[Report] = []
    for c, gated in ((np.full(d, 1.0 / d), True), (top, False)):
        gen = constant_rebalanced_generator(c)

        def run(gen: RankGenerator = gen, gated: bool = gated) -> Report:
            sp = rank_multiplicative_strategy(gen, path, frame, lt)
            gap = replicate(sp, path).max_abs_gap
            passed = gap <= config.tolerances.oracle_gap
            if gated and not passed:
                checks.fail(f"rank {gen.name}", "ORACLE_GAP", f"gap {gap:.3e}")
            return {"name": gen.name, "maxGap": gap, "gated": gated, "passed": passed}

        row = checks.attempt(f"rank {gen.name}", run)
        if row is not None:
            rows.append(row)
    checks.report["rank"] = rows


def _check_jumps(checks: _Checks, config: RunConfig) -> None:
    horizon = (config.sim.n_steps - 1) * config.sim.dt
    sim = config.sim.model_copy(
        update={"book_mode": "annual_jump", "jump_period": horizon / JUMPS_PER_PATH}
    )
    path = compute_weights(simulate(sim))
    flagged = np.flatnonzero(path.jumps)
    tol = config.tolerances
    rows: list[Report] = []
    for spec in (
        book_value().build_generator(path),
        modified_book_value(rho_safety=config.rho_safety).build_generator(path),
        mtb_generator(0.5),
    ):

        def run(spec: GeneratorSpec = spec) -> Report:
            sp = additive_strategy(spec, path)
            oracle = replicate(sp, path)
            jumps = (sp.ledger.values - sp.ledger.values_minus)[flagged]
            theta_jumps = np.sum((sp.theta_after - sp.theta)[flagged] * path.mu[flagged], axis=1)
            error = float(np.abs(theta_jumps - jumps).max(initial=0.0))
            error = max(error, float(np.abs(oracle.jump_corrections[flagged] - jumps).max(initial=0.0)))
            passed = error <= tol.jump_consistency and oracle.max_abs_gap <= tol.oracle_gap
            if not passed:
                checks.fail(
                    f"jumps {spec.name}",
                    "JUMP_CONSISTENCY",
                    f"jump error {error:.3e}, wealth gap {oracle.max_abs_gap:.3e}",
                )
            return {"name": spec.name, "maxError": error, "maxGap": oracle.max_abs_gap, "passed": passed}

        row = checks.attempt(f"jumps {spec.name}", run)
        rows.append(row if row is not None else {"name": spec.name, "passed": False})

    rejected = True
    for spec in (logarithmic_generator(0.01, 100.0, 0.01), _unbalanced(mtb_generator(0.5))):
        try:
            additive_strategy(spec, path)
            rejected = False
            checks.fail(f"jumps {spec.name}", "ACCEPTED_UNBALANCED", "unbalanced generator ran across jumps")
        except (UnbalancedWithJumps, JumpsNotSupported):
            pass
    checks.report["jumps"] = {
        "flaggedSteps": flagged.tolist(),
        "consistency": rows,
        "rejectsUnbalanced": rejected,
    }


def _unbalanced(spec: GeneratorSpec) -> GeneratorSpec:
    """The same function with its balance claim dropped."""
    return GeneratorSpec(
        name=f"{spec.name}[unbalanced]",
        value=spec.value,
        grad_mu=spec.grad_mu,
        grad_g=spec.grad_g,
        grad_h=spec.grad_h,
        hess_mu=spec.hess_mu,
        is_balanced=False,
        normalize_at_start=spec.normalize_at_start,
    )


def _check_refinement(checks: _Checks, config: RunConfig) -> None:
    levels = config.refinement_levels
    factor = 2 ** (levels - 1)
    sim = config.sim.model_copy(
        update={
            "dt": config.sim.dt / factor,
            "n_steps": (config.sim.n_steps - 1) * factor + 1,
            "book_mode": "continuous",
        }
    )
    cases: list[tuple[StrategyKind, str]] = [
        ("multiplicative", "book_value"),
        ("additive", "modified_mtb"),
    ]
    gaps = np.zeros((len(cases), levels, REFINEMENT_SEEDS))
    for s in range(REFINEMENT_SEEDS):
        fine = simulate(sim.model_copy(update={"seed": config.sim.seed + s}))
        for level in range(levels):
            path = compute_weights(coarsen(fine, 2 ** (levels - 1 - level)))
            for i, (kind, name) in enumerate(cases):
                entry = book_value() if name == "book_value" else modified_mtb(1.0, delta_safety=config.delta_safety)
                gaps[i, level, s] = replicate(_strategy(kind, entry.build_generator(path), path), path).max_abs_gap

    dts = [config.sim.dt / 2**level for level in range(levels)]
    rows: list[Report] = []
    for i, (kind, name) in enumerate(cases):
        mean_gap = gaps[i].mean(axis=1)
        ok = bool(np.all(np.diff(mean_gap) <= MONOTONE_TOL))
        if not ok:
            checks.fail(f"refinement {name}", "NOT_REFINING", f"mean gaps {mean_gap.tolist()}")
        rows.append({"name": name, "kind": kind, "dt": dts, "meanGap": mean_gap.tolist(), "nonIncreasing": ok})
    checks.report["refinement"] = rows


def run_verification(config: RunConfig, extra_generators: Sequence[GeneratorSpec] = ()) -> Report:
    checks = _Checks()
    _check_generators(checks, config, extra_generators)

    sim = config.sim.model_copy(update={"book_mode": "continuous"})
    path = compute_weights(simulate(sim))
    _check_oracle(checks, config, path)
    _check_ranks(checks, config, path)
    checks.attempt("jumps", lambda: _check_jumps(checks, config))
    if config.refinement_levels >= 2:
        checks.attempt("refinement", lambda: _check_refinement(checks, config))

    report = checks.report
    logger.info("verify %s", "passed" if report["passed"] else "failed")
    return report


def require_passed(report: Report) -> None:
    if report["passed"]:
        return
    failure = report["firstFailure"]
    raise VerificationFailed(f"{failure['check']}: {failure['code']}: {failure['message']}")
