import logging

import pytest

from fgp_book.errors import VerificationFailed
from fgp_book.types import RunConfig, SimConfig
from fgp_book.verification import reference_generators, require_passed, run_verification

from tests.common import corrupt_generator

logger = logging.getLogger(__name__)


def small_config(**overrides) -> RunConfig:
    base = {
        "sim": SimConfig(d=3, n_steps=501, dt=1e-3, seed=7),
        "refinement_levels": 0,
    }
    base.update(overrides)
    return RunConfig(**base)


def test_small_market_passes():
    report = run_verification(small_config())
    logger.info("first failure: %s", report["firstFailure"])
    assert report["passed"]
    assert report["firstFailure"] is None
    assert len(report["generators"]) == len(reference_generators())
    assert all(row["passed"] for row in report["oracle"])
    assert all(row["passed"] for row in report["monotonicity"])
    assert report["jumps"]["rejectsUnbalanced"]
    assert len(report["jumps"]["flaggedSteps"]) >= 2
    gated = [row for row in report["rank"] if row["gated"]]
    assert len(gated) == 1 and gated[0]["passed"]
    assert "refinement" not in report
    require_passed(report)


def test_bad_generator_fails():
    report = run_verification(small_config(), extra_generators=[corrupt_generator()])
    assert not report["passed"]
    assert report["firstFailure"]["code"] == "DERIVATIVE_MISMATCH"
    assert report["generators"][-1] == {"name": "corrupt_book_value", "passed": False}
    with pytest.raises(VerificationFailed) as info:
        require_passed(report)
    assert info.value.code == "VERIFY_FAILED"


@pytest.mark.slow
def test_default_configuration_passes():
    report = run_verification(RunConfig())
    assert report["passed"], report["firstFailure"]
    for row in report["refinement"]:
        assert row["nonIncreasing"]


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    test_small_market_passes()
    test_bad_generator_fails()
