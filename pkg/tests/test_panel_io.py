import logging
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fgp_book.errors import PanelIncomplete, UnflaggedBookChange
from fgp_book.market_model import compute_weights
from fgp_book.panel_io import (
    DAYS_PER_YEAR,
    export_panel,
    load_panel,
    panel_from_frame,
    read_universe,
    write_universe,
)

from tests.common import (
    TOY_PANEL,
    TOY_PANEL_GAP,
    TOY_PANEL_INFERRED,
    TOY_UNIVERSE,
    check_close,
    jump_path,
    sim_path,
)

logger = logging.getLogger(__name__)


def test_toy_panel():
    series = load_panel(TOY_PANEL, TOY_UNIVERSE)
    assert series.tickers == ("A", "B")
    assert series.dates == ("2020-01-02", "2020-01-03", "2020-01-06")
    check_close(series.times, np.array([0.0, 1.0, 4.0]) / DAYS_PER_YEAR, 1e-15)
    assert series.book_updated.tolist() == [False, False, True]
    assert not series.books_continuous
    path = compute_weights(series)
    check_close(path.mu, [[0.8, 0.2], [0.6, 0.4], [0.5, 0.5]], 1e-15)
    check_close(path.beta[0], [0.25, 0.75], 1e-15)
    check_close(path.beta[2], [0.5, 0.5], 1e-15)


def test_universe_sets_the_order():
    with tempfile.TemporaryDirectory() as tmp:
        universe = Path(tmp) / "universe.txt"
        write_universe(["B", "A"], universe)
        assert read_universe(universe) == ["B", "A"]
        series = load_panel(TOY_PANEL, universe)
    assert series.tickers == ("B", "A")
    check_close(series.caps[0], [2.0, 8.0], 0.0)
    assert load_panel(TOY_PANEL).tickers == ("A", "B")


def test_inferred_flags_warn(caplog: pytest.LogCaptureFixture):
    with caplog.at_level(logging.WARNING, logger="fgp_book.panel_io"):
        series = load_panel(TOY_PANEL_INFERRED, TOY_UNIVERSE)
    assert series.book_updated.tolist() == [False, False, True]
    assert any("inferred 1 book updates" in record.getMessage() for record in caplog.records)


def test_unflagged_book_moves_are_continuous(caplog: pytest.LogCaptureFixture):
    frame = pd.read_csv(TOY_PANEL)
    frame["book_updated"] = 0
    with caplog.at_level(logging.INFO, logger="fgp_book.panel_io"):
        series = panel_from_frame(frame)
    assert series.books_continuous
    assert not series.book_updated.any()
    assert any("continuous books" in record.getMessage() for record in caplog.records)


def test_explicit_flags_must_cover_book_moves():
    frame = pd.read_csv(TOY_PANEL)
    frame.loc[frame["date"] == "2020-01-03", "book"] = [1.5, 3.0]
    with pytest.raises(UnflaggedBookChange) as info:
        panel_from_frame(frame)
    assert info.value.code == "UNFLAGGED_BOOK_CHANGE"
    assert "step 1" in str(info.value)


def test_time_column_sets_the_grid():
    frame = pd.read_csv(TOY_PANEL)
    frame["time"] = np.repeat([0.0, 0.004, 0.012], 2)
    series = panel_from_frame(frame)
    check_close(series.times, [0.0, 0.004, 0.012], 0.0)

    frame.loc[5, "time"] = 0.013
    with pytest.raises(PanelIncomplete) as info:
        panel_from_frame(frame)
    assert "2020-01-06" in str(info.value)


def test_unreadable_values():
    frame = pd.read_csv(TOY_PANEL)
    frame["cap"] = frame["cap"].astype(object)
    frame.loc[2, "cap"] = "n/a"
    with pytest.raises(PanelIncomplete) as info:
        panel_from_frame(frame)
    assert "cap" in str(info.value)

    frame = pd.read_csv(TOY_PANEL)
    frame.loc[0, "date"] = "not a date"
    with pytest.raises(PanelIncomplete):
        panel_from_frame(frame)


def test_incomplete_panels():
    with pytest.raises(PanelIncomplete) as info:
        load_panel(TOY_PANEL_GAP, TOY_UNIVERSE)
    assert "B" in str(info.value)
    assert "2020-01-03" in str(info.value)

    frame = pd.read_csv(TOY_PANEL)
    with pytest.raises(PanelIncomplete):
        panel_from_frame(frame.drop(columns=["book"]))
    with pytest.raises(PanelIncomplete):
        panel_from_frame(frame, ["A"])
    with pytest.raises(PanelIncomplete):
        panel_from_frame(pd.concat([frame, frame.iloc[[0]]]))
    with pytest.raises(PanelIncomplete):
        panel_from_frame(frame, ["A", "B", "C"])

    with tempfile.TemporaryDirectory() as tmp:
        universe = Path(tmp) / "universe.txt"
        universe.write_text("A\nB\nA\n")
        with pytest.raises(PanelIncomplete):
            read_universe(universe)


@pytest.mark.parametrize("jumps", [False, True])
def test_export_and_load(jumps: bool):
    series, path = jump_path() if jumps else sim_path()
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        panel = export_panel(series, out)
        assert panel.exists()
        loaded = load_panel(panel, out / "universe.txt")
    assert loaded.tickers == series.tickers
    assert loaded.dates == series.dates
    check_close(loaded.times, series.times, 1e-12)
    check_close(loaded.caps, series.caps, 1e-12)
    check_close(loaded.books, series.books, 1e-12)
    assert np.array_equal(loaded.book_updated, series.book_updated)
    assert loaded.books_continuous == series.books_continuous

    reloaded = compute_weights(loaded)
    assert reloaded.tickers == path.tickers
    assert reloaded.dates == path.dates
    assert np.array_equal(reloaded.jumps, path.jumps)
    for field in ("times", "mu", "beta", "rho", "g", "h"):
        check_close(getattr(reloaded, field), getattr(path, field), 1e-12)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    test_toy_panel()
    test_incomplete_panels()
    test_explicit_flags_must_cover_book_moves()
    test_time_column_sets_the_grid()
    test_export_and_load(True)
