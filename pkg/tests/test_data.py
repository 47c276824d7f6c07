import logging

import numpy as np
import pytest

from etfdss.data import (DataError, ReturnsPanel, SampleSizeError, align_panels, load_returns_csv,
                         month_index, parse_month, write_returns_csv)
from etfdss.synthetic import load_bundled


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_month_and_index():
    assert parse_month(" 2001-07 ") == "2001-07"
    assert month_index("2001-01") - month_index("2000-12") == 1
    for bad in ("2001-13", "2001/01", "01-2001", "2001-1"):
        with pytest.raises(ValueError):
            parse_month(bad)


def test_load_sorts_rows_and_reads_blank_as_nan(tmp_path):
    path = write(tmp_path, "r.csv", "date,A,B\n2000-03,0.1,\n2000-01,0.2,0.3\n2000-02,0.4,0.5\n")
    panel = load_returns_csv(path)
    assert panel.dates == ("2000-01", "2000-02", "2000-03")
    assert panel.labels == ("A", "B")
    assert panel.values[0].tolist() == [0.2, 0.3]
    assert np.isnan(panel.values[2, 1])


def test_load_errors_name_row_and_column(tmp_path):
    path = write(tmp_path, "r.csv", "date,A,B\n2000-01,0.1,oops\n")
    with pytest.raises(DataError, match=r"row 2, column 'B'"):
        load_returns_csv(path)
    path = write(tmp_path, "d.csv", "date,A\n2000-01,0.1\n2000-01,0.2\n")
    with pytest.raises(DataError, match="duplicate dates"):
        load_returns_csv(path)
    path = write(tmp_path, "m.csv", "date,A\n2000-1x,0.1\n")
    with pytest.raises(DataError, match="malformed date"):
        load_returns_csv(path)
    with pytest.raises(FileNotFoundError):
        load_returns_csv(tmp_path / "missing.csv")


def test_risk_free_column_is_subtracted(tmp_path):
    path = write(tmp_path, "r.csv", "date,A,RF\n2000-01,0.05,0.01\n2000-02,0.03,0.02\n")
    panel = load_returns_csv(path, risk_free_column="RF")
    assert panel.labels == ("A",)
    np.testing.assert_allclose(panel.values[:, 0], [0.04, 0.01])


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(6, 3))
    vals[1, 2] = np.nan
    panel = ReturnsPanel([f"2010-{m:02d}" for m in range(1, 7)], ["X", "Y", "Z"], vals)
    write_returns_csv(panel, tmp_path / "out.csv")
    back = load_returns_csv(tmp_path / "out.csv")
    assert back.dates == panel.dates and back.labels == panel.labels
    np.testing.assert_array_equal(back.values, panel.values)


def test_panel_validation():
    with pytest.raises(DataError):
        ReturnsPanel(["2000-02", "2000-01"], ["A"], np.zeros((2, 1)))
    with pytest.raises(DataError):
        ReturnsPanel(["2000-01"], ["A", "A"], np.zeros((1, 2)))
    with pytest.raises(DataError):
        ReturnsPanel(["2000-01"], ["A"], np.zeros((2, 1)))


def _panel(dates, labels, rng):
    return ReturnsPanel(dates, labels, rng.normal(size=(len(dates), len(labels))))


def test_align_intersects_dates_and_drops_partial_candidates(caplog):
    rng = np.random.default_rng(1)
    tdates = [f"2000-{m:02d}" for m in range(1, 13)]
    cdates = [f"2000-{m:02d}" for m in range(3, 13)] + ["2001-01"]
    targets = _panel(tdates, ["T1"], rng)
    vals = rng.normal(size=(len(cdates), 3))
    vals[4, 1] = np.nan
    candidates = ReturnsPanel(cdates, ["A", "B", "C"], vals)
    with caplog.at_level(logging.WARNING):
        data = align_panels(targets, candidates)
    assert data.targets.dates == tuple(f"2000-{m:02d}" for m in range(3, 13))
    assert data.candidates.labels == ("A", "C")
    assert "B" in caplog.text
    again = align_panels(data.targets, data.candidates)
    assert again.targets.dates == data.targets.dates
    assert again.candidates.labels == data.candidates.labels
    np.testing.assert_array_equal(again.X, data.X)
    np.testing.assert_array_equal(again.R, data.R)


def test_align_rejects_bad_targets_and_short_samples():
    rng = np.random.default_rng(2)
    dates = [f"2000-{m:02d}" for m in range(1, 13)]
    cands = _panel(dates, ["A", "B"], rng)
    tvals = rng.normal(size=(12, 1))
    tvals[3] = np.nan
    with pytest.raises(DataError, match="missing"):
        align_panels(ReturnsPanel(dates, ["T"], tvals), cands)
    with pytest.raises(DataError, match="constant"):
        align_panels(ReturnsPanel(dates, ["T"], np.ones((12, 1))), cands)
    with pytest.raises(SampleSizeError):
        align_panels(_panel(dates[:4], ["T"], rng), _panel(dates[:4], list("ABCD"), rng))
    with pytest.raises(DataError, match="share no dates"):
        align_panels(_panel(dates[:3], ["T"], rng), _panel(dates[6:], ["A"], rng))


def test_bundled_dataset_shape():
    targets, candidates = load_bundled()
    assert targets.T == candidates.T == 240
    assert targets.labels == ("Mkt.RF", "SMB", "HML", "Mom")
    data = align_panels(targets, candidates)
    assert data.p == 12
    assert {"XLF", "TLT", "GLD"}.isdisjoint(data.candidates.labels)
