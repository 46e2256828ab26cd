import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clouddet.model import Granularity, HistoryWindow, NodePath, ScoreRecord, make_windows
from conftest import series_of


def test_window_count_small_series():
    windows = make_windows(series_of(np.arange(10.0)), L=5)
    assert len(windows) == 5
    assert [w.end_index for w in windows] == [5, 6, 7, 8, 9]
    assert all(len(w.data) == 6 for w in windows)


def test_series_exactly_window_sized_yields_nothing():
    assert make_windows(series_of(np.arange(5.0)), L=5) == []


def test_window_count_long_series():
    # 1427 samples with a 50-point history leaves 1377 scored indices
    windows = make_windows(series_of(np.zeros(1427)), L=50)
    assert len(windows) == 1377


def test_windows_are_slices_of_the_input():
    values = np.arange(30.0) ** 1.5
    series = series_of(values)
    for w in make_windows(series, L=7):
        np.testing.assert_array_equal(w.data, values[w.end_index - 7:w.end_index + 1])


@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=40))
def test_consecutive_windows_overlap_by_length(L, extra):
    n = L + 2 + extra
    series = series_of(np.arange(float(n)))
    windows = make_windows(series, L)
    for a, b in zip(windows, windows[1:]):
        assert b.end_index == a.end_index + 1
        np.testing.assert_array_equal(a.data[1:], b.data[:-1])


def test_make_windows_rejects_tiny_L():
    with pytest.raises(ValueError):
        make_windows(series_of(np.arange(10.0)), L=1)


def test_window_validation():
    with pytest.raises(ValueError):
        HistoryWindow(end_index=3, length=5, data=np.zeros(6))
    with pytest.raises(ValueError):
        HistoryWindow(end_index=5, length=5, data=np.zeros(4))


def test_node_path_requires_all_parts():
    with pytest.raises(ValueError):
        NodePath("", "k", "n")
    assert NodePath.parse("a:b:c") == NodePath("a", "b", "c")


def test_score_record_bounds():
    node = NodePath("c", "k", "n")
    with pytest.raises(ValueError):
        ScoreRecord(node, "m", 0, periodic=1.2, trend=0, spike=0, aggregated=0)
    with pytest.raises(ValueError):
        ScoreRecord(node, "m", 0, periodic=0.5, trend=0, spike=0, aggregated=0.1,
                    warmup=True)


def test_series_wall_clock_round_trip():
    series = series_of(np.zeros(5), start=7200, granularity=Granularity.HOUR)
    assert series.timestamp_of(3) == 7200 + 3 * 3600
    assert series.index_of(series.timestamp_of(3)) == 3


def test_granularity_parsing():
    assert Granularity.parse("m") is Granularity.MINUTE
    assert Granularity.parse("hour") is Granularity.HOUR
    assert Granularity.parse("d") is Granularity.DAY
    with pytest.raises(ValueError):
        Granularity.parse("fortnight")
