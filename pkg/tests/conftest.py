import hypothesis
import numpy as np
import pytest

from clouddet.model import Granularity, HistoryWindow, MetricSeries, NodePath

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def node():
    return NodePath("c1", "k1", "n1")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def window_of(values) -> HistoryWindow:
    values = np.asarray(values, dtype=np.float64)
    return HistoryWindow(end_index=len(values) - 1, length=len(values) - 1,
                         data=values)


def series_of(values, node=NodePath("c1", "k1", "n1"), metric="cpu_avg",
              granularity=Granularity.HOUR, start=0) -> MetricSeries:
    return MetricSeries(node=node, metric=metric, granularity=granularity,
                        start_timestamp=start, values=np.asarray(values, dtype=np.float64))
