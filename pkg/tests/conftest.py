from __future__ import annotations

import numpy as np
import pytest

from metricscope.ingest import MetricSeries, RawSample
from metricscope.preprocess import UniformSeries, zscore


def make_series(component: str, metric: str, values, interval_ms: int = 500) -> MetricSeries:
    return MetricSeries(
        component=component,
        metric=metric,
        samples=tuple(
            RawSample(timestamp_ms=i * interval_ms, value=float(v)) for i, v in enumerate(values)
        ),
    )


def make_uniform(values, component: str = "comp", metric: str = "m", interval_ms: int = 500,
                 start_ms: int = 0) -> UniformSeries:
    return UniformSeries(
        component=component,
        metric=metric,
        start_ms=start_ms,
        interval_ms=interval_ms,
        values=np.asarray(values, dtype=float),
    )


def znormed(values, **kwargs) -> UniformSeries:
    return make_uniform(zscore(np.asarray(values, dtype=float)), **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
