"""Shared fixtures for hwscope tests."""

import logging

import numpy as np
import pandas as pd
import pytest

from hwscope.features import FeatureMatrix, Window
from hwscope.ingest import SeriesStore
from hwscope.registry import (
    Category,
    MetricDescriptor,
    Registry,
    Subsystem,
    default_registry,
)


@pytest.fixture
def registry():
    """The built-in metric registry."""
    return default_registry()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def make_store(registry):
    """Build a SeriesStore from {host: {channel: values}} without parsing."""

    def _make(hosts, interval_ms=100, reg=None):
        store = SeriesStore(registry=reg or registry, interval_ms=interval_ms)
        for host, columns in hosts.items():
            frame = pd.DataFrame(
                {c: np.asarray(v, dtype=float) for c, v in columns.items()}
            )
            frame.index.name = "cell"
            store.frames[host] = frame.reindex(columns=sorted(frame.columns))
        return store

    return _make


@pytest.fixture
def make_matrix():
    """Build a single-host FeatureMatrix from a 2-D array."""

    def _make(values, columns=None, host="h1", size_ms=3000, stride_ms=1000):
        values = np.asarray(values, dtype=float)
        if columns is None:
            columns = [f"c{j}.Busy%__mean" for j in range(values.shape[1])]
        windows = [
            Window(i, i * stride_ms, i * stride_ms + size_ms, host)
            for i in range(values.shape[0])
        ]
        return FeatureMatrix(values=values, columns=list(columns), windows=windows)

    return _make


@pytest.fixture
def write_trace_file(tmp_path):
    """Write canonical trace text to a file and return its path."""

    def _write(text, name="trace.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def tiny_registry():
    """Three CPU gauges with distinct priorities, plus a counter and a static."""
    return Registry(
        [
            MetricDescriptor(name="a", subsystem=Subsystem.CPU, category=Category.DYNAMIC, priority_rank=1),
            MetricDescriptor(name="b", subsystem=Subsystem.CPU, category=Category.DYNAMIC, priority_rank=2),
            MetricDescriptor(name="c", subsystem=Subsystem.MEMORY, category=Category.DYNAMIC, priority_rank=3),
            MetricDescriptor(name="n", subsystem=Subsystem.NETWORK, category=Category.COUNTER, priority_rank=2),
            MetricDescriptor(name="s", subsystem=Subsystem.MEMORY, category=Category.STATIC, priority_rank=9),
        ],
        labels={"a": "Metric A"},
    )


@pytest.fixture(autouse=True)
def _propagate_logs():
    """Undo CLI logging setup so caplog sees package records."""
    yield
    logger = logging.getLogger("hwscope")
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
