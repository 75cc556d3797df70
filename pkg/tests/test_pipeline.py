"""Tests for seeds, stage wiring and the end-to-end run."""

import json
from pathlib import Path

import numpy as np
import pytest

from hwscope.detectors import read_scores
from hwscope.errors import ConfigError, InsufficientDataError
from hwscope.features import WindowSpec, read_feature_matrix
from hwscope.ingest import write_trace
from hwscope.injector import make_scenario, synth_trace
from hwscope.pipeline import (
    SEED_ENV,
    RunConfig,
    derive_seeds,
    detect_intervals,
    extract_store,
    load_store,
    merge_stores,
    prune_store,
    resolve_seed,
    run_pipeline,
    select_channels,
)
from hwscope.pruning import write_prune_result
from hwscope.report import load_report


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    """A 2-host synthetic trace with two mean-shift injections on host0."""
    scenario = make_scenario(n_windows=120, n_channels=4, n_injections=2, hosts=2, seed=1)
    result = synth_trace(scenario, WindowSpec())
    path = tmp_path_factory.mktemp("synth") / "trace.csv"
    write_trace(result.store, path)
    return path, result


class TestSeeds:
    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "9")
        assert resolve_seed(4) == 4

    def test_environment(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, " 9 ")
        assert resolve_seed() == 9

    def test_default(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        assert resolve_seed() == 0

    def test_bad_environment(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "nine")
        with pytest.raises(ConfigError, match=SEED_ENV):
            resolve_seed()

    def test_derived_seeds_stable_and_distinct(self):
        seeds = derive_seeds(7, 4)
        assert seeds == derive_seeds(7, 4)
        assert len(set(seeds)) == 4
        assert derive_seeds(8, 4) != seeds


class TestMergeStores:
    def test_disjoint_hosts(self, make_store):
        a = make_store({"h1": {"Busy%": np.zeros(5)}})
        b = make_store({"h2": {"Busy%": np.ones(5)}})
        a.warn("first")
        merged = merge_stores([a, b])
        assert merged.hosts() == ["h1", "h2"]
        assert merged.warnings == ["first"]

    def test_duplicate_host(self, make_store):
        a = make_store({"h1": {"Busy%": np.zeros(5)}})
        with pytest.raises(ConfigError, match="more than one"):
            merge_stores([a, make_store({"h1": {"Busy%": np.zeros(5)}})])

    def test_grid_mismatch(self, make_store):
        a = make_store({"h1": {"Busy%": np.zeros(5)}})
        b = make_store({"h2": {"Busy%": np.zeros(5)}}, interval_ms=200)
        with pytest.raises(ConfigError, match="different grids"):
            merge_stores([a, b])

    def test_nothing(self):
        with pytest.raises(InsufficientDataError):
            merge_stores([])


class TestStages:
    def test_load_needs_trace(self):
        with pytest.raises(ConfigError, match="no trace"):
            load_store(RunConfig())

    def test_load(self, synth):
        path, result = synth
        store = load_store(RunConfig(traces=[path]))
        assert store.hosts() == ["host0", "host1"]
        assert store.interval_ms == result.store.interval_ms
        assert set(result.store.channels()) <= set(store.channels())

    def test_prune_independent_channels_keeps_all(self, synth):
        store = load_store(RunConfig(traces=[synth[0]]))
        result, sweep = prune_store(store, 0.5, [0.9, 0.5])
        assert result.redundant == {}
        assert [p.threshold for p in sweep.points] == [0.9, 0.5]

    def test_select_all_by_default(self, synth):
        store = load_store(RunConfig(traces=[synth[0]]))
        assert select_channels(store, RunConfig()) == (None, None)

    def test_select_retained_file(self, synth, tmp_path):
        store = load_store(RunConfig(traces=[synth[0]]))
        result, _ = prune_store(store)
        path = tmp_path / "prune.csv"
        write_prune_result(result, path)
        channels, loaded = select_channels(store, RunConfig(retained_path=path))
        assert channels == sorted(result.retained)
        assert loaded.retained == result.retained

    def test_extract_aligned_hosts(self, synth):
        store = load_store(RunConfig(traces=[synth[0]]))
        built = extract_store(store, WindowSpec(), workers=2)
        assert built.matrix.hosts() == ["host0", "host1"]
        assert len(built.matrix.for_host("host0").windows) == 120

    def test_extract_too_short(self, make_store):
        store = make_store({"h1": {"Busy%": np.arange(10.0)}})
        with pytest.raises(InsufficientDataError, match="long enough"):
            extract_store(store, WindowSpec())

    def test_detect_intervals(self, synth):
        store = load_store(RunConfig(traces=[synth[0]]))
        intervals = detect_intervals(store, WindowSpec())
        assert set(intervals) == {"host0", "host1"}
        assert intervals["host0"].intervals
        assert intervals == detect_intervals(store, WindowSpec())


class TestRunPipeline:
    def test_artifacts(self, synth, tmp_path):
        result = run_pipeline(RunConfig(traces=[synth[0]], out=tmp_path))
        names = sorted(p.name for p in result.artifacts)
        assert names == [
            "features.csv",
            "report.json",
            "report.txt",
            "scores.host0.csv",
            "scores.host1.csv",
        ]
        assert all(p.exists() for p in result.artifacts)
        assert result.document.record_count() >= 1
        assert "window_id" in (tmp_path / "report.json").read_text(encoding="utf-8")

    def test_no_output_dir(self, synth):
        assert run_pipeline(RunConfig(traces=[synth[0]])).artifacts == []

    def test_seeded(self, synth):
        a = run_pipeline(RunConfig(traces=[synth[0]], seed=3)).document
        b = run_pipeline(RunConfig(traces=[synth[0]], seed=3)).document
        assert a == b

    def test_min_agreement(self, synth):
        loose = run_pipeline(RunConfig(traces=[synth[0]]))
        strict = run_pipeline(RunConfig(traces=[synth[0]], min_agreement=3))
        assert strict.document.record_count() <= loose.document.record_count()
        for section in strict.document.sections:
            assert all(r.agreement == 3 for r in section.windows)

    def test_injected_host_has_records(self, synth):
        path, result = synth
        document = run_pipeline(RunConfig(traces=[path])).document
        host0 = next(s for s in document.sections if s.host == "host0")
        flagged = {r.window_id for r in host0.windows}
        assert flagged & result.labels["host0"]

    def test_aggregated(self, synth):
        result = run_pipeline(RunConfig(traces=[synth[0]], mode="aggregated", workers=2))
        assert result.document.mode == "aggregated"
        assert isinstance(result.document.cross_host, list)

    def test_inline_prune_writes_prune_file(self, synth, tmp_path):
        result = run_pipeline(RunConfig(traces=[synth[0]], prune=True, out=tmp_path))
        assert result.prune is not None
        assert (tmp_path / "prune.csv").exists()

    def test_epoch(self, synth, tmp_path):
        run_pipeline(RunConfig(traces=[synth[0]], epoch="2026-03-17T10:32:00Z", out=tmp_path))
        data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        records = [r for s in data["sections"] for r in s["windows"]]
        assert records
        assert all(r["wall_time"].startswith("10:") for r in records)


class TestSampleTrace:
    """The shipped sample: two hosts, a Busy% and IRQ burst on h1 from 30 s to 35 s."""

    SAMPLE = Path(__file__).resolve().parents[1] / "samples" / "sample_trace.csv"

    def test_default_run_deterministic(self):
        first = run_pipeline(RunConfig(traces=[self.SAMPLE])).document
        second = run_pipeline(RunConfig(traces=[self.SAMPLE])).document
        assert first == second
        assert [s.host for s in first.sections] == ["h1", "h2"]

    def test_burst_reported(self):
        document = run_pipeline(RunConfig(traces=[self.SAMPLE])).document
        h1 = next(s for s in document.sections if s.host == "h1")
        assert {r.window_id for r in h1.windows} & set(range(28, 35))

    def test_artifacts_reread(self, tmp_path):
        run_pipeline(RunConfig(traces=[self.SAMPLE], out=tmp_path))
        matrix = read_feature_matrix(tmp_path / "features.csv", size_ms=3000)
        assert matrix.hosts() == ["h1", "h2"]
        assert len(read_scores(tmp_path / "scores.h1.csv")) == 3
        assert load_report(tmp_path / "report.json").record_count() >= 1


class TestConstantHost:
    """One host varies, the other reports a flat 50% for the whole run."""

    @pytest.fixture
    def trace(self, make_store, rng, tmp_path):
        store = make_store(
            {
                "h1": {"Busy%": 50.0 + rng.normal(size=600)},
                "h2": {"Busy%": np.full(600, 50.0)},
            }
        )
        path = tmp_path / "trace.csv"
        write_trace(store, path)
        return path

    def test_aggregated_run_completes(self, trace):
        document = run_pipeline(RunConfig(traces=[trace], mode="aggregated")).document
        h2 = next(s for s in document.sections if s.host == "h2")
        assert h2.windows == []

    def test_per_host_run_completes(self, trace):
        document = run_pipeline(RunConfig(traces=[trace])).document
        assert [s.host for s in document.sections] == ["h1", "h2"]
