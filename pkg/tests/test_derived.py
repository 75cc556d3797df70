"""Tests for derived metrics."""

import math

import numpy as np
import pytest

from hwscope.derived import (
    BUILTIN_SPECS,
    DerivedSpec,
    Formula,
    derive,
    evaluate,
    load_derived_specs,
    parse_derived_specs,
)
from hwscope.errors import ConfigError
from hwscope.registry import Category, Subsystem


class TestBuiltins:
    def test_ipc(self, make_store):
        store = make_store({"h1": {"instructions": [0, 2e9, 4e9], "cycles": [0, 1e9, 2e9]}})
        ipc = derive(store).series("h1", "IPC")
        assert math.isnan(ipc[0])
        assert ipc[1:].tolist() == [2.0, 2.0]

    def test_zero_cycles_delta_is_missing(self, make_store):
        store = make_store({"h1": {"instructions": [0, 10, 20], "cycles": [0, 5, 5]}})
        ipc = derive(store).series("h1", "IPC")
        assert ipc[1] == 2.0
        assert math.isnan(ipc[2])

    def test_memory_utilization(self, make_store):
        store = make_store({"h1": {"MemTotal": [100.0] * 3, "MemAvailable": [25.0] * 3}})
        assert derive(store).series("h1", "MemoryUtilization").tolist() == [0.75] * 3

    def test_per_instance_outputs(self, make_store):
        store = make_store(
            {
                "h1": {
                    "cpu0.instructions": [0, 4, 8],
                    "cpu0.cycles": [0, 2, 4],
                    "cpu1.instructions": [0, 1, 2],
                    "cpu1.cycles": [0, 2, 4],
                }
            }
        )
        derived = derive(store)
        assert derived.series("h1", "cpu0.IPC")[1] == 2.0
        assert derived.series("h1", "cpu1.IPC")[1] == 0.5

    def test_network_throughput_sums_rates(self, make_store):
        store = make_store({"h1": {"eth0.rx_bytes": [0, 100, 300], "eth0.tx_bytes": [0, 50, 50]}})
        throughput = derive(store).series("h1", "eth0.NetworkThroughput")
        assert throughput[1:].tolist() == [1500.0, 2000.0]

    def test_derived_channels_are_dynamic(self, make_store):
        store = make_store({"h1": {"instructions": [0, 2, 4], "cycles": [0, 1, 2]}})
        derived = derive(store)
        assert derived.category("IPC") == Category.DYNAMIC
        assert derived.descriptor("IPC").subsystem == Subsystem.CPU


class TestDeriveBehavior:
    def test_missing_inputs_skip_with_warning(self, make_store):
        store = make_store({"h1": {"Busy%": [1, 2, 3]}})
        derived = derive(store, [BUILTIN_SPECS[0]])
        assert derived.channels() == ["Busy%"]
        assert any("IPC skipped" in w for w in derived.warnings)

    def test_idempotent(self, make_store):
        store = make_store({"h1": {"instructions": [0, 2, 4], "cycles": [0, 1, 2]}})
        once = derive(store)
        twice = derive(once)
        assert once.channels() == twice.channels()
        np.testing.assert_array_equal(once.series("h1", "IPC"), twice.series("h1", "IPC"))

    def test_input_store_untouched(self, make_store):
        store = make_store({"h1": {"instructions": [0, 2, 4], "cycles": [0, 1, 2]}})
        derive(store)
        assert "IPC" not in store.channels()

    def test_unregistered_output_is_registered(self, make_store):
        spec = DerivedSpec(
            output_name="DirtyShare",
            formula=Formula.RATIO,
            numerator_channel="Dirty",
            denominator_channel="MemTotal",
            subsystem=Subsystem.MEMORY,
        )
        store = make_store({"h1": {"Dirty": [10.0, 20.0], "MemTotal": [100.0, 100.0]}})
        derived = derive(store, [spec])
        assert derived.series("h1", "DirtyShare").tolist() == [0.1, 0.2]
        assert derived.descriptor("DirtyShare").subsystem == Subsystem.MEMORY
        assert "DirtyShare" not in store.registry

    def test_ratio_outputs_non_negative(self):
        spec = BUILTIN_SPECS[1]
        out = evaluate(spec, np.array([0.0, 3.0, 9.0]), np.array([0.0, 10.0, 20.0]), 100)
        assert (out[1:] >= 0).all()


class TestSpecFile:
    def test_parse(self):
        text = "output_name,formula,numerator,denominator,subsystem\n# comment\nIPC2,RateRatio,instructions,cycles,CPU\n"
        specs = parse_derived_specs(text)
        assert specs == [
            DerivedSpec(
                output_name="IPC2",
                formula=Formula.RATE_RATIO,
                numerator_channel="instructions",
                denominator_channel="cycles",
                subsystem=Subsystem.CPU,
            )
        ]

    def test_bad_formula(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_derived_specs("X,Product,a,b,CPU\n")

    def test_wrong_field_count(self):
        with pytest.raises(ConfigError, match="5 fields"):
            parse_derived_specs("X,Ratio,a\n")

    def test_load(self, tmp_path):
        path = tmp_path / "derived.csv"
        path.write_text("Util,Complement,MemAvailable,MemTotal,Memory\n", encoding="utf-8")
        assert load_derived_specs(path)[0].formula == Formula.COMPLEMENT
