import json

import pytest

from rldataflow import costmodel as cm
from rldataflow.presets import (FROZEN_COST_TABLE, FROZEN_COST_TABLE_REL_TOL,
                                PRESETS, PUBLISHED_COST_TABLE,
                                PUBLISHED_COST_TABLE_REL_TOL, get_preset,
                                preset_roundtrip)

GIB = 1024**3


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_lossless_config_roundtrip(self, name):
        preset = PRESETS[name]
        assert preset_roundtrip(preset) == preset.scenario

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_preset_json_serializable(self, name):
        blob = PRESETS[name].to_json()
        data = json.loads(blob)
        assert data["name"] == name
        assert data["schema_version"] == 1
        assert "scenario" in data and "expected" in data


class TestLookup:
    def test_get_preset(self):
        assert get_preset("row1_centralized").name == "row1_centralized"

    def test_unknown_preset(self):
        with pytest.raises(KeyError, match="available"):
            get_preset("nope")


class TestCostTableBlocks:
    def test_frozen_table_matches_calculator(self):
        for row, frozen in zip(cm.table1(), FROZEN_COST_TABLE):
            got = (row.tcv_gb, row.t100_s, row.t1k_s)
            for g, w in zip(got, frozen):
                assert abs(g - w) <= FROZEN_COST_TABLE_REL_TOL * abs(w)

    def test_published_table_within_display_tolerance(self):
        for row, published in zip(cm.table1(), PUBLISHED_COST_TABLE):
            got = (row.tcv_gb, row.t100_s, row.t1k_s)
            for g, w in zip(got, published):
                assert abs(g - w) <= PUBLISHED_COST_TABLE_REL_TOL * abs(w)

    def test_published_table_not_exact(self):
        # The published values are rounded for display; at tolerance 0 they
        # must NOT match the calculator (this is what --strict documents).
        mismatches = 0
        for row, published in zip(cm.table1(), PUBLISHED_COST_TABLE):
            got = (row.tcv_gb, row.t100_s, row.t1k_s)
            mismatches += sum(g != w for g, w in zip(got, published))
        assert mismatches > 0


class TestExpectedBlocks:
    def test_row1_expected_values(self):
        exp = get_preset("row1_centralized").expected
        rl = get_preset("row1_centralized").scenario.rl
        assert exp["ledger_bytes"]["value"] == cm.tcv_centralized_bytes(rl)
        assert exp["ete_s"]["value"] == pytest.approx(
            cm.dispatch_time(cm.tcv_centralized(rl), cm.BW_100_MIB))

    def test_moe_redundancy_expected_matches_closed_form(self):
        p = get_preset("moe_reshard_4dev")
        sc = p.scenario
        closed = cm.redundant_memory_bytes(sc.model, sc.layout_update,
                                           sc.layout_generation)
        assert p.expected["redundancy_cluster_bytes"]["value"] == closed

    def test_dense_redundancy_expected_matches_closed_form(self):
        p = get_preset("dense_reshard_16dev")
        sc = p.scenario
        per_dev = cm.redundant_memory_bytes(
            sc.model, sc.layout_update,
            sc.layout_generation) / sc.layout_generation.dp
        assert p.expected["redundancy_per_device_bytes"]["value"] == per_dev
        assert per_dev == 8 * GIB

    def test_linearity_sweep_parameters(self):
        exp = get_preset("linearity_sweep").expected
        assert exp["node_counts"] == [1, 2, 4, 8]
        assert exp["per_node_prompts"] == 64
