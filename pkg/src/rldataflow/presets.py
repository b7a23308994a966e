"""Named scenario presets with embedded expected-value blocks.

Each preset packages a full scenario configuration together with the frozen
numbers an acceptance check compares against and the tolerance to apply.
Tolerances live here, next to the expected values, so any drift between the
published figures and the closed-form results is auditable in one place:
the published cost table prints rounded values (e.g. "3.9K"), so those rows
carry a display-precision tolerance, while ledger byte counts are exact.

Every preset round-trips losslessly through the JSON scenario format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .config import DockSettings, ScenarioConfig, scenario_from_dict
from .core import ClusterSpec, ModelSpec, ParallelLayout, RLConfig

GIB = 1024**3
MIB = 1024**2

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    description: str
    scenario: ScenarioConfig
    # Expected-values block: check name -> {"value": ..., "rel_tol": ...,
    # "abs_tol": ...} plus free-form parameters for sweep presets.
    expected: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "scenario": self.scenario.to_dict(),
            "expected": self.expected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _cluster(nodes: int, devices: int = 8, inter=100 * MIB) -> ClusterSpec:
    return ClusterSpec(
        num_nodes=nodes,
        devices_per_node=devices,
        device_memory=256 * GIB,
        host_memory=2048 * GIB,
        inter_node_bw=inter,
        intra_node_bw=10 * inter,
        h2d_bw=50 * GIB,
        d2h_bw=50 * GIB,
    )


# The published cost table, as printed: rounded to the shown precision with
# K-suffixed thousands.  The closed-form values differ from these by up to
# ~2% purely from display rounding, hence the tolerance below.  Running the
# comparison at tolerance 0 is a deliberate sentinel that documents the
# rounding (it must fail).
PUBLISHED_COST_TABLE = (
    (0.96, 9.92, 0.97),
    (3.81, 39.0, 3.81),
    (15.2, 156.1, 15.2),
    (97.0, 993.3, 97.0),
    (388.0, 3900.0, 388.0),
    (3100.0, 31000.0, 3100.0),
)
PUBLISHED_COST_TABLE_REL_TOL = 0.025

# The same six rows at full precision, frozen from an independent evaluation
# of the volume formula (these are what the library must reproduce tightly).
FROZEN_COST_TABLE = (
    (0.96893310546875, 9.921875, 0.96893310546875),
    (3.8128662109375, 39.04375, 3.8128662109375),
    (15.25146484375, 156.175, 15.25146484375),
    (97.0048828125, 993.33, 97.0048828125),
    (388.01953125, 3973.32, 388.01953125),
    (3088.078125, 31621.92, 3088.078125),
)
FROZEN_COST_TABLE_REL_TOL = 1e-4


def _row1_centralized() -> ScenarioPreset:
    # First row of the published cost table, dispatched through a single
    # centralized store over 100 MiB/s links.
    rl = RLConfig(global_batch=256, responses_per_prompt=8, dtype_bytes=4,
                  prompt_len=2048, response_len=8192, response_like_items=5,
                  scalar_items=3)
    world = 16
    scenario = ScenarioConfig(
        cluster=_cluster(nodes=2),
        layout_update=ParallelLayout(tp=2, dp=world // 2),
        layout_generation=ParallelLayout(tp=1, dp=world),
        model=ModelSpec(),
        rl=rl,
        dock=DockSettings(mode="centralized", num_warehouses=1,
                          batch_fetch_size=128),
    )
    return ScenarioPreset(
        name="row1_centralized",
        description=("Published cost-table row 1 (G=256, N=8, PL=2K, n=5, "
                     "SL=8K, M=3) through a centralized store at 100 MiB/s; "
                     "end-to-end time should match the published dispatch "
                     "time and the ledger the closed-form byte total."),
        scenario=scenario,
        expected={
            "ete_s": {"value": 9.921875, "rel_tol": 0.02},
            "ledger_bytes": {"value": 1040384000, "abs_tol": 0},
        },
    )


def _moe_reshard_4dev() -> ScenarioPreset:
    # The 4-device MoE example: update TP2/EP2/DP2 resharded to generation
    # TP1/EP4/DP4.  The naive-vs-swap generation-memory gap must equal the
    # closed-form redundancy GDP*(TW/UTP + EW/GEP) exactly.
    scenario = ScenarioConfig(
        cluster=_cluster(nodes=1, devices=4),
        layout_update=ParallelLayout(tp=2, dp=2, ep=2),
        layout_generation=ParallelLayout(tp=1, dp=4, ep=4),
        model=ModelSpec(common_bytes=1 * GIB, tp_sharded_bytes=8 * GIB,
                        expert_bytes=16 * GIB, num_experts=4),
        rl=RLConfig(global_batch=8, responses_per_prompt=2, dtype_bytes=4,
                    prompt_len=128, response_len=256, response_like_items=2,
                    scalar_items=3),
        dock=DockSettings(mode="transfer_dock", num_warehouses=1),
    )
    # 4 * (8 GiB / 2 + 16 GiB / 4) = 32 GiB cluster-wide.
    return ScenarioPreset(
        name="moe_reshard_4dev",
        description=("4-device MoE resharding example (TP2/EP2/DP2 to "
                     "TP1/EP4/DP4): the cluster-total generation-memory "
                     "difference between the naive and allgather-swap "
                     "executors equals the closed-form redundancy."),
        scenario=scenario,
        expected={
            "redundancy_cluster_bytes": {"value": 32 * GIB, "abs_tol": 0},
        },
    )


def _dense_reshard_16dev() -> ScenarioPreset:
    # Dense 16-device profile: TP8/DP2 update to TP4/DP4 generation with
    # TW = 64 GiB, so the per-device redundancy released by the swap is
    # TW/UTP = 8 GiB.
    scenario = ScenarioConfig(
        cluster=_cluster(nodes=2),
        layout_update=ParallelLayout(tp=8, dp=2),
        layout_generation=ParallelLayout(tp=4, dp=4),
        model=ModelSpec(common_bytes=2 * GIB, tp_sharded_bytes=64 * GIB),
        rl=RLConfig(global_batch=16, responses_per_prompt=2, dtype_bytes=4,
                    prompt_len=128, response_len=256, response_like_items=2,
                    scalar_items=3),
        dock=DockSettings(mode="transfer_dock", num_warehouses=2),
    )
    return ScenarioPreset(
        name="dense_reshard_16dev",
        description=("Dense 16-device resharding profile (TP8/DP2 to "
                     "TP4/DP4, 64 GiB of TP-sharded weights): the per-device "
                     "generation-memory difference between executors is "
                     "TW/UTP = 8 GiB."),
        scenario=scenario,
        expected={
            "redundancy_per_device_bytes": {"value": 8 * GIB,
                                            "abs_tol": 1 * MIB},
        },
    )


def _linearity_sweep() -> ScenarioPreset:
    # Fixed per-node load scaling sweep: 64 prompts per node over
    # {1, 2, 4, 8} nodes, both dock modes.
    scenario = ScenarioConfig(
        cluster=_cluster(nodes=1),
        layout_update=ParallelLayout(tp=2, dp=4),
        layout_generation=ParallelLayout(tp=1, dp=8),
        model=ModelSpec(),
        rl=RLConfig(global_batch=64, responses_per_prompt=4, dtype_bytes=4,
                    prompt_len=1024, response_len=2048, response_like_items=3,
                    scalar_items=3),
        dock=DockSettings(mode="transfer_dock", num_warehouses=1,
                          batch_fetch_size=64),
    )
    return ScenarioPreset(
        name="linearity_sweep",
        description=("Fixed per-node load scaling sweep (64 prompts per "
                     "node, node counts 1/2/4/8): per-warehouse bytes stay "
                     "constant and dispatch time stays near-flat in "
                     "distributed mode, while the centralized store "
                     "degrades linearly."),
        scenario=scenario,
        expected={
            "node_counts": [1, 2, 4, 8],
            "per_node_prompts": 64,
            "max_sharded_time_growth": 1.10,
            "min_centralized_time_growth": 4.0,
        },
    )


def _build_presets() -> dict:
    presets = {}
    for p in (_row1_centralized(), _moe_reshard_4dev(),
              _dense_reshard_16dev(), _linearity_sweep()):
        presets[p.name] = p
    return presets


PRESETS = _build_presets()


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None


def preset_roundtrip(preset: ScenarioPreset) -> ScenarioConfig:
    """Serialize the preset's scenario to JSON and parse it back."""
    return scenario_from_dict(json.loads(preset.scenario.to_json()))
