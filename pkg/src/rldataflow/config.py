"""Scenario configuration: JSON ingestion with byte/bandwidth suffixes and
lossless round-tripping.

Top-level sections: cluster, layout_update, layout_generation, model, rl,
dock. Byte sizes accept KiB/MiB/GiB suffixes; bandwidths accept MiB/s and
GiB/s.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .core import ClusterSpec, ConfigError, ModelSpec, ParallelLayout, RLConfig

_SIZE_UNITS = {"": 1, "B": 1, "KiB": 1024, "MiB": 1024**2, "GiB": 1024**3}
_BW_UNITS = {"B/s": 1, "KiB/s": 1024, "MiB/s": 1024**2, "GiB/s": 1024**3}


def parse_size(value) -> int:
    """'64GiB' -> 68719476736; plain ints pass through."""
    if isinstance(value, bool):
        raise ConfigError(f"not a byte size: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, str):
        raise ConfigError(f"not a byte size: {value!r}")
    s = value.strip().replace(" ", "")
    for unit in sorted(_SIZE_UNITS, key=len, reverse=True):
        if unit and s.endswith(unit):
            num = s[: -len(unit)]
            try:
                return int(float(num) * _SIZE_UNITS[unit])
            except ValueError:
                raise ConfigError(f"unparseable byte size: {value!r}") from None
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"unparseable byte size: {value!r}") from None


def parse_bandwidth(value) -> float:
    """'100MiB/s' -> 104857600.0; plain numbers are bytes/second."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"not a bandwidth: {value!r}")
    s = value.strip().replace(" ", "")
    for unit in sorted(_BW_UNITS, key=len, reverse=True):
        if s.endswith(unit):
            num = s[: -len(unit)]
            try:
                return float(num) * _BW_UNITS[unit]
            except ValueError:
                raise ConfigError(f"unparseable bandwidth: {value!r}") from None
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"unparseable bandwidth: {value!r}") from None


@dataclass(frozen=True)
class DockSettings:
    """Sample-flow layer settings (the dock section of a scenario)."""

    mode: str = "transfer_dock"  # or "centralized"
    num_warehouses: int = 1
    num_controllers: int = 5
    batch_fetch_size: int = 32
    central_node: int = 0
    locality: bool = True
    consumers_per_state: int = 1

    def __post_init__(self):
        if self.mode not in ("centralized", "transfer_dock"):
            raise ConfigError(f"unknown dock mode {self.mode!r}")
        if self.num_warehouses < 1 or self.num_controllers < 1:
            raise ConfigError("warehouse and controller counts must be >= 1")
        if self.batch_fetch_size < 1 or self.consumers_per_state < 1:
            raise ConfigError("batch size and consumer count must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    cluster: ClusterSpec
    layout_update: ParallelLayout
    layout_generation: ParallelLayout
    model: ModelSpec
    rl: RLConfig
    dock: DockSettings = field(default_factory=DockSettings)

    def to_dict(self) -> dict:
        return {
            "cluster": asdict(self.cluster),
            "layout_update": asdict(self.layout_update),
            "layout_generation": asdict(self.layout_generation),
            "model": asdict(self.model),
            "rl": asdict(self.rl),
            "dock": asdict(self.dock),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _section(data: dict, name: str) -> dict:
    sec = data.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing or malformed section {name!r}")
    return sec


def scenario_from_dict(data: dict) -> ScenarioConfig:
    cl = _section(data, "cluster")
    cluster = ClusterSpec(
        num_nodes=int(cl["num_nodes"]),
        devices_per_node=int(cl["devices_per_node"]),
        device_memory=parse_size(cl["device_memory"]),
        host_memory=parse_size(cl["host_memory"]),
        inter_node_bw=parse_bandwidth(cl["inter_node_bw"]),
        intra_node_bw=parse_bandwidth(cl["intra_node_bw"]),
        h2d_bw=parse_bandwidth(cl["h2d_bw"]),
        d2h_bw=parse_bandwidth(cl["d2h_bw"]),
        per_message_latency=float(cl.get("per_message_latency", 0.0)),
    )
    layouts = {}
    for name in ("layout_update", "layout_generation"):
        sec = _section(data, name)
        layouts[name] = ParallelLayout(**{k: int(v) for k, v in sec.items()})
    mo = _section(data, "model")
    model = ModelSpec(
        common_bytes=parse_size(mo.get("common_bytes", 0)),
        tp_sharded_bytes=parse_size(mo.get("tp_sharded_bytes", 0)),
        expert_bytes=parse_size(mo.get("expert_bytes", 0)),
        num_experts=int(mo.get("num_experts", 1)),
        num_layers=int(mo.get("num_layers", 1)),
    )
    rl_sec = _section(data, "rl")
    rl = RLConfig(**{k: int(v) for k, v in rl_sec.items()})
    dock_sec = data.get("dock", {})
    if not isinstance(dock_sec, dict):
        raise ConfigError("malformed section 'dock'")
    dock = DockSettings(**dock_sec)
    return ScenarioConfig(cluster, layouts["layout_update"],
                          layouts["layout_generation"], model, rl, dock)


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario file must hold a JSON object")
    return scenario_from_dict(data)
