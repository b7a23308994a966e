"""Iteration-level orchestration: resharding, then the GRPO-shaped stage
sequence (generation → logprob/reference/reward passes → update) driven over
the sample-flow layer, with the host-to-device weight restore overlapped
with the inference passes.

Compute is modeled as a per-stage affine function of tokens processed per
device (defaults to zero so reports isolate the dataflow costs); end-to-end
time, per-stage times, Eq.-style throughput, and scaling/linearity sweeps
come out of the simulation's virtual clock and ledgers.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

from . import costmodel
from .config import ScenarioConfig
from .core import DEFAULT_WORKER_STATES, RLConfig
from .dock import Dock, drive_stage, run_epoch
from .reshard import execute_allgather_swap, execute_naive
from .simnet import Simulation, global_device_loc, host_loc

EXECUTORS = ("naive", "allgather_swap")


@dataclass(frozen=True)
class StageCompute:
    """Synthetic compute time: a + b * tokens_per_device seconds."""

    a: float = 0.0
    b: float = 0.0

    def seconds(self, tokens_per_device: float) -> float:
        return self.a + self.b * tokens_per_device


@dataclass(frozen=True)
class StagePlan:
    """Per-stage compute coefficients keyed by worker state; stages missing
    from the map cost zero compute."""

    compute: dict = field(default_factory=dict)

    def stage_seconds(self, state: str, tokens_per_device: float) -> float:
        return self.compute.get(state, StageCompute()).seconds(tokens_per_device)


@dataclass
class IterationReport:
    mode: str
    executor: str
    seed: int
    ete_s: float
    stage_times: dict
    reshard_time_s: float
    restore_time_s: float
    update_start_s: float
    dispatch_time_s: float
    dispatch_fraction: float
    throughput_tps: float
    per_tag_bytes: dict
    per_warehouse_bytes: dict
    inter_node_messages: int
    per_device_peak: dict
    per_device_generation_bytes: dict  # steady occupancy through generation
    records: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "executor": self.executor,
            "seed": self.seed,
            "ete_s": self.ete_s,
            "stage_times": dict(self.stage_times),
            "reshard_time_s": self.reshard_time_s,
            "restore_time_s": self.restore_time_s,
            "update_start_s": self.update_start_s,
            "dispatch_time_s": self.dispatch_time_s,
            "dispatch_fraction": self.dispatch_fraction,
            "throughput_tps": self.throughput_tps,
            "per_tag_bytes": dict(sorted(self.per_tag_bytes.items())),
            "per_warehouse_bytes": {str(k): v for k, v in
                                    sorted(self.per_warehouse_bytes.items())},
            "inter_node_messages": self.inter_node_messages,
            "per_device_peak": {str(k): v for k, v in
                                sorted(self.per_device_peak.items())},
            "per_device_generation_bytes": {
                str(k): v for k, v in
                sorted(self.per_device_generation_bytes.items())},
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _tokens_per_device(rl: RLConfig, world: int) -> float:
    return rl.num_records * (rl.prompt_len + rl.response_len) / world


def run_iteration(scenario: ScenarioConfig, executor: str = "allgather_swap",
                  stage_plan: StagePlan | None = None, seed: int = 0,
                  record_count: int | None = None,
                  overlap_restore: bool = True,
                  artifacts: dict | None = None) -> IterationReport:
    """One training iteration: reshard to the generation layout, drive the
    stage scripts over the dock, restore update weights during the inference
    passes, and run the update stage last.

    ``artifacts``, if given, receives the live Simulation under "sim" so
    callers can export its timelines and ledgers.
    """
    if executor not in EXECUTORS:
        raise ValueError(f"unknown reshard executor {executor!r}")
    cluster = scenario.cluster
    rl = scenario.rl
    plan = stage_plan or StagePlan()
    sim = Simulation(cluster)
    if artifacts is not None:
        artifacts["sim"] = sim
    tokens = _tokens_per_device(rl, cluster.world_size)

    if executor == "naive":
        reshard_rep = execute_naive(scenario.model, scenario.layout_update,
                                    scenario.layout_generation, cluster, sim)
    else:
        reshard_rep = execute_allgather_swap(
            scenario.model, scenario.layout_update, scenario.layout_generation,
            cluster, sim, restore=not overlap_restore)

    dock = Dock(scenario.dock, cluster, rl, sim)
    rng = random.Random(seed)
    total = rl.num_records if record_count is None else record_count
    local_only = dock.mode == "transfer_dock" and dock.settings.locality
    inference_states = {s.state for s in dock.script[1:-1]}
    terminal = dock.script[-1]

    stage_times: dict[str, float] = {}
    dispatch_time = 0.0
    update_start = 0.0
    restore_pending = overlap_restore and executor == "allgather_swap"
    restore_window = {"start": 0.0, "end": 0.0}

    def submit_restore():
        restore_window["start"] = sim.now
        for rank, nbytes in reshard_rep.restore_bytes.items():
            loc = global_device_loc(cluster, rank)
            node = loc.node

            def done(rank=rank, node=node):
                sim.free(host_loc(node), f"swap_rank{rank}")
                restore_window["end"] = sim.now

            sim.submit_transfer(host_loc(node), loc, nbytes, "swap_h2d",
                                on_complete=done)

    for stage in dock.script:
        start = sim.now
        if stage is terminal:
            update_start = start
        if stage.is_producer:
            dock.seed_records(range(total), stage.state)
        else:
            if stage.state in inference_states and restore_pending:
                # The H2D restore runs alongside the inference passes; each
                # stage barrier waits for whichever traffic finishes last, so
                # the update stage never starts before the weights are back.
                submit_restore()
                restore_pending = False
            drive_stage(dock, stage, rng, total, local_only)
        delay = plan.stage_seconds(stage.state, tokens)
        if delay:
            sim.schedule(delay)
        if stage is terminal and restore_pending:
            # Degenerate script with no inference stages.
            submit_restore()
            restore_pending = False
        sim.run_until_idle()
        stage_times[stage.state] = sim.now - start
        if not stage.is_producer:
            dispatch_time += sim.now - start

    if overlap_restore and executor == "allgather_swap":
        restore_time = restore_window["end"] - restore_window["start"]
    else:
        restore_time = reshard_rep.h2d_restore_time_s
    ete = sim.now
    throughput = (costmodel.throughput(rl, cluster.world_size, ete)
                  if ete > 0 else 0.0)
    peaks = {str(loc): tl.peak for loc, tl in
             sorted(sim.timelines.items(), key=lambda kv: str(kv[0]))}
    return IterationReport(
        mode=dock.mode,
        executor=executor,
        seed=seed,
        ete_s=ete,
        stage_times=stage_times,
        reshard_time_s=reshard_rep.reshard_time_s,
        restore_time_s=restore_time,
        update_start_s=update_start,
        dispatch_time_s=dispatch_time,
        dispatch_fraction=(dispatch_time / ete) if ete > 0 else 0.0,
        throughput_tps=throughput,
        per_tag_bytes=dict(sim.ledger.per_tag),
        per_warehouse_bytes=dict(dock.per_warehouse_bytes),
        inter_node_messages=dock.inter_node_messages,
        per_device_peak=peaks,
        per_device_generation_bytes=dict(reshard_rep.per_device_generation_bytes),
        records=total,
    )


# -- scaling ------------------------------------------------------------------


@dataclass
class LinearityRow:
    nodes: int
    mode: str
    records: int
    dispatch_time_s: float
    total_bytes: int
    per_warehouse_bytes: int
    cluster_tokens_per_s: float
    linearity: float

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes, "mode": self.mode, "records": self.records,
            "dispatch_time_s": self.dispatch_time_s,
            "total_bytes": self.total_bytes,
            "per_warehouse_bytes": self.per_warehouse_bytes,
            "cluster_tokens_per_s": self.cluster_tokens_per_s,
            "linearity": self.linearity,
        }


def _scaled_scenario(scenario: ScenarioConfig, nodes: int,
                     per_node_prompts: int, mode: str) -> ScenarioConfig:
    cluster = replace(scenario.cluster, num_nodes=nodes)
    rl = replace(scenario.rl, global_batch=per_node_prompts * nodes)
    dock = replace(scenario.dock, mode=mode,
                   num_warehouses=nodes if mode == "transfer_dock" else 1)
    return replace(scenario, cluster=cluster, rl=rl, dock=dock)


def run_linearity(scenario: ScenarioConfig, node_counts, per_node_prompts: int,
                  seed: int = 0) -> list[LinearityRow]:
    """Fixed per-node load sweep: for each node count run both dock modes as
    pure dispatch epochs and report volumes, times, and linearity (cluster
    token rate at S nodes over S times the single-node rate)."""
    node_counts = list(node_counts)
    if node_counts != sorted(node_counts):
        raise ValueError("node_counts must be ascending")
    rows = []
    base_rate: dict[str, float] = {}
    for mode in ("centralized", "transfer_dock"):
        for nodes in node_counts:
            sc = _scaled_scenario(scenario, nodes, per_node_prompts, mode)
            sim = Simulation(sc.cluster)
            dock = Dock(sc.dock, sc.cluster, sc.rl, sim)
            report = run_epoch(dock, seed=seed)
            tokens = sc.rl.num_records * (sc.rl.prompt_len + sc.rl.response_len)
            rate = tokens / report.dispatch_time_s if report.dispatch_time_s else 0.0
            if nodes == node_counts[0]:
                base_rate[mode] = rate / nodes
            lin = (rate / (nodes * base_rate[mode])) if base_rate[mode] else 0.0
            per_wh = (max(report.per_warehouse_bytes.values())
                      if report.per_warehouse_bytes else 0)
            rows.append(LinearityRow(
                nodes=nodes, mode=mode, records=sc.rl.num_records,
                dispatch_time_s=report.dispatch_time_s,
                total_bytes=report.sample_flow_total() + report.metadata_total(),
                per_warehouse_bytes=per_wh,
                cluster_tokens_per_s=rate,
                linearity=lin,
            ))
    return rows


def compare_modes(scenario: ScenarioConfig, seed: int = 0) -> dict:
    """Side-by-side iteration reports for the four mode/executor combos."""
    out = {}
    for mode in ("centralized", "transfer_dock"):
        for executor in EXECUTORS:
            sc = replace(scenario, dock=replace(scenario.dock, mode=mode))
            report = run_iteration(sc, executor=executor, seed=seed)
            out[f"{mode}+{executor}"] = report
    return out


def grpo_states() -> tuple[str, ...]:
    return DEFAULT_WORKER_STATES
