"""Sample-flow layer: per-worker-state controllers plus per-node warehouses
(transfer-dock mode) and the centralized single-queue baseline, both
executing over the discrete-event engine and charged to its ledger.

Traffic accounting
------------------
Payload moves are charged to tag ``sample_flow``; status/descriptor traffic
to tag ``metadata``. Per record and epoch, the default GRPO-shaped script
charges:

* payload: B*(2PL + 3n*SL) -- prompt fetch by the logprob pass, the n
  response-like items written once and fetched twice (reward pass, update
  fetch), and the update-stage prompt fetch;
* metadata: four consumer claim grants of 2M scalars each (8M total at the
  warehouse side) and, in transfer-dock mode, one full 8M-scalar descriptor
  broadcast to each of the C controllers at terminal commit.

That yields exactly B*(2PL + 3n*SL + 8M) per record in centralized mode and
a metadata share of 8(C+1)M per record in transfer-dock mode, matching the
closed-form calculators byte for byte.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field

from .config import DockSettings
from .core import (ClusterSpec, DEFAULT_WORKER_STATES, RLConfig, SampleMetadata,
                   SampleRecord, record_bytes)
from .simnet import Loc, Simulation, device_loc, svc_loc

# Status values; transitions are monotone. Producer states advance
# absent -> produced; consumer states advance absent -> claimed -> consumed
# (their production signal lives in the prerequisite states).
ABSENT, PRODUCED, CLAIMED, CONSUMED = "absent", "produced", "claimed", "consumed"
_ORDER = {ABSENT: 0, PRODUCED: 1, CLAIMED: 2, CONSUMED: 3}
_ALLOWED = {(ABSENT, PRODUCED), (ABSENT, CLAIMED), (PRODUCED, CLAIMED),
            (CLAIMED, CONSUMED)}

# Scalars charged per record for a claim grant and for the full descriptor.
GRANT_SCALARS = 2
DESCRIPTOR_SCALARS = 8

ALL_FIELDS = frozenset({"prompt", "response", "items", "scalars"})


class ProtocolError(Exception):
    """A dock invariant was violated by the caller (duplicate produce,
    unclaimed fetch/commit, invalid placement)."""


class DeadlockError(Exception):
    def __init__(self, stuck):
        self.stuck = stuck  # set of (state, index)
        super().__init__(f"epoch stalled with {len(stuck)} unconsumed (state, index) pairs")


def field_bytes(rl: RLConfig, fields) -> int:
    """Per-record byte size of a payload field subset."""
    size = 0
    if "prompt" in fields:
        size += rl.prompt_bytes
    if "response" in fields:
        size += rl.response_bytes
    if "items" in fields:
        size += rl.items_bytes
    if "scalars" in fields:
        size += rl.scalars_bytes
    return size


@dataclass
class Warehouse:
    warehouse_id: int
    node: int
    status: dict = field(default_factory=dict)       # idx -> {state: status}
    records: dict = field(default_factory=dict)      # idx -> SampleRecord
    ready: dict = field(default_factory=dict)        # state -> deque of idx
    ready_mark: set = field(default_factory=set)     # (state, idx) enqueued

    @property
    def loc(self) -> Loc:
        return svc_loc(self.node)


@dataclass(frozen=True)
class StageSpec:
    """One worker state's dock script inside an epoch."""

    state: str
    prereqs: tuple = ()               # ((state, required_status), ...)
    fetch_fields: frozenset = frozenset()
    puts_items: bool = False
    is_producer: bool = False
    is_terminal: bool = False


def default_grpo_script() -> tuple[StageSpec, ...]:
    gen, old, ref, rew, upd = DEFAULT_WORKER_STATES
    return (
        StageSpec(gen, is_producer=True),
        StageSpec(old, prereqs=((gen, PRODUCED),), fetch_fields=frozenset({"prompt"}),
                  puts_items=True),
        StageSpec(ref, prereqs=((gen, PRODUCED),)),
        StageSpec(rew, prereqs=((old, CONSUMED),), fetch_fields=frozenset({"items"})),
        StageSpec(upd, prereqs=((old, CONSUMED), (ref, CONSUMED), (rew, CONSUMED)),
                  fetch_fields=frozenset({"prompt", "items"}), is_terminal=True),
    )


class Dock:
    """Warehouses plus controllers over a simulation; single source of truth
    for record statuses is the owning warehouse."""

    def __init__(self, settings: DockSettings, cluster: ClusterSpec,
                 rl: RLConfig, sim: Simulation,
                 script: tuple[StageSpec, ...] | None = None,
                 warehouse_placement: dict | None = None,
                 controller_placement: dict | None = None):
        self.settings = settings
        self.cluster = cluster
        self.rl = rl
        self.sim = sim
        self.script = script or default_grpo_script()
        self.states = tuple(s.state for s in self.script)
        self.stage_by_state = {s.state: s for s in self.script}
        self.terminal_state = next(
            (s.state for s in self.script if s.is_terminal), self.script[-1].state)

        self.mode = settings.mode
        self.num_warehouses = 1 if self.mode == "centralized" else settings.num_warehouses
        self.num_controllers = settings.num_controllers

        if self.mode == "centralized":
            placement = {0: settings.central_node}
        elif warehouse_placement is not None:
            placement = dict(warehouse_placement)
        else:
            placement = {w: w % cluster.num_nodes for w in range(self.num_warehouses)}
        for wid, node in placement.items():
            if not 0 <= node < cluster.num_nodes:
                raise ProtocolError(f"warehouse {wid} placed on unknown node {node}")
        self.warehouses = [Warehouse(w, placement[w]) for w in range(self.num_warehouses)]

        if controller_placement is not None:
            self.controller_nodes = [controller_placement[i]
                                     for i in range(self.num_controllers)]
        else:
            self.controller_nodes = [i % cluster.num_nodes
                                     for i in range(self.num_controllers)]
        for node in self.controller_nodes:
            if not 0 <= node < cluster.num_nodes:
                raise ProtocolError(f"controller placed on unknown node {node}")

        self.per_warehouse_bytes = {w: 0 for w in range(self.num_warehouses)}
        self.inter_node_messages = 0
        self._consumed = {s.state: 0 for s in self.script if not s.is_producer}

    # -- basics -------------------------------------------------------------

    def warehouse_of(self, index: int) -> Warehouse:
        return self.warehouses[index % self.num_warehouses]

    def _entry(self, wh: Warehouse, index: int) -> dict:
        return wh.status.setdefault(index, {s: ABSENT for s in self.states})

    def _advance_status(self, wh: Warehouse, index: int, state: str, new: str):
        entry = self._entry(wh, index)
        cur = entry[state]
        if (cur, new) not in _ALLOWED:
            raise ProtocolError(
                f"illegal status transition {cur} -> {new} for (index={index}, state={state})")
        entry[state] = new
        self._refresh_ready(wh, index)

    def _refresh_ready(self, wh: Warehouse, index: int):
        entry = wh.status[index]
        for stage in self.script:
            if stage.is_producer or entry[stage.state] != ABSENT:
                continue
            key = (stage.state, index)
            if key in wh.ready_mark:
                continue
            if all(_ORDER[entry[ps]] >= _ORDER[req] for ps, req in stage.prereqs):
                wh.ready_mark.add(key)
                wh.ready.setdefault(stage.state, deque()).append(index)

    def _charge(self, src: Loc, dst: Loc, size: int, tag: str, warehouse_id: int):
        self.sim.submit_transfer(src, dst, size, tag)
        self.per_warehouse_bytes[warehouse_id] += size

    def _grant_bytes(self, count: int) -> int:
        return count * GRANT_SCALARS * self.rl.scalar_items * self.rl.dtype_bytes

    def _descriptor_bytes(self, count: int) -> int:
        return count * DESCRIPTOR_SCALARS * self.rl.scalar_items * self.rl.dtype_bytes

    # -- operations -----------------------------------------------------------

    def seed_records(self, indices, producer_state: str | None = None):
        """Materialize generation output in place at the owning warehouses
        (rollout writes locally; no dispatch charge)."""
        state = producer_state or self.script[0].state
        for index in indices:
            wh = self.warehouse_of(index)
            self._advance_status(wh, index, state, PRODUCED)

    def put_samples(self, state: str, records: list[SampleRecord], producer: Loc):
        """Store records at their owning warehouses; payload bytes move from
        the producer to each warehouse node."""
        by_wh: dict[int, int] = {}
        for rec in records:
            wh = self.warehouse_of(rec.index)
            self._advance_status(wh, rec.index, state, PRODUCED)
            wh.records[rec.index] = rec
            by_wh[wh.warehouse_id] = by_wh.get(wh.warehouse_id, 0) + rec.total_bytes
        for wid, size in sorted(by_wh.items()):
            self._charge(producer, self.warehouses[wid].loc, size, "sample_flow", wid)

    def request_metadata(self, state: str, k: int, consumer: Loc,
                         local_only: bool = False) -> list[SampleMetadata]:
        """Claim up to k ready records for this state; the grant carries
        metadata-sized traffic only. Empty batch means nothing is ready."""
        stage = self.stage_by_state.get(state)
        if stage is None or stage.is_producer:
            raise ProtocolError(f"{state!r} is not a registered consumer")
        if self.mode == "centralized":
            service_node = self.settings.central_node
        else:
            service_node = consumer.node  # controller agent co-located
        if consumer.node != service_node:
            self.inter_node_messages += 1
        granted: list[SampleMetadata] = []
        per_wh: dict[int, int] = {}
        for wh in self.warehouses:
            if local_only and wh.node != consumer.node:
                continue
            queue = wh.ready.get(state)
            while queue and len(granted) < k:
                index = queue.popleft()
                wh.ready_mark.discard((state, index))
                self._advance_status(wh, index, state, CLAIMED)
                granted.append(SampleMetadata(index, wh.warehouse_id,
                                              dict(wh.status[index])))
                per_wh[wh.warehouse_id] = per_wh.get(wh.warehouse_id, 0) + 1
            if len(granted) >= k:
                break
        for wid, count in sorted(per_wh.items()):
            self._charge(self.warehouses[wid].loc, consumer,
                         self._grant_bytes(count), "metadata", wid)
        return granted

    def fetch_data(self, state: str, metas: list[SampleMetadata], consumer: Loc,
                   fields=ALL_FIELDS) -> list[SampleRecord | None]:
        """Move the claimed payload (or the requested field subset) from the
        warehouses to the consumer."""
        out = []
        per_wh: dict[int, int] = {}
        for meta in metas:
            wh = self.warehouses[meta.warehouse_id]
            if self._entry(wh, meta.index)[state] != CLAIMED:
                raise ProtocolError(
                    f"fetch of index {meta.index} not claimed by {state}")
            rec = wh.records.get(meta.index)
            if rec is not None:
                size = (rec.total_bytes if fields == ALL_FIELDS
                        else field_bytes(self.rl, fields))
            else:
                size = field_bytes(self.rl, fields)
            per_wh[wh.warehouse_id] = per_wh.get(wh.warehouse_id, 0) + size
            out.append(rec)
        for wid, size in sorted(per_wh.items()):
            self._charge(self.warehouses[wid].loc, consumer, size, "sample_flow", wid)
        return out

    def put_items(self, state: str, indices, producer: Loc):
        """Write the n response-like items for claimed records back to their
        warehouses."""
        size_each = self.rl.items_bytes
        per_wh: dict[int, int] = {}
        for index in indices:
            wh = self.warehouse_of(index)
            if self._entry(wh, index)[state] != CLAIMED:
                raise ProtocolError(f"put_items for index {index} not claimed by {state}")
            per_wh[wh.warehouse_id] = per_wh.get(wh.warehouse_id, 0) + size_each
        for wid, size in sorted(per_wh.items()):
            self._charge(producer, self.warehouses[wid].loc, size, "sample_flow", wid)

    def commit(self, state: str, indices, consumer: Loc):
        """Advance claimed records to consumed at their warehouses. The
        terminal state's commit broadcasts the full descriptor to all C
        controllers in transfer-dock mode."""
        per_wh: dict[int, int] = {}
        committed = 0
        for index in indices:
            wh = self.warehouse_of(index)
            if self._entry(wh, index)[state] != CLAIMED:
                raise ProtocolError(f"commit of index {index} not claimed by {state}")
            self._advance_status(wh, index, state, CONSUMED)
            per_wh[wh.warehouse_id] = per_wh.get(wh.warehouse_id, 0) + 1
            committed += 1
        self._consumed[state] = self._consumed.get(state, 0) + committed
        if state == self.terminal_state and self.mode == "transfer_dock":
            for wid, count in sorted(per_wh.items()):
                size = self._descriptor_bytes(count)
                src = self.warehouses[wid].loc
                for node in self.controller_nodes:
                    self._charge(src, svc_loc(node), size, "metadata", wid)

    # -- reporting --------------------------------------------------------------

    def status_of(self, index: int) -> dict:
        wh = self.warehouse_of(index)
        return dict(self._entry(wh, index))


@dataclass
class EpochReport:
    mode: str
    num_warehouses: int
    num_controllers: int
    dispatch_time_s: float
    per_tag_bytes: dict
    per_warehouse_bytes: dict
    inter_node_messages: int
    stage_times: dict
    records: int
    consumed: dict  # state -> count consumed exactly once

    def sample_flow_total(self) -> int:
        return self.per_tag_bytes.get("sample_flow", 0)

    def metadata_total(self) -> int:
        return self.per_tag_bytes.get("metadata", 0)

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "S": self.num_warehouses,
            "C": self.num_controllers,
            "dispatch_time_s": self.dispatch_time_s,
            "per_tag_bytes": dict(sorted(self.per_tag_bytes.items())),
            "per_warehouse_bytes": {str(k): v for k, v in
                                    sorted(self.per_warehouse_bytes.items())},
            "inter_node_messages": self.inter_node_messages,
            "stage_times": self.stage_times,
            "records": self.records,
        }, indent=2, sort_keys=True)


def _consumer_ranks(dock: Dock, cluster: ClusterSpec) -> list[Loc]:
    """Device locations of the racing consumers of one worker state."""
    per_state = dock.settings.consumers_per_state
    locs = []
    if dock.mode == "transfer_dock" and dock.settings.locality:
        # One consumer group per node so each warehouse is served locally.
        nodes = range(cluster.num_nodes)
    elif cluster.num_nodes > 1 and dock.mode == "centralized":
        # Keep workers off the buffer node so dispatch is a remote cost.
        nodes = [n for n in range(cluster.num_nodes)
                 if n != dock.settings.central_node]
    else:
        nodes = range(cluster.num_nodes)
    for node in nodes:
        for i in range(per_state):
            locs.append(device_loc(node, i % cluster.devices_per_node))
    return locs


def drive_stage(dock: Dock, stage: StageSpec, rng: random.Random, total: int,
                local_only: bool) -> dict[int, int]:
    """Issue one consumer stage's dock operations (claims, fetches, item
    writes, commits) under seeded consumer interleaving; transfers are
    submitted but not drained. Returns per-index consume counts."""
    ranks = _consumer_ranks(dock, dock.cluster)
    pending: dict[int, list[int]] = {i: [] for i in range(len(ranks))}
    counts: dict[int, int] = {}
    done = 0
    while done < total:
        order = list(range(len(ranks)))
        rng.shuffle(order)
        progressed = False
        for ri in order:
            consumer = ranks[ri]
            if pending[ri]:
                batch = pending[ri]
                pending[ri] = []
                dock.commit(stage.state, batch, consumer)
                for idx in batch:
                    counts[idx] = counts.get(idx, 0) + 1
                done += len(batch)
                progressed = True
                continue
            metas = dock.request_metadata(
                stage.state, dock.settings.batch_fetch_size, consumer,
                local_only=local_only)
            if not metas:
                continue
            progressed = True
            if stage.fetch_fields:
                dock.fetch_data(stage.state, metas, consumer, stage.fetch_fields)
            indices = [m.index for m in metas]
            if stage.puts_items:
                dock.put_items(stage.state, indices, consumer)
            pending[ri] = indices
        if not progressed and done < total:
            stuck = {(stage.state, idx) for idx in range(total)
                     if dock.status_of(idx)[stage.state] != CONSUMED}
            raise DeadlockError(stuck)
    return counts


def run_epoch(dock: Dock, seed: int = 0, record_count: int | None = None) -> EpochReport:
    """Drive the dock's stage script over all record indices with seeded
    consumer interleaving; stages are barrier-synchronized like synchronous
    GRPO. Returns the ledger view and the simulated dispatch wall time."""
    sim = dock.sim
    rl = dock.rl
    total = rl.num_records if record_count is None else record_count
    rng = random.Random(seed)
    start = sim.now
    stage_times: dict[str, float] = {}
    consumed_counts: dict[str, dict[int, int]] = {}
    local_only = dock.mode == "transfer_dock" and dock.settings.locality

    for stage in dock.script:
        stage_start = sim.now
        if stage.is_producer:
            dock.seed_records(range(total), stage.state)
            stage_times[stage.state] = 0.0
            continue
        consumed_counts[stage.state] = drive_stage(dock, stage, rng, total,
                                                   local_only)
        sim.run_until_idle()
        stage_times[stage.state] = sim.now - stage_start

    return EpochReport(
        mode=dock.mode,
        num_warehouses=dock.num_warehouses,
        num_controllers=dock.num_controllers,
        dispatch_time_s=sim.now - start,
        per_tag_bytes=dict(sim.ledger.per_tag),
        per_warehouse_bytes=dict(dock.per_warehouse_bytes),
        inter_node_messages=dock.inter_node_messages,
        stage_times=stage_times,
        records=total,
        consumed={state: counts for state, counts in consumed_counts.items()},
    )
