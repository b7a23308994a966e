"""Deterministic discrete-event engine: virtual time, bandwidth-limited
point-to-point transfers with max-min fair sharing, and per-location memory
accounting with peak tracking.

One simulation owns its state exclusively (single-threaded by contract);
independent simulations may run concurrently.

Locations and routing
---------------------
Three location kinds exist on every node:

* ``device`` -- an accelerator; intra-node device traffic shares the node's
  internal fabric, cross-node traffic occupies the inter-node links (NICs)
  of *both* endpoints' nodes.
* ``host`` -- host memory reached over the dedicated H2D/D2H links (weight
  swapping).
* ``svc`` -- a node-level software endpoint (warehouse or controller);
  same-node traffic to/from it uses the node's internal fabric, cross-node
  traffic the NICs.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field

from .core import ClusterSpec

DEFAULT_EVENT_CAP = 10**8
_EPS = 1e-9


class SimError(Exception):
    pass


class EventCapExceeded(SimError):
    """The simulation did not quiesce within the event cap."""


class OutOfMemoryError(SimError):
    """A memory allocation exceeded a location's capacity; the scenario is
    infeasible, not a crash."""


@dataclass(frozen=True)
class Loc:
    kind: str  # "device" | "host" | "svc"
    node: int
    device: int | None = None

    def __str__(self):
        if self.kind == "device":
            return f"d{self.node}.{self.device}"
        return f"{self.kind}{self.node}"


def device_loc(node: int, device: int) -> Loc:
    return Loc("device", node, device)


def host_loc(node: int) -> Loc:
    return Loc("host", node)


def svc_loc(node: int) -> Loc:
    return Loc("svc", node)


def global_device_loc(cluster: ClusterSpec, rank: int) -> Loc:
    """Map a global device rank to its (node, local index) location."""
    if not 0 <= rank < cluster.world_size:
        raise SimError(f"device rank {rank} outside world size {cluster.world_size}")
    return device_loc(rank // cluster.devices_per_node, rank % cluster.devices_per_node)


@dataclass
class CommLedger:
    """Cumulative completed-transfer bytes, per tag and per link."""

    per_tag: dict = field(default_factory=dict)
    per_link: dict = field(default_factory=dict)

    def credit(self, tag: str, size: int, links: tuple):
        self.per_tag[tag] = self.per_tag.get(tag, 0) + size
        for link in links:
            self.per_link[link] = self.per_link.get(link, 0) + size

    def total(self, *tags: str) -> int:
        if not tags:
            return sum(self.per_tag.values())
        return sum(self.per_tag.get(t, 0) for t in tags)

    def snapshot(self) -> dict:
        return {
            "per_tag": dict(sorted(self.per_tag.items())),
            "per_link": {"/".join(map(str, k)): v
                         for k, v in sorted(self.per_link.items())},
        }


@dataclass
class MemoryTimeline:
    """Allocation history of one location."""

    loc: Loc
    capacity: int
    events: list = field(default_factory=list)  # (time, delta, tag, occupancy)
    current: int = 0
    peak: int = 0
    allocs: dict = field(default_factory=dict)  # tag -> size

    def alloc(self, time: float, size: int, tag: str) -> bool:
        if size < 0:
            raise SimError("allocation size must be >= 0")
        if tag in self.allocs:
            raise SimError(f"tag {tag!r} already allocated at {self.loc}")
        if self.current + size > self.capacity:
            return False
        self.allocs[tag] = size
        self.current += size
        self.peak = max(self.peak, self.current)
        self.events.append((time, size, tag, self.current))
        return True

    def free(self, time: float, tag: str) -> int:
        if tag not in self.allocs:
            raise SimError(f"tag {tag!r} not allocated at {self.loc}")
        size = self.allocs.pop(tag)
        self.current -= size
        self.events.append((time, -size, tag, self.current))
        return size


@dataclass
class Transfer:
    tid: int
    src: Loc
    dst: Loc
    size: int
    tag: str
    links: tuple
    remaining: float
    on_complete: object = None
    started: bool = False
    rate: float = 0.0
    epoch: int = 0
    eta_scheduled: bool = False
    done: bool = False


class Simulation:
    """Event loop plus links, ledger, and memory timelines for one cluster."""

    def __init__(self, cluster: ClusterSpec, event_cap: int = DEFAULT_EVENT_CAP):
        self.cluster = cluster
        self.now = 0.0
        self.ledger = CommLedger()
        self.event_cap = event_cap
        self._heap = []  # (time, seq, fn)
        self._seq = 0
        self._next_tid = 0
        self._flows: dict[int, Transfer] = {}
        self._last_progress = 0.0
        self._events_processed = 0
        self._resched_pending = False
        self._mem: dict[Loc, MemoryTimeline] = {}

    # -- links ------------------------------------------------------------

    def _capacity(self, link: tuple) -> float:
        kind = link[0]
        c = self.cluster
        return {"nic": c.inter_node_bw, "intra": c.intra_node_bw,
                "h2d": c.h2d_bw, "d2h": c.d2h_bw}[kind]

    def route(self, src: Loc, dst: Loc) -> tuple:
        if src == dst:
            return ()
        for loc in (src, dst):
            if not 0 <= loc.node < self.cluster.num_nodes:
                raise SimError(f"unknown node in location {loc}")
            if loc.kind == "device" and not 0 <= loc.device < self.cluster.devices_per_node:
                raise SimError(f"unknown device in location {loc}")
        if src.node != dst.node:
            # Cross-node traffic is bottlenecked by both endpoints' NICs.
            return (("nic", src.node), ("nic", dst.node))
        kinds = (src.kind, dst.kind)
        if kinds == ("host", "device"):
            return (("h2d", src.node),)
        if kinds == ("device", "host"):
            return (("d2h", src.node),)
        if "host" in kinds:
            return ()  # host <-> svc on one node: in-memory
        return (("intra", src.node),)

    # -- event queue ------------------------------------------------------

    def _push(self, time: float, fn, valid=None):
        # ``valid`` (if given) is consulted when the event is popped; a stale
        # event is dropped without advancing the clock.
        heapq.heappush(self._heap, (time, self._seq, fn, valid))
        self._seq += 1

    def schedule(self, delay: float, fn=None):
        """Run a callback after a virtual delay (``fn`` may be None to just
        hold the clock open)."""
        self._push(self.now + delay, fn or (lambda: None))

    # -- transfers ---------------------------------------------------------

    def submit_transfer(self, src: Loc, dst: Loc, size: int, tag: str,
                        on_complete=None) -> int:
        if size < 0:
            raise SimError("transfer size must be >= 0")
        links = self.route(src, dst)
        tid = self._next_tid
        self._next_tid += 1
        t = Transfer(tid, src, dst, size, tag, links, float(size), on_complete)
        self._flows[tid] = t
        self._push(self.now + self.cluster.per_message_latency,
                   lambda: self._start(tid))
        return tid

    def _start(self, tid: int):
        t = self._flows[tid]
        t.started = True
        if not t.links or t.size == 0:
            self._complete(t)
            return
        self._request_reschedule()

    def _request_reschedule(self):
        # Coalesce: many flows starting or finishing at the same instant need
        # only one fair-share recomputation, run after the same-time events.
        if not self._resched_pending:
            self._resched_pending = True
            self._push(self.now, self._run_reschedule)

    def _run_reschedule(self):
        self._resched_pending = False
        self._reschedule()

    def _advance_progress(self):
        dt = self.now - self._last_progress
        if dt > 0:
            for t in self._flows.values():
                if t.started and not t.done:
                    t.remaining = max(0.0, t.remaining - t.rate * dt)
        self._last_progress = self.now

    def _reschedule(self):
        """Recompute max-min fair rates for all in-flight flows and refresh
        their completion events."""
        self._advance_progress()
        active = [t for t in self._flows.values()
                  if t.started and not t.done and t.links]
        old_rates = {t.tid: t.rate for t in active}
        link_flows: dict[tuple, list[Transfer]] = {}
        for t in active:
            t.rate = 0.0
            for link in t.links:
                link_flows.setdefault(link, []).append(t)
        used = {link: 0.0 for link in link_flows}
        n_open = {link: len(fs) for link, fs in link_flows.items()}
        unfrozen = {t.tid for t in active}
        while unfrozen:
            level, bottleneck = math.inf, None
            for link in sorted(link_flows):
                if n_open[link] > 0:
                    cand = (self._capacity(link) - used[link]) / n_open[link]
                    if cand < level - _EPS:
                        level, bottleneck = cand, link
            if bottleneck is None:
                break
            for t in link_flows[bottleneck]:
                if t.tid in unfrozen:
                    unfrozen.discard(t.tid)
                    t.rate = level
                    for link in t.links:
                        used[link] += level
                        n_open[link] -= 1
        for t in active:
            # A flow whose fair share is unchanged keeps its pending ETA
            # event: the absolute finish time is the same either way.
            if (t.eta_scheduled
                    and abs(t.rate - old_rates[t.tid])
                    <= _EPS * max(t.rate, old_rates[t.tid], 1.0)):
                t.rate = old_rates[t.tid]
                continue
            t.epoch += 1
            t.eta_scheduled = True
            eta = self.now + (t.remaining / t.rate if t.rate > 0 else math.inf)
            epoch = t.epoch
            self._push(eta,
                       lambda tid=t.tid, epoch=epoch: self._on_eta(tid, epoch),
                       valid=lambda tid=t.tid, epoch=epoch: self._eta_valid(tid, epoch))

    def _eta_valid(self, tid: int, epoch: int) -> bool:
        t = self._flows.get(tid)
        return t is not None and not t.done and t.epoch == epoch

    def _on_eta(self, tid: int, epoch: int):
        t = self._flows.get(tid)
        if t is None or t.done or t.epoch != epoch:
            return
        # An up-to-date epoch means no rate change happened since this ETA
        # was computed, so the flow has drained (modulo float error).
        self._advance_progress()
        t.remaining = 0.0
        self._complete(t)

    def _complete(self, t: Transfer):
        t.done = True
        del self._flows[t.tid]
        self.ledger.credit(t.tag, t.size, t.links)
        if t.on_complete is not None:
            t.on_complete()
        if t.links:
            self._request_reschedule()

    # -- memory ------------------------------------------------------------

    def timeline(self, loc: Loc) -> MemoryTimeline:
        tl = self._mem.get(loc)
        if tl is None:
            cap = (self.cluster.host_memory if loc.kind == "host"
                   else self.cluster.device_memory)
            tl = MemoryTimeline(loc, cap)
            self._mem[loc] = tl
        return tl

    def alloc(self, loc: Loc, size: int, tag: str) -> bool:
        """True on success, False on out-of-memory."""
        return self.timeline(loc).alloc(self.now, size, tag)

    def free(self, loc: Loc, tag: str) -> int:
        return self.timeline(loc).free(self.now, tag)

    @property
    def timelines(self) -> dict[Loc, MemoryTimeline]:
        return self._mem

    # -- run ---------------------------------------------------------------

    def run_until_idle(self) -> float:
        while self._heap:
            self._events_processed += 1
            if self._events_processed > self.event_cap:
                raise EventCapExceeded(
                    f"no quiescence after {self.event_cap} events")
            time, _, fn, valid = heapq.heappop(self._heap)
            if valid is not None and not valid():
                continue
            self.now = max(self.now, time)
            fn()
        if self._flows:
            stuck = sorted(self._flows)
            raise SimError(f"transfers never started or finished: {stuck}")
        return self.now


def timeline_csv(sim: Simulation, path: str):
    """Export all memory timelines as CSV rows
    (time_s, device, delta_bytes, tag, occupancy_bytes)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "device", "delta_bytes", "tag", "occupancy_bytes"])
        for loc in sorted(sim.timelines, key=str):
            for time, delta, tag, occ in sim.timelines[loc].events:
                w.writerow([f"{time:.9f}", str(loc), delta, tag, occ])


def summary_json(sim: Simulation) -> dict:
    """Per-device peak/final occupancy plus the per-tag ledger."""
    return {
        "final_time_s": sim.now,
        "ledger": sim.ledger.snapshot(),
        "memory": {
            str(loc): {"peak_bytes": tl.peak, "final_bytes": tl.current}
            for loc, tl in sorted(sim.timelines.items(), key=lambda kv: str(kv[0]))
        },
    }
