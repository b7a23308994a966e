"""Weight resharding between the update-stage and generation-stage parallel
layouts: shard-map derivation, plan construction, and two executors.

The naive flow materializes the generation-stage tensor-parallel weights as
received copies while the full update-stage buffer stays resident for the
whole generation window (locally present expert buckets are used in place,
so the unneeded experts of a bucket linger as the second redundancy source).
The allgather--swap flow gathers into a temporary buffer, selects exactly
the generation shard, swaps the non-aliased update weights to host memory,
and frees the temporary buffer; a deferred host-to-device restore brings the
update weights back before the next update stage.

Weights are modeled as per-slice blobs: tensor-parallel weights at the
granularity of lcm(update_tp, generation_tp) slices, experts as one blob
each, common weights as one replicated blob. Real byte content (for
checksum verification) is optional; without it the executors move virtual
bytes only.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field

from .core import ClusterSpec, ModelSpec, ParallelLayout, validate_layout
from .simnet import (Loc, OutOfMemoryError, Simulation, global_device_loc,
                     host_loc)

TAG_ALLGATHER = "reshard_allgather"
TAG_D2H = "swap_d2h"
TAG_H2D = "swap_h2d"


class ReshardError(ValueError):
    """Invalid resharding inputs (mismatched worlds, pp/cp changes)."""


# -- shard maps ---------------------------------------------------------------


@dataclass(frozen=True)
class DeviceShard:
    """What one device holds under a layout."""

    rank: int
    tp_rank: int
    pp_stage: int
    dp_rank: int
    cp_rank: int
    ep_rank: int
    experts: tuple[int, ...]
    common_replica: int

    def load_bytes(self, model: ModelSpec, layout: ParallelLayout) -> int:
        return (model.common_bytes
                + model.tp_sharded_bytes // layout.tp
                + model.bytes_per_expert * len(self.experts))


@dataclass(frozen=True)
class ShardMap:
    layout: ParallelLayout
    world: int
    devices: tuple[DeviceShard, ...]

    def device(self, rank: int) -> DeviceShard:
        return self.devices[rank]


def _decompose(rank: int, layout: ParallelLayout):
    """rank -> (tp, dp, cp, pp) with tp fastest-varying."""
    tp_rank = rank % layout.tp
    rest = rank // layout.tp
    dp_rank = rest % layout.dp
    rest //= layout.dp
    cp_rank = rest % layout.cp
    pp_stage = rest // layout.cp
    return tp_rank, dp_rank, cp_rank, pp_stage


def _expert_owner_bucket(expert: int, ep: int, num_experts: int) -> int:
    return expert * ep // num_experts


def _bucket_experts(bucket: int, ep: int, num_experts: int) -> tuple[int, ...]:
    return tuple(e for e in range(num_experts)
                 if _expert_owner_bucket(e, ep, num_experts) == bucket)


def shard_map(model: ModelSpec, layout: ParallelLayout, world: int) -> ShardMap:
    bad = validate_layout(layout, world)
    if bad:
        raise ReshardError(f"invalid layout: {bad}")
    slab = layout.dp * layout.tp  # devices sharing a (pp, cp) partition
    devices = []
    for rank in range(world):
        tp_rank, dp_rank, cp_rank, pp_stage = _decompose(rank, layout)
        slab_local = dp_rank * layout.tp + tp_rank
        ep_rank = slab_local // (slab // layout.ep)
        experts = _bucket_experts(ep_rank, layout.ep, model.num_experts)
        devices.append(DeviceShard(
            rank=rank, tp_rank=tp_rank, pp_stage=pp_stage, dp_rank=dp_rank,
            cp_rank=cp_rank, ep_rank=ep_rank, experts=experts,
            common_replica=dp_rank,
        ))
    return ShardMap(layout, world, tuple(devices))


# -- slice geometry -----------------------------------------------------------


def _slice_offsets(total: int, k: int) -> list[int]:
    # Canonical boundaries: slice i is [total*i//k, total*(i+1)//k). Boundaries
    # coincide across granularities whose slice counts divide each other, so a
    # coarse shard equals the concatenation of its fine slices byte for byte.
    return [total * i // k for i in range(k + 1)]


def _slice_sizes(total: int, k: int) -> list[int]:
    offs = _slice_offsets(total, k)
    return [offs[i + 1] - offs[i] for i in range(k)]


def _tp_slices(tp_rank: int, tp: int, k: int) -> range:
    per = k // tp
    return range(tp_rank * per, (tp_rank + 1) * per)


@dataclass(frozen=True)
class _Geometry:
    """Per-pair slice/expert geometry shared by planner and executors."""

    model: ModelSpec
    update: ParallelLayout
    generation: ParallelLayout
    world: int
    k: int                       # TP slice granularity: lcm of both tp sizes
    slice_sizes: list[int]
    slice_offsets: list[int]
    upd_map: ShardMap
    gen_map: ShardMap


def _geometry(model: ModelSpec, update: ParallelLayout,
              generation: ParallelLayout, world: int) -> _Geometry:
    if update.world_size != generation.world_size or update.world_size != world:
        raise ReshardError("update and generation layouts must share the world size")
    if update.pp != generation.pp or update.cp != generation.cp:
        raise ReshardError("changing pp or cp between stages is unsupported")
    k = math.lcm(update.tp, generation.tp)
    return _Geometry(
        model=model, update=update, generation=generation, world=world,
        k=k, slice_sizes=_slice_sizes(model.tp_sharded_bytes, k),
        slice_offsets=_slice_offsets(model.tp_sharded_bytes, k),
        upd_map=shard_map(model, update, world),
        gen_map=shard_map(model, generation, world),
    )


def _rank_of(layout: ParallelLayout, tp_rank: int, dp_rank: int,
             cp_rank: int, pp_stage: int) -> int:
    return tp_rank + layout.tp * (dp_rank + layout.dp * (cp_rank + layout.cp * pp_stage))


def _slice_owner(geo: _Geometry, rank: int, slice_id: int) -> int:
    """Update-layout device in ``rank``'s update TP group holding a slice."""
    d = geo.upd_map.device(rank)
    owner_tp = slice_id * geo.update.tp // geo.k
    return _rank_of(geo.update, owner_tp, d.dp_rank, d.cp_rank, d.pp_stage)


def _expert_owner(geo: _Geometry, rank: int, expert: int) -> int:
    """Update-layout owner of an expert within ``rank``'s (pp, cp) slab,
    spread across the owning bucket by the requester's offset."""
    d = geo.upd_map.device(rank)
    slab = geo.update.dp * geo.update.tp
    bucket = _expert_owner_bucket(expert, geo.update.ep, geo.model.num_experts)
    bucket_size = slab // geo.update.ep
    slab_local = d.dp_rank * geo.update.tp + d.tp_rank
    owner_local = bucket * bucket_size + slab_local % bucket_size
    owner_tp = owner_local % geo.update.tp
    owner_dp = owner_local // geo.update.tp
    return _rank_of(geo.update, owner_tp, owner_dp, d.cp_rank, d.pp_stage)


@dataclass(frozen=True)
class _DeviceMoves:
    """Everything one device must do to realize its generation shard."""

    rank: int
    upd_slices: tuple[int, ...]
    gen_slices: tuple[int, ...]
    aliased_slices: tuple[int, ...]   # update slices reusable in place
    upd_experts: tuple[int, ...]
    gen_experts: tuple[int, ...]
    aliased_experts: tuple[int, ...]
    temp_bytes: int                    # whole-model temp for the swap flow
    gather_all: tuple[tuple[int, int, int], ...]   # (owner, slice_id, bytes)
    gather_experts_all: tuple[tuple[int, int, int], ...]
    d2h_bytes: int                     # non-aliased update weights


def _moves(geo: _Geometry) -> list[_DeviceMoves]:
    model = geo.model
    tp_differs = geo.update.tp != geo.generation.tp
    ep_differs = geo.update.ep != geo.generation.ep
    out = []
    for rank in range(geo.world):
        ud = geo.upd_map.device(rank)
        gd = geo.gen_map.device(rank)
        upd_slices = tuple(_tp_slices(ud.tp_rank, geo.update.tp, geo.k))
        gen_slices = tuple(_tp_slices(gd.tp_rank, geo.generation.tp, geo.k))
        aliased_slices = tuple(s for s in upd_slices if s in set(gen_slices))
        aliased_experts = tuple(e for e in ud.experts if e in set(gd.experts))
        temp = 0
        gather_all = []
        gather_experts_all = []
        if tp_differs:
            temp += model.tp_sharded_bytes
            local = set(upd_slices)
            gather_all = [( _slice_owner(geo, rank, s), s, geo.slice_sizes[s])
                          for s in range(geo.k) if s not in local]
        if ep_differs:
            temp += model.expert_bytes
            local = set(ud.experts)
            gather_experts_all = [
                (_expert_owner(geo, rank, e), e, model.bytes_per_expert)
                for e in range(model.num_experts) if e not in local]
        d2h = (sum(geo.slice_sizes[s] for s in upd_slices
                   if s not in set(aliased_slices))
               + model.bytes_per_expert * (len(ud.experts) - len(aliased_experts)))
        out.append(_DeviceMoves(
            rank=rank, upd_slices=upd_slices, gen_slices=gen_slices,
            aliased_slices=aliased_slices, upd_experts=ud.experts,
            gen_experts=gd.experts, aliased_experts=aliased_experts,
            temp_bytes=temp, gather_all=tuple(gather_all),
            gather_experts_all=tuple(gather_experts_all), d2h_bytes=d2h))
    return out


# -- plans --------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    step_id: int
    device: int
    op: str           # alloc_temp | allgather | select_copy | swap_d2h | swap_h2d | free
    nbytes: int
    deps: tuple[int, ...] = ()
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"step_id": self.step_id, "device": self.device, "op": self.op,
                "bytes": self.nbytes, "deps": list(self.deps),
                "detail": dict(self.detail)}


@dataclass(frozen=True)
class ReshardPlan:
    update: ParallelLayout
    generation: ParallelLayout
    world: int
    steps: tuple[PlanStep, ...]
    predicted_generation_bytes: dict   # rank -> steady generation occupancy
    predicted_peak_bytes: dict         # rank -> transient peak during reshard

    def device_steps(self, rank: int) -> list[PlanStep]:
        return [s for s in self.steps if s.device == rank]

    def validate(self) -> list[str]:
        """Returns violated plan invariants by name (empty means ok)."""
        problems = []
        by_id = {s.step_id: s for s in self.steps}
        # Acyclicity via Kahn's algorithm.
        indeg = {s.step_id: len(s.deps) for s in self.steps}
        queue = [sid for sid, d in indeg.items() if d == 0]
        seen = 0
        dependents = {}
        for s in self.steps:
            for d in s.deps:
                if d not in by_id:
                    problems.append(f"step {s.step_id} depends on unknown step {d}")
                dependents.setdefault(d, []).append(s.step_id)
        while queue:
            sid = queue.pop()
            seen += 1
            for nxt in dependents.get(sid, []):
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    queue.append(nxt)
        if seen != len(self.steps):
            problems.append("dependency graph has a cycle")
        for rank in range(self.world):
            steps = self.device_steps(rank)
            allocs = [s for s in steps if s.op == "alloc_temp"]
            frees = [s for s in steps if s.op == "free"]
            if len(allocs) != len(frees):
                problems.append(f"device {rank}: alloc_temp/free mismatch")
            gathers = {s.step_id for s in steps if s.op == "allgather"}
            for s in steps:
                if s.op == "select_copy" and gathers and not (set(s.deps) & gathers):
                    problems.append(
                        f"device {rank}: select_copy lacks allgather dependency")
            d2h = [s for s in steps if s.op == "swap_d2h"]
            for s in steps:
                if s.op == "swap_h2d" and d2h and not (set(s.deps) & {x.step_id for x in d2h}):
                    problems.append(
                        f"device {rank}: swap_h2d does not depend on swap_d2h")
        return problems

    def to_dict(self) -> dict:
        return {
            "update": self.update.describe(),
            "generation": self.generation.describe(),
            "world": self.world,
            "steps": [s.to_dict() for s in self.steps],
            "predicted_generation_bytes": {
                str(k): v for k, v in sorted(self.predicted_generation_bytes.items())},
            "predicted_peak_bytes": {
                str(k): v for k, v in sorted(self.predicted_peak_bytes.items())},
        }


def plan_reshard(model: ModelSpec, update: ParallelLayout,
                 generation: ParallelLayout, world: int) -> ReshardPlan:
    geo = _geometry(model, update, generation, world)
    moves = _moves(geo)
    steps: list[PlanStep] = []
    gen_bytes = {}
    peak_bytes = {}
    sid = 0

    def add(device, op, nbytes, deps=(), **detail):
        nonlocal sid
        steps.append(PlanStep(sid, device, op, nbytes, tuple(deps), detail))
        sid += 1
        return sid - 1

    for mv in moves:
        upd_total = geo.upd_map.device(mv.rank).load_bytes(model, update)
        gen_total = geo.gen_map.device(mv.rank).load_bytes(model, generation)
        deps = []
        if mv.temp_bytes:
            a = add(mv.rank, "alloc_temp", mv.temp_bytes)
            if mv.gather_all:
                group = tuple(sorted({mv.rank} | {s for s, _, _ in mv.gather_all}))
                deps.append(add(
                    mv.rank, "allgather", sum(b for _, _, b in mv.gather_all),
                    deps=[a], kind="tp", group=group,
                    slices=[s for _, s, _ in mv.gather_all]))
            if mv.gather_experts_all:
                group = tuple(sorted({mv.rank}
                                     | {s for s, _, _ in mv.gather_experts_all}))
                deps.append(add(
                    mv.rank, "allgather",
                    sum(b for _, _, b in mv.gather_experts_all),
                    deps=[a], kind="expert", group=group,
                    experts=[e for _, e, _ in mv.gather_experts_all]))
        select_bytes = (sum(geo.slice_sizes[s] for s in mv.gen_slices
                            if s not in set(mv.aliased_slices))
                        + model.bytes_per_expert
                        * (len(mv.gen_experts) - len(mv.aliased_experts)))
        sel = add(mv.rank, "select_copy", select_bytes, deps=deps,
                  aliased_slices=list(mv.aliased_slices),
                  aliased_experts=list(mv.aliased_experts))
        d2h = add(mv.rank, "swap_d2h", mv.d2h_bytes, deps=[sel])
        if mv.temp_bytes:
            add(mv.rank, "free", mv.temp_bytes, deps=[sel, d2h], tag="temp")
        add(mv.rank, "swap_h2d", mv.d2h_bytes, deps=[d2h])
        gen_bytes[mv.rank] = gen_total
        peak_bytes[mv.rank] = upd_total + mv.temp_bytes + gen_total
    return ReshardPlan(update, generation, world, tuple(steps), gen_bytes, peak_bytes)


# -- weights with real content ------------------------------------------------


@dataclass(frozen=True)
class WeightSet:
    """Deterministic byte content for every weight blob; the canonical full
    tensor-parallel weight is ``tp_full`` itself."""

    common: bytes
    tp_full: bytes
    experts: tuple[bytes, ...]


def make_weights(model: ModelSpec, seed: int = 0) -> WeightSet:
    rng = random.Random((seed << 16) ^ 0xA119A7)
    return WeightSet(
        common=rng.randbytes(model.common_bytes),
        tp_full=rng.randbytes(model.tp_sharded_bytes),
        experts=tuple(rng.randbytes(model.bytes_per_expert)
                      for _ in range(model.num_experts)),
    )


def _gen_tp_content(geo: _Geometry, weights: WeightSet, gen_slices) -> bytes:
    if not gen_slices:
        return b""
    start = geo.slice_offsets[gen_slices[0]]
    end = geo.slice_offsets[gen_slices[-1] + 1]
    return weights.tp_full[start:end]


def verify_reconstruction(model: ModelSpec, generation: ParallelLayout,
                          world: int, gen_buffers: dict,
                          weights: WeightSet) -> str:
    """'pass', or a mismatch description naming the first differing offset."""
    gmap = shard_map(model, generation, world)
    offs = _slice_offsets(model.tp_sharded_bytes, generation.tp)
    for rank in range(world):
        bufs = gen_buffers.get(rank)
        if bufs is None:
            return f"mismatch: device {rank} has no generation buffers"
        gd = gmap.device(rank)
        want_tp = weights.tp_full[offs[gd.tp_rank]:offs[gd.tp_rank + 1]]
        checks = [("tp", bufs.get("tp", b""), want_tp),
                  ("common", bufs.get("common", b""), weights.common)]
        for e in gd.experts:
            checks.append((f"expert{e}", bufs.get("experts", {}).get(e, b""),
                           weights.experts[e]))
        for name, got, want in checks:
            if got != want:
                off = next((i for i, (a, b) in enumerate(zip(got, want))
                            if a != b), min(len(got), len(want)))
                return f"mismatch: device {rank} buffer {name} offset {off}"
    return "pass"


# -- executors ----------------------------------------------------------------


@dataclass
class ReshardReport:
    executor: str
    per_device_peak: dict              # rank -> peak bytes over the whole run
    per_device_generation_bytes: dict  # rank -> steady generation-window bytes
    reshard_time_s: float
    h2d_restore_time_s: float
    restore_bytes: dict                # rank -> bytes awaiting H2D restore
    checksum_verdict: str
    gen_buffers: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "executor": self.executor,
            "per_device_peak": {str(k): v for k, v in
                                sorted(self.per_device_peak.items())},
            "per_device_generation_bytes": {
                str(k): v for k, v in
                sorted(self.per_device_generation_bytes.items())},
            "reshard_time_s": self.reshard_time_s,
            "h2d_restore_time_s": self.h2d_restore_time_s,
            "restore_bytes": {str(k): v for k, v in
                              sorted(self.restore_bytes.items())},
            "checksum_verdict": self.checksum_verdict,
        }


def _loc(cluster: ClusterSpec, rank: int) -> Loc:
    return global_device_loc(cluster, rank)


def _alloc_or_oom(sim: Simulation, loc: Loc, size: int, tag: str):
    if not sim.alloc(loc, size, tag):
        raise OutOfMemoryError(
            f"{tag} ({size} bytes) does not fit at {loc}: scenario infeasible")


def _alloc_update_weights(sim, cluster, geo, moves):
    for mv in moves:
        loc = _loc(cluster, mv.rank)
        ud = geo.upd_map.device(mv.rank)
        _alloc_or_oom(sim, loc, geo.model.common_bytes, "upd_common")
        _alloc_or_oom(sim, loc, sum(geo.slice_sizes[s] for s in mv.upd_slices),
                      "upd_tp")
        _alloc_or_oom(sim, loc, geo.model.bytes_per_expert * len(ud.experts),
                      "upd_exp")


def _assemble_gen_buffers(geo, moves, weights, corrupt_select=None) -> dict:
    bufs = {}
    for mv in moves:
        tp = _gen_tp_content(geo, weights, mv.gen_slices)
        if corrupt_select is not None and corrupt_select[0] == mv.rank and tp:
            off = corrupt_select[1] % len(tp)
            tp = tp[:off] + bytes([tp[off] ^ 0xFF]) + tp[off + 1:]
        bufs[mv.rank] = {
            "tp": tp,
            "common": weights.common,
            "experts": {e: weights.experts[e] for e in mv.gen_experts},
        }
    return bufs


def execute_naive(model: ModelSpec, update: ParallelLayout,
                  generation: ParallelLayout, cluster: ClusterSpec,
                  sim: Simulation, weights: WeightSet | None = None) -> ReshardReport:
    """Naive flow: the generation weights are materialized as received
    copies (tensor-parallel part in full, experts only where not already
    local) while the whole update buffer stays resident through generation."""
    geo = _geometry(model, update, generation, cluster.world_size)
    moves = _moves(geo)
    start = sim.now
    _alloc_update_weights(sim, cluster, geo, moves)
    for mv in moves:
        loc = _loc(cluster, mv.rank)
        upd_local = set(mv.upd_slices)
        for s in mv.gen_slices:
            owner = _slice_owner(geo, mv.rank, s)
            if owner != mv.rank:
                sim.submit_transfer(_loc(cluster, owner), loc,
                                    geo.slice_sizes[s], TAG_ALLGATHER)
        _alloc_or_oom(sim, loc,
                      sum(geo.slice_sizes[s] for s in mv.gen_slices), "gen_tp")
        missing = [e for e in mv.gen_experts if e not in set(mv.upd_experts)]
        for e in missing:
            owner = _expert_owner(geo, mv.rank, e)
            if owner != mv.rank:
                sim.submit_transfer(_loc(cluster, owner), loc,
                                    model.bytes_per_expert, TAG_ALLGATHER)
        _alloc_or_oom(sim, loc, model.bytes_per_expert * len(missing),
                      "gen_exp_fresh")
    sim.run_until_idle()
    reshard_time = sim.now - start
    gen_bytes = {mv.rank: sim.timeline(_loc(cluster, mv.rank)).current
                 for mv in moves}
    peaks = {mv.rank: sim.timeline(_loc(cluster, mv.rank)).peak for mv in moves}
    verdict = "pass"
    gen_buffers = {}
    if weights is not None:
        gen_buffers = _assemble_gen_buffers(geo, moves, weights)
        verdict = verify_reconstruction(model, generation, geo.world,
                                        gen_buffers, weights)
    return ReshardReport(
        executor="naive", per_device_peak=peaks,
        per_device_generation_bytes=gen_bytes, reshard_time_s=reshard_time,
        h2d_restore_time_s=0.0, restore_bytes={mv.rank: 0 for mv in moves},
        checksum_verdict=verdict, gen_buffers=gen_buffers)


def execute_allgather_swap(model: ModelSpec, update: ParallelLayout,
                           generation: ParallelLayout, cluster: ClusterSpec,
                           sim: Simulation, weights: WeightSet | None = None,
                           restore: bool = True,
                           corrupt_select: tuple | None = None) -> ReshardReport:
    """Allgather--swap flow: temp-buffer allgather, slice selection, D2H swap
    of non-aliased update weights, temp free, and (optionally deferred)
    H2D restore. With ``restore=False`` the report carries restore_bytes so a
    caller can overlap the restore with another stage."""
    geo = _geometry(model, update, generation, cluster.world_size)
    moves = _moves(geo)
    start = sim.now
    _alloc_update_weights(sim, cluster, geo, moves)

    # Step 1: temp alloc + allgather of the full missing slice/expert sets.
    for mv in moves:
        loc = _loc(cluster, mv.rank)
        if mv.temp_bytes:
            _alloc_or_oom(sim, loc, mv.temp_bytes, "temp")
            for owner, _, nbytes in mv.gather_all + mv.gather_experts_all:
                if owner != mv.rank:
                    sim.submit_transfer(_loc(cluster, owner), loc, nbytes,
                                        TAG_ALLGATHER)
    sim.run_until_idle()

    # Step 2: select_copy -- fresh buffers for non-aliased generation shards.
    host_content: dict[int, bytes] = {}
    pre_d2h_checksums: dict[int, str] = {}
    for mv in moves:
        loc = _loc(cluster, mv.rank)
        fresh_tp = sum(geo.slice_sizes[s] for s in mv.gen_slices
                       if s not in set(mv.aliased_slices))
        fresh_exp = model.bytes_per_expert * (
            len(mv.gen_experts) - len(mv.aliased_experts))
        _alloc_or_oom(sim, loc, fresh_tp, "gen_tp_fresh")
        _alloc_or_oom(sim, loc, fresh_exp, "gen_exp_fresh")

    # Step 3: D2H swap of the non-aliased update weights.
    restore_bytes = {}
    for mv in moves:
        loc = _loc(cluster, mv.rank)
        restore_bytes[mv.rank] = mv.d2h_bytes
        _alloc_or_oom(sim, host_loc(loc.node), mv.d2h_bytes,
                      f"swap_rank{mv.rank}")
        sim.submit_transfer(loc, host_loc(loc.node), mv.d2h_bytes, TAG_D2H)
        if weights is not None:
            parts = [weights.tp_full[geo.slice_offsets[s]:geo.slice_offsets[s + 1]]
                     for s in mv.upd_slices if s not in set(mv.aliased_slices)]
            parts += [weights.experts[e] for e in mv.upd_experts
                      if e not in set(mv.aliased_experts)]
            blob = b"".join(parts)
            host_content[mv.rank] = blob
            pre_d2h_checksums[mv.rank] = hashlib.sha256(blob).hexdigest()
    sim.run_until_idle()

    # Step 4: free temp; retag surviving update bytes as generation holdings.
    for mv in moves:
        loc = _loc(cluster, mv.rank)
        if mv.temp_bytes:
            sim.free(loc, "temp")
        sim.free(loc, "upd_tp")
        sim.free(loc, "upd_exp")
        sim.free(loc, "upd_common")
        _alloc_or_oom(sim, loc, model.common_bytes, "gen_common")
        _alloc_or_oom(sim, loc,
                      sum(geo.slice_sizes[s] for s in mv.aliased_slices),
                      "gen_tp_alias")
        _alloc_or_oom(sim, loc,
                      model.bytes_per_expert * len(mv.aliased_experts),
                      "gen_exp_alias")
    reshard_time = sim.now - start
    gen_bytes = {mv.rank: sim.timeline(_loc(cluster, mv.rank)).current
                 for mv in moves}

    verdict = "pass"
    gen_buffers = {}
    if weights is not None:
        gen_buffers = _assemble_gen_buffers(geo, moves, weights, corrupt_select)
        verdict = verify_reconstruction(model, generation, geo.world,
                                        gen_buffers, weights)

    restore_time = 0.0
    if restore:
        restore_start = sim.now
        for mv in moves:
            loc = _loc(cluster, mv.rank)
            sim.submit_transfer(host_loc(loc.node), loc, mv.d2h_bytes, TAG_H2D)
        sim.run_until_idle()
        for mv in moves:
            sim.free(host_loc(_loc(cluster, mv.rank).node),
                     f"swap_rank{mv.rank}")
        restore_time = sim.now - restore_start
        if weights is not None and verdict == "pass":
            for mv in moves:
                blob = host_content.get(mv.rank, b"")
                after = hashlib.sha256(blob).hexdigest()
                if after != pre_d2h_checksums.get(mv.rank):
                    verdict = f"mismatch: device {mv.rank} restore checksum"
                    break

    peaks = {mv.rank: sim.timeline(_loc(cluster, mv.rank)).peak for mv in moves}
    return ReshardReport(
        executor="allgather_swap", per_device_peak=peaks,
        per_device_generation_bytes=gen_bytes, reshard_time_s=reshard_time,
        h2d_restore_time_s=restore_time, restore_bytes=restore_bytes,
        checksum_verdict=verdict, gen_buffers=gen_buffers)


def measure_redundancy(model: ModelSpec, update: ParallelLayout,
                       generation: ParallelLayout, cluster: ClusterSpec,
                       weights: WeightSet | None = None):
    """Run both executors on fresh simulations and compare their steady
    generation-window occupancy. Returns (per-device delta, cluster total,
    naive report, swap report)."""
    naive = execute_naive(model, update, generation, cluster,
                          Simulation(cluster), weights)
    swap = execute_allgather_swap(model, update, generation, cluster,
                                  Simulation(cluster), weights)
    per_device = {
        rank: naive.per_device_generation_bytes[rank]
        - swap.per_device_generation_bytes[rank]
        for rank in naive.per_device_generation_bytes}
    return per_device, sum(per_device.values()), naive, swap
