"""Shared domain types: cluster topology, parallel layouts, model weight
manifests, RL hyperparameters, sample records and their metadata.

All types are immutable after construction and safe to share across
concurrent simulations.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

MAX_BYTES = 2**63 - 1

# Default worker-state set for a GRPO-shaped workload (C = 5).
DEFAULT_WORKER_STATES = (
    "actor_generation",
    "actor_old_logprob",
    "reference_logprob",
    "reward_score",
    "actor_update",
)

MAX_WORKER_STATES = 16


class ConfigError(ValueError):
    """Raised when a domain type is constructed with invalid parameters."""


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster topology and link speeds (bytes and bytes/second)."""

    num_nodes: int
    devices_per_node: int
    device_memory: int
    host_memory: int
    inter_node_bw: float
    intra_node_bw: float
    h2d_bw: float
    d2h_bw: float
    per_message_latency: float = 0.0

    def __post_init__(self):
        if self.num_nodes < 1 or self.devices_per_node < 1:
            raise ConfigError("node and device counts must be >= 1")
        for name in ("inter_node_bw", "intra_node_bw", "h2d_bw", "d2h_bw"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.device_memory < 0 or self.host_memory < 0:
            raise ConfigError("memory capacities must be >= 0")
        if self.per_message_latency < 0:
            raise ConfigError("latency must be >= 0")

    @property
    def world_size(self) -> int:
        return self.num_nodes * self.devices_per_node


@dataclass(frozen=True)
class ParallelLayout:
    """Parallelism axes of one worker stage."""

    tp: int = 1
    pp: int = 1
    dp: int = 1
    ep: int = 1
    cp: int = 1

    def __post_init__(self):
        for name in ("tp", "pp", "dp", "ep", "cp"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def world_size(self) -> int:
        return self.tp * self.pp * self.dp * self.cp

    def describe(self) -> str:
        return f"TP{self.tp}PP{self.pp}DP{self.dp}EP{self.ep}CP{self.cp}"


def validate_layout(layout: ParallelLayout, world: int) -> list[str]:
    """Check layout invariants for a world size; returns the violated
    constraints by name (empty list means ok)."""
    violations = []
    if layout.world_size != world:
        violations.append(
            f"tp*pp*dp*cp = {layout.world_size} does not equal world size {world}"
        )
    if (layout.dp * layout.tp) % layout.ep != 0:
        violations.append(
            f"ep={layout.ep} does not divide dp*tp={layout.dp * layout.tp}"
        )
    return violations


@dataclass(frozen=True)
class ModelSpec:
    """Byte counts per weight category.

    common_bytes are replicated within a TP group, tp_sharded_bytes is the
    total size of tensor-parallel-partitioned weights, expert_bytes the
    total size of all experts (uniform sizes).
    """

    common_bytes: int = 0
    tp_sharded_bytes: int = 0
    expert_bytes: int = 0
    num_experts: int = 1
    num_layers: int = 1

    def __post_init__(self):
        if min(self.common_bytes, self.tp_sharded_bytes, self.expert_bytes) < 0:
            raise ConfigError("byte counts must be >= 0")
        if self.num_experts < 1 or self.num_layers < 1:
            raise ConfigError("num_experts and num_layers must be >= 1")
        if self.expert_bytes % self.num_experts != 0:
            raise ConfigError("expert_bytes must divide evenly among experts")

    @property
    def bytes_per_expert(self) -> int:
        return self.expert_bytes // self.num_experts


@dataclass(frozen=True)
class RLConfig:
    """Scalar hyperparameters of the sample flow."""

    global_batch: int            # G
    responses_per_prompt: int    # N
    dtype_bytes: int             # B
    prompt_len: int              # PL
    response_len: int            # SL
    response_like_items: int     # n
    scalar_items: int            # M

    def __post_init__(self):
        for name in ("global_batch", "responses_per_prompt", "dtype_bytes",
                     "prompt_len", "response_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.response_like_items < 0 or self.scalar_items < 0:
            raise ConfigError("item counts must be >= 0")

    @property
    def num_records(self) -> int:
        return self.global_batch * self.responses_per_prompt

    # Per-record byte sizes of the individual payload pieces.
    @property
    def prompt_bytes(self) -> int:
        return self.dtype_bytes * self.prompt_len

    @property
    def response_bytes(self) -> int:
        return self.dtype_bytes * self.response_len

    @property
    def items_bytes(self) -> int:
        return self.dtype_bytes * self.response_like_items * self.response_len

    @property
    def scalars_bytes(self) -> int:
        return self.dtype_bytes * self.scalar_items


def record_bytes(cfg: RLConfig) -> int:
    """Byte size of one sample record: B * (PL + (n+1)*SL + M)."""
    total = cfg.dtype_bytes * (
        cfg.prompt_len
        + (cfg.response_like_items + 1) * cfg.response_len
        + cfg.scalar_items
    )
    if total > MAX_BYTES:
        raise OverflowError("record size exceeds 63-bit byte range")
    return total


@dataclass(frozen=True)
class SampleRecord:
    """One prompt/response pair with its response-like items and scalars.

    Blob content is deterministic given (seed, index) so checksums are
    reproducible. A prompt with N responses yields N records each carrying
    its own prompt copy.
    """

    index: int
    prompt_blob: bytes
    response_blob: bytes
    item_blobs: tuple[bytes, ...]
    scalars: tuple[bytes, ...]

    @property
    def total_bytes(self) -> int:
        return (
            len(self.prompt_blob)
            + len(self.response_blob)
            + sum(len(b) for b in self.item_blobs)
            + sum(len(s) for s in self.scalars)
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.prompt_blob)
        h.update(self.response_blob)
        for b in self.item_blobs:
            h.update(b)
        for s in self.scalars:
            h.update(s)
        return h.hexdigest()


def make_sample(seed: int, index: int, cfg: RLConfig) -> SampleRecord:
    """Deterministic synthetic record for the given (seed, index)."""
    if not 0 <= index < cfg.num_records:
        raise IndexError(f"index {index} outside [0, {cfg.num_records})")
    rng = random.Random((seed << 32) ^ index)
    b = cfg.dtype_bytes
    # Records for the same prompt share prompt content.
    prompt_rng = random.Random((seed << 32) ^ (index // cfg.responses_per_prompt) ^ 0x5EED)
    prompt = prompt_rng.randbytes(b * cfg.prompt_len)
    response = rng.randbytes(b * cfg.response_len)
    items = tuple(rng.randbytes(b * cfg.response_len)
                  for _ in range(cfg.response_like_items))
    scalars = tuple(rng.randbytes(b) for _ in range(cfg.scalar_items))
    return SampleRecord(index, prompt, response, items, scalars)


@dataclass
class SampleMetadata:
    """Lightweight descriptor of a record: O(M) scalars, independent of
    payload lengths."""

    index: int
    warehouse_id: int
    status: dict = field(default_factory=dict)  # state name -> Status value


def worker_states(count: int = len(DEFAULT_WORKER_STATES)) -> tuple[str, ...]:
    """The worker-state name set of size ``count`` (the C controllers)."""
    if not 1 <= count <= MAX_WORKER_STATES:
        raise ConfigError(f"worker-state count must be in [1, {MAX_WORKER_STATES}]")
    if count <= len(DEFAULT_WORKER_STATES):
        return DEFAULT_WORKER_STATES[:count]
    extra = tuple(f"aux_state_{i}" for i in range(count - len(DEFAULT_WORKER_STATES)))
    return DEFAULT_WORKER_STATES + extra
