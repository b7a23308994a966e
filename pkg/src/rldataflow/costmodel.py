"""Closed-form communication/memory/throughput calculators.

These are the analytic counterparts of the simulated sample flow and
resharding flow; the simulator's ledgers are checked against them.
All "GB" outputs are GiB (1024^3 bytes), which is the unit that makes the
published dispatch-time table self-consistent (T100 = TCV*1024/100 with a
100 MiB/s profile).
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import MAX_BYTES, ModelSpec, ParallelLayout, RLConfig, validate_layout

GIB = 1024**3
MIB = 1024**2

# Link profiles used by the published dispatch-time columns.
BW_100_MIB = 100 * MIB
BW_1024_MIB = 1024 * MIB


@dataclass(frozen=True)
class CostReport:
    cv_gb: float
    tcv_gb: float
    tcv_per_warehouse_gb: float
    t100_s: float
    t1k_s: float
    redundant_gb: float
    throughput_tps: float


@dataclass(frozen=True)
class Table1Row:
    global_batch: int
    responses_per_prompt: int
    prompt_len: int
    response_like_items: int
    response_len: int
    scalar_items: int
    tcv_gb: float
    t100_s: float
    t1k_s: float


def _checked(total: int) -> int:
    if total > MAX_BYTES:
        raise OverflowError("communication volume exceeds 63-bit byte range")
    return total


def cv_dispatch_bytes(cfg: RLConfig) -> int:
    """Bytes of the update-stage batch fetch: G*N*B*(PL + n*SL + M)."""
    return _checked(
        cfg.num_records
        * cfg.dtype_bytes
        * (cfg.prompt_len + cfg.response_like_items * cfg.response_len + cfg.scalar_items)
    )


def cv_dispatch(cfg: RLConfig) -> float:
    return cv_dispatch_bytes(cfg) / GIB


def tcv_centralized_bytes(cfg: RLConfig) -> int:
    """Total sample-flow bytes of one iteration through a centralized
    replay buffer: G*N*B*(2PL + 3n*SL + 8M)."""
    return _checked(
        cfg.num_records
        * cfg.dtype_bytes
        * (2 * cfg.prompt_len
           + 3 * cfg.response_like_items * cfg.response_len
           + 8 * cfg.scalar_items)
    )


def tcv_centralized(cfg: RLConfig) -> float:
    return tcv_centralized_bytes(cfg) / GIB


def centralized_metadata_bytes(cfg: RLConfig) -> int:
    """The 8M-scalar metadata share of the centralized total."""
    return cfg.num_records * cfg.dtype_bytes * 8 * cfg.scalar_items


def td_metadata_bytes(cfg: RLConfig, controllers: int) -> int:
    """Transfer-dock metadata: one warehouse-side descriptor copy plus a
    broadcast copy per controller, 8(C+1)M scalars per record."""
    return cfg.num_records * cfg.dtype_bytes * 8 * (controllers + 1) * cfg.scalar_items


def tcv_per_warehouse_bytes(cfg: RLConfig, controllers: int, warehouses: int) -> float:
    if controllers < 1:
        raise ValueError("controllers must be >= 1")
    if warehouses < 1:
        raise ValueError("warehouses must be >= 1")
    total = _checked(
        cfg.num_records
        * cfg.dtype_bytes
        * (2 * cfg.prompt_len
           + 3 * cfg.response_like_items * cfg.response_len
           + 8 * (controllers + 1) * cfg.scalar_items)
    )
    return total / warehouses


def tcv_per_warehouse(cfg: RLConfig, controllers: int, warehouses: int) -> float:
    """Per-warehouse volume: G*N*B*(2PL + 3n*SL + 8(C+1)M)/S in GiB."""
    return tcv_per_warehouse_bytes(cfg, controllers, warehouses) / GIB


def dispatch_time(volume_gib: float, bw: float) -> float:
    """Seconds to move a volume over a link: volume*1024^3 / bw."""
    if bw <= 0:
        raise ValueError("bandwidth must be > 0")
    return volume_gib * GIB / bw


def redundant_memory_bytes(model: ModelSpec, update: ParallelLayout,
                           generation: ParallelLayout) -> float:
    """Redundant bytes of the naive resharding flow:
    GDP * (TW/UTP + EW/GEP)."""
    if update.world_size != generation.world_size:
        raise ValueError("update and generation layouts must share a world size")
    world = update.world_size
    for layout, name in ((update, "update"), (generation, "generation")):
        bad = validate_layout(layout, world)
        if bad:
            raise ValueError(f"invalid {name} layout: {bad}")
    return generation.dp * (
        model.tp_sharded_bytes / update.tp + model.expert_bytes / generation.ep
    )


def redundant_memory(model: ModelSpec, update: ParallelLayout,
                     generation: ParallelLayout) -> float:
    """Naive-flow redundancy in GiB, cluster view (GDP prefactor).

    The per-device figure reported by memory profiles is this divided by
    the generation-stage DP size.
    """
    return redundant_memory_bytes(model, update, generation) / GIB


def redundant_memory_per_device(model: ModelSpec, update: ParallelLayout,
                                generation: ParallelLayout) -> float:
    return redundant_memory_bytes(model, update, generation) / generation.dp / GIB


def throughput(cfg: RLConfig, num_devices: int, ete: float) -> float:
    """Tokens per second per device: G*N*(PL+SL)/ND/ETE."""
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    if ete <= 0:
        raise ValueError("end-to-end time must be > 0")
    return cfg.num_records * (cfg.prompt_len + cfg.response_len) / num_devices / ete


TABLE1_CONFIGS = (
    (256, 8, 2048, 5, 8192, 3),
    (256, 16, 2048, 5, 16384, 3),
    (1024, 16, 2048, 5, 16384, 3),
    (1024, 32, 4096, 8, 32768, 5),
    (4096, 32, 4096, 8, 32768, 5),
    (8192, 64, 4096, 8, 65536, 5),
)


def table1(dtype_bytes: int = 4) -> list[Table1Row]:
    """The six published (G, N, PL, n, SL, M) rows with their total volume
    and dispatch times over the 100 MiB/s and 1024 MiB/s profiles."""
    rows = []
    for g, n_resp, pl, n_items, sl, m in TABLE1_CONFIGS:
        cfg = RLConfig(
            global_batch=g,
            responses_per_prompt=n_resp,
            dtype_bytes=dtype_bytes,
            prompt_len=pl,
            response_len=sl,
            response_like_items=n_items,
            scalar_items=m,
        )
        tcv = tcv_centralized(cfg)
        rows.append(Table1Row(
            global_batch=g,
            responses_per_prompt=n_resp,
            prompt_len=pl,
            response_like_items=n_items,
            response_len=sl,
            scalar_items=m,
            tcv_gb=tcv,
            t100_s=dispatch_time(tcv, BW_100_MIB),
            t1k_s=dispatch_time(tcv, BW_1024_MIB),
        ))
    return rows
