"""Discrete-event simulation of distributed RL-training dataflow: sharded
sample-flow warehouses, allgather-swap weight resharding, and the matching
closed-form cost models."""

__version__ = "0.1.0"

from .core import (ClusterSpec, ModelSpec, ParallelLayout, RLConfig,
                   SampleMetadata, SampleRecord, make_sample, record_bytes,
                   validate_layout)

__all__ = [
    "ClusterSpec", "ModelSpec", "ParallelLayout", "RLConfig",
    "SampleMetadata", "SampleRecord", "make_sample", "record_bytes",
    "validate_layout",
]
