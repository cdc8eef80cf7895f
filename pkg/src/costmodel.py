"""
Training FLOPs, per-token inference FLOPs, KV-cache footprint and a roofline
throughput estimate for a transformer shape on a hardware profile.

Only non-embedding work is counted. Attention-score FLOPs count q.K^T alone
(2*T*d_q per layer); softmax and the value product are left out.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, List, Sequence

import numpy as np

from archmodel import ArchitectureConfig, count_params

logger = logging.getLogger(__name__)

HARDWARE_KEYS = ("name", "peak_flops", "mem_bandwidth", "mem_capacity", "bytes_per_weight", "bytes_per_kv")
REQUIRED_HARDWARE_KEYS = HARDWARE_KEYS[:4]


class InvalidHardwareException(ValueError):
    pass


class MemoryCapacityException(ValueError):
    def __init__(self, message: str, max_batch: int):
        super().__init__(message)
        self.max_batch = max_batch


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    peak_flops: float
    mem_bandwidth: float
    mem_capacity: float
    bytes_per_weight: float = 2
    bytes_per_kv: float = 2

    def check(self) -> None:
        for key in HARDWARE_KEYS[1:]:
            if not getattr(self, key) > 0:
                raise InvalidHardwareException(f"{key} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HardwareProfile":
        if not isinstance(data, dict):
            raise InvalidHardwareException("hardware profile must be a JSON object")
        unknown = sorted(set(data) - set(HARDWARE_KEYS))
        if unknown:
            raise InvalidHardwareException(f"unknown hardware keys: {unknown}")
        missing = [k for k in REQUIRED_HARDWARE_KEYS if k not in data]
        if missing:
            raise InvalidHardwareException(f"hardware profile is missing {missing}")
        try:
            values = {k: float(data[k]) for k in HARDWARE_KEYS[1:] if k in data}
        except (TypeError, ValueError) as exc:
            raise InvalidHardwareException(f"hardware values must be numbers: {exc}")
        profile = cls(name=str(data["name"]), **values)
        profile.check()
        return profile


BUILTIN_HARDWARE: Dict[str, HardwareProfile] = {
    "a100-40g": HardwareProfile(
        name="a100-40g", peak_flops=312e12, mem_bandwidth=1.555e12, mem_capacity=40e9,
    ),
}


def builtin_hardware(name: str) -> HardwareProfile:
    try:
        return BUILTIN_HARDWARE[name]
    except KeyError:
        raise InvalidHardwareException(
            f"unknown hardware profile {name!r}; built-in: {sorted(BUILTIN_HARDWARE)}"
        )


@dataclass(frozen=True)
class Workload:
    batch: int
    t_in: int
    t_out: int

    def check(self) -> None:
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.t_in < 0:
            raise ValueError("input tokens must be non-negative")
        if self.t_out < 1:
            raise ValueError("output tokens must be at least 1")


@dataclass(frozen=True)
class CostReport:
    prefill_seconds: float
    decode_seconds: float
    tokens_per_second: float
    # both measured at the full context t_in + t_out
    flops_per_decode_token: float
    kv_bytes_per_sequence: float
    compute_bound_fraction: float
    context_tokens: int


def training_flops(n_nonembed: float, d_tokens: float) -> float:
    """
    :return: 6 * N * D
    """
    if n_nonembed <= 0 or d_tokens <= 0:
        raise ValueError("N and D must be positive")
    return 6 * n_nonembed * d_tokens


def decode_flops_breakdown(config: ArchitectureConfig, t_context: int) -> Dict[str, int]:
    """
    FLOPs of one generated token split by projection.
    :param t_context: KV length before the token is generated
    """
    if t_context < 0:
        raise ValueError("t_context must be non-negative")
    count_params(config)
    layers, d = config.n_layers, config.d_model
    return {
        "q": layers * 2 * d * config.d_q,
        "k": layers * 2 * d * config.d_kv,
        "v": layers * 2 * d * config.d_kv,
        "o": layers * 2 * d * config.d_q,
        "mask": layers * 2 * t_context * config.d_q,
        "mlp": layers * 3 * 2 * d * config.f_size,
    }


def decode_flops_per_token(config: ArchitectureConfig, t_context: int) -> int:
    """
    :return: 2 * N + 2 * n_layers * T * d_q
    """
    if t_context < 0:
        raise ValueError("t_context must be non-negative")
    n = count_params(config).n_nonembed
    return 2 * n + 2 * config.n_layers * t_context * config.d_q


def kv_cache_bytes(config: ArchitectureConfig, t_context: int, batch: int = 1, bytes_per_kv: float = 2) -> float:
    """
    Keys and values of every layer for batch sequences of t_context tokens.
    """
    if t_context < 0 or batch < 0 or bytes_per_kv <= 0:
        raise ValueError("t_context and batch must be non-negative, bytes_per_kv positive")
    count_params(config)
    return batch * 2 * config.n_layers * t_context * config.d_kv * bytes_per_kv


def weight_bytes(config: ArchitectureConfig, hardware: HardwareProfile) -> float:
    return count_params(config).n_nonembed * hardware.bytes_per_weight


def max_feasible_batch(config: ArchitectureConfig, hardware: HardwareProfile, t_max: int) -> int:
    """
    Largest batch whose weights plus KV cache at t_max tokens fit in memory.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    free = hardware.mem_capacity - weight_bytes(config, hardware)
    if free < 0:
        raise MemoryCapacityException(
            f"{config.name}: weights alone exceed memory capacity of {hardware.name}", max_batch=0
        )
    per_sequence = kv_cache_bytes(config, t_max, 1, hardware.bytes_per_kv)
    return int(free // per_sequence)


def estimate_throughput(config: ArchitectureConfig, hardware: HardwareProfile, workload: Workload) -> CostReport:
    """
    Roofline estimate. Prefill is compute-bound; every decode step costs the
    larger of its FLOP time and the time to stream weights plus KV cache.
    :return: the CostReport of one batch generating t_out tokens each
    """
    hardware.check()
    workload.check()
    params = count_params(config)
    n = params.n_nonembed
    t_max = workload.t_in + workload.t_out
    max_batch = max_feasible_batch(config, hardware, t_max)
    if workload.batch > max_batch:
        raise MemoryCapacityException(
            f"{config.name}: batch {workload.batch} at {t_max} tokens exceeds memory capacity "
            f"of {hardware.name}; maximal feasible batch is {max_batch}",
            max_batch=max_batch,
        )

    batch = workload.batch
    prefill_flops = batch * (2 * n * workload.t_in + config.n_layers * workload.t_in ** 2 * config.d_q)
    prefill_seconds = prefill_flops / hardware.peak_flops

    contexts = workload.t_in + np.arange(workload.t_out, dtype=np.float64)
    step_flops = batch * (2.0 * n + 2.0 * config.n_layers * contexts * config.d_q)
    step_bytes = n * hardware.bytes_per_weight + batch * 2.0 * config.n_layers * contexts * config.d_kv * hardware.bytes_per_kv
    flop_time = step_flops / hardware.peak_flops
    byte_time = step_bytes / hardware.mem_bandwidth
    decode_seconds = float(np.sum(np.maximum(flop_time, byte_time)))

    total = prefill_seconds + decode_seconds
    return CostReport(
        prefill_seconds=prefill_seconds,
        decode_seconds=decode_seconds,
        tokens_per_second=batch * workload.t_out / total,
        flops_per_decode_token=float(decode_flops_per_token(config, t_max)),
        kv_bytes_per_sequence=float(kv_cache_bytes(config, t_max, 1, hardware.bytes_per_kv)),
        compute_bound_fraction=float(np.mean(flop_time >= byte_time)),
        context_tokens=t_max,
    )


def throughput_sweep(
    config: ArchitectureConfig, hardware: HardwareProfile, batches: Sequence[int], t_in: int, t_out: int
) -> List[tuple]:
    """
    Throughput across batch sizes, skipping batches that do not fit.
    :return: (batch, CostReport) pairs in the given order
    """
    reports = []
    for batch in batches:
        try:
            reports.append((batch, estimate_throughput(config, hardware, Workload(batch, t_in, t_out))))
        except MemoryCapacityException as exc:
            logger.warning("%s", exc)
    return reports
