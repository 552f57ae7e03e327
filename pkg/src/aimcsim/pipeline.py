"""Closed-form latency/throughput of pipelined multi-slice inference.

One pipeline stage per weighted layer. Tiles of a layer work in parallel on
the broadcast input, so a stage costs ``reuse * t_mvm`` plus a fixed digital
periphery overhead. The pipeline is synchronous: every stage advances on a
clock equal to the slowest stage. Skip connections are buffered at no cost
and add no stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class TimingModel:
    t_mvm: float = 100e-9
    t_overhead_layer: float = 1e-6

    def __post_init__(self):
        if not (self.t_mvm > 0 and self.t_overhead_layer > 0):
            raise ConfigError("timing constants must be > 0")


@dataclass(frozen=True)
class PipelineReport:
    stage_times: tuple[float, ...]
    K: int
    latency_pipelined: float
    latency_sequential: float

    @property
    def throughput_pipelined(self) -> float:
        return self.K / self.latency_pipelined

    @property
    def throughput_sequential(self) -> float:
        return self.K / self.latency_sequential

    @property
    def speedup(self) -> float:
        return self.latency_sequential / self.latency_pipelined

    def to_dict(self) -> dict:
        return {
            "stage_times": list(self.stage_times), "K": self.K,
            "latency_pipelined": self.latency_pipelined,
            "latency_sequential": self.latency_sequential,
            "throughput_pipelined": self.throughput_pipelined,
            "throughput_sequential": self.throughput_sequential,
            "speedup": self.speedup,
        }


def stage_times(report, tm: TimingModel) -> list[float]:
    """Per-layer stage time from a :class:`~aimcsim.mapping.NetworkReport`."""
    return [m.reuse * tm.t_mvm + tm.t_overhead_layer for m in report.layers]


def _check(stages, K):
    if K < 1:
        raise ConfigError("K must be >= 1")
    if not stages:
        raise ConfigError("empty stage list")


def pipelined_latency(stages, K: int) -> float:
    """``(L + K - 1) * max(stages)``."""
    _check(stages, K)
    return (len(stages) + K - 1) * max(stages)


def sequential_latency(stages, K: int) -> float:
    """``K * sum(stages)``."""
    _check(stages, K)
    return K * math.fsum(stages)


def pipeline_report(stages, K: int) -> PipelineReport:
    return PipelineReport(tuple(stages), int(K), pipelined_latency(stages, K),
                          sequential_latency(stages, K))


def breakeven_slices(stages) -> float:
    """Smallest real ``K`` with pipelined <= sequential latency.

    Solves ``K * sum >= (L + K - 1) * t_max``; infinite when every stage but
    one is free (no overlap to exploit) and ``L > 1``.
    """
    _check(stages, 1)
    total, tmax, n = math.fsum(stages), max(stages), len(stages)
    if n == 1:
        return 1.0
    if total <= tmax:
        return math.inf
    return max(1.0, (n - 1) * tmax / (total - tmax))
