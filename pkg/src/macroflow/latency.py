"""Flow-to-travel-time models: the BPR curve and materialized lookup tables.

All travel times are integer milliseconds. Curves are evaluated in floating
point and rounded half-up once, so the full and incremental simulators see
bit-identical values. Zero flow always yields the free-flow time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .network import EdgeAttributes, round_half_up_ms

MATERIALIZE_CAP = 1_000_000


class LatencyModel(Protocol):
    """Maps (edge attributes, flow, entry time) to a travel time in ms.

    Implementations must be non-decreasing in flow and never return less
    than the edge's free-flow time. entry_ms exists so time-of-day-varying
    models can plug in; the built-in models ignore it.
    """

    def travel_time_ms(self, attrs: EdgeAttributes, flow: int, entry_ms: int) -> int: ...


def bpr_travel_time(attrs: EdgeAttributes, flow: int) -> int:
    """Travel time under the BPR volume-delay curve.

    free_flow * (1 + sigma * (flow/capacity)^beta), rounded half-up to ms,
    never below 1 ms. Zero flow is short-circuited to the free-flow time so
    the identity holds even for beta == 0.
    """
    if flow <= 0:
        return attrs.free_flow_ms
    ratio = flow / attrs.capacity_phi
    value = attrs.free_flow_ms * (1.0 + attrs.sigma * ratio**attrs.beta)
    return max(1, round_half_up_ms(value))


class BprLatency:
    """Direct BPR evaluation; stateless and concurrency-safe."""

    def travel_time_ms(self, attrs: EdgeAttributes, flow: int, entry_ms: int) -> int:
        return bpr_travel_time(attrs, flow)


@dataclass(frozen=True, slots=True)
class LatencyTable:
    """Materialized flow -> travel-time mapping for one attribute set."""

    attrs: EdgeAttributes
    values: tuple[int, ...]

    @property
    def max_flow(self) -> int:
        return len(self.values) - 1


def materialize(attrs: EdgeAttributes, max_flow: int, cap: int = MATERIALIZE_CAP) -> LatencyTable:
    """Tabulate bpr_travel_time for flows 0..max_flow.

    Raises ValueError beyond `cap` as a resource guard.
    """
    if max_flow < 0:
        raise ValueError(f"max_flow must be >= 0, got {max_flow}")
    if max_flow > cap:
        raise ValueError(f"max_flow {max_flow} exceeds materialization cap {cap}")
    return LatencyTable(attrs, tuple(bpr_travel_time(attrs, f) for f in range(max_flow + 1)))


def table_lookup(table: LatencyTable, flow: int, mode: str = "clamp") -> int:
    """Look up a flow in a materialized table.

    Flows beyond the table clamp to the last entry ("clamp", default) or
    fall back to direct evaluation ("fallback").
    """
    if flow <= table.max_flow:
        return table.values[max(0, flow)]
    if mode == "clamp":
        return table.values[-1]
    if mode == "fallback":
        return bpr_travel_time(table.attrs, flow)
    raise ValueError(f"unknown lookup mode {mode!r}")


class TabulatedLatency:
    """BPR model backed by per-attribute-set materialized tables.

    Tables are built lazily and shared between edges with identical
    parameters. Flows beyond max_flow fall back to direct evaluation, so
    results are exactly bpr_travel_time at every flow.
    """

    def __init__(self, max_flow: int = 1024):
        if max_flow < 0:
            raise ValueError(f"max_flow must be >= 0, got {max_flow}")
        self.max_flow = max_flow
        self._tables: dict[tuple[float, float, float, int], tuple[int, ...]] = {}

    def travel_time_ms(self, attrs: EdgeAttributes, flow: int, entry_ms: int) -> int:
        if flow <= 0:
            return attrs.free_flow_ms
        key = (attrs.capacity_phi, attrs.sigma, attrs.beta, attrs.free_flow_ms)
        values = self._tables.get(key)
        if values is None:
            values = materialize(attrs, self.max_flow).values
            self._tables[key] = values
        if flow <= self.max_flow:
            return values[flow]
        return bpr_travel_time(attrs, flow)
