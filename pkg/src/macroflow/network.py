"""Directed road-network model: CSV ingestion, validation, adjacency queries.

The network is immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

from .errors import NetworkFormatError, UnknownEdgeError

DEFAULT_SIGMA = 0.15
DEFAULT_BETA = 4.0

NETWORK_CSV_HEADER = "edge_id,u,v,length_m,speed_limit_mps,capacity,sigma,beta"


def round_half_up_ms(value: float) -> int:
    """Round to integer milliseconds with exact halves rounding up."""
    return math.floor(value + 0.5)


@dataclass(frozen=True, slots=True)
class EdgeAttributes:
    """Physical and latency parameters of one directed road segment.

    free_flow_ms is derived as round(1000 * length / speed_limit) and floored
    at 1 ms so that route timestamps are strictly increasing.
    """

    edge_id: int
    length_m: float
    speed_limit_mps: float
    capacity_phi: float
    sigma: float
    beta: float
    free_flow_ms: int

    @staticmethod
    def build(
        edge_id: int,
        length_m: float,
        speed_limit_mps: float,
        capacity_phi: float,
        sigma: float = DEFAULT_SIGMA,
        beta: float = DEFAULT_BETA,
    ) -> "EdgeAttributes":
        if length_m <= 0:
            raise ValueError(f"edge {edge_id}: length must be positive, got {length_m}")
        if speed_limit_mps <= 0:
            raise ValueError(f"edge {edge_id}: speed limit must be positive, got {speed_limit_mps}")
        if capacity_phi < 1:
            raise ValueError(f"edge {edge_id}: capacity must be >= 1, got {capacity_phi}")
        if sigma < 0 or beta < 0:
            raise ValueError(f"edge {edge_id}: sigma and beta must be non-negative")
        free_flow = max(1, round_half_up_ms(1000.0 * length_m / speed_limit_mps))
        return EdgeAttributes(edge_id, length_m, speed_limit_mps, capacity_phi, sigma, beta, free_flow)


class RoadNetwork:
    """Directed graph of intersections and road segments.

    At most one directed edge per ordered vertex pair. Out-edges are kept in
    ascending target-vertex order so traversal order is deterministic.
    """

    def __init__(self, edges: dict[tuple[int, int], EdgeAttributes], vertices: Iterable[int] = ()):
        self.edges: dict[tuple[int, int], EdgeAttributes] = dict(edges)
        verts = set(vertices)
        for u, v in self.edges:
            verts.add(u)
            verts.add(v)
        self.vertices: frozenset[int] = frozenset(verts)
        out: dict[int, list[tuple[int, int]]] = {v: [] for v in verts}
        inc: dict[int, list[tuple[int, int]]] = {v: [] for v in verts}
        for key in sorted(self.edges):
            out[key[0]].append(key)
            inc[key[1]].append(key)
        self._out = out
        self._in = inc

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self.edges

    def attrs(self, u: int, v: int) -> EdgeAttributes:
        try:
            return self.edges[(u, v)]
        except KeyError:
            raise UnknownEdgeError(f"no edge ({u}, {v})") from None

    def out_edges(self, v: int) -> list[tuple[int, int]]:
        """Out-edges of v ordered by target vertex id ascending."""
        try:
            return self._out[v]
        except KeyError:
            raise UnknownEdgeError(f"unknown vertex {v}") from None

    def in_edges(self, v: int) -> list[tuple[int, int]]:
        """In-edges of v ordered by source vertex id ascending."""
        try:
            return self._in[v]
        except KeyError:
            raise UnknownEdgeError(f"unknown vertex {v}") from None


def _parse_positive_int(text: str, field: str, line_no: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise NetworkFormatError(f"{field} must be an integer, got {text!r}", line_no) from None
    if value < 0:
        raise NetworkFormatError(f"{field} must be non-negative, got {value}", line_no)
    return value


def _parse_float(text: str, field: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise NetworkFormatError(f"{field} must be a number, got {text!r}", line_no) from None


def load_network(source: str | TextIO) -> RoadNetwork:
    """Load a road network from CSV text.

    Format (UTF-8, header required):
        edge_id,u,v,length_m,speed_limit_mps,capacity,sigma,beta
    one row per directed edge. Lines starting with '#' are comments; the
    optional directive '# vertices: 0,1,2' declares the vertex universe, in
    which case endpoints outside it are rejected as dangling. sigma and beta
    may be blank (or the columns omitted), falling back to 0.15 and 4.
    """
    stream = io.StringIO(source) if isinstance(source, str) else source
    declared: set[int] | None = None
    header: list[str] | None = None
    edges: dict[tuple[int, int], EdgeAttributes] = {}

    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("vertices:"):
                spec = body.split(":", 1)[1].strip()
                declared = set()
                if spec:
                    for token in spec.split(","):
                        declared.add(_parse_positive_int(token.strip(), "vertex id", line_no))
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            header = fields
            expected = NETWORK_CSV_HEADER.split(",")
            if fields[: len(expected)] != expected and fields != expected[:6]:
                raise NetworkFormatError(
                    f"bad header {line!r}, expected {NETWORK_CSV_HEADER!r} (sigma/beta optional)", line_no
                )
            continue
        if len(fields) not in (6, 8):
            raise NetworkFormatError(f"expected 6 or 8 fields, got {len(fields)}", line_no)
        edge_id = _parse_positive_int(fields[0], "edge_id", line_no)
        u = _parse_positive_int(fields[1], "u", line_no)
        v = _parse_positive_int(fields[2], "v", line_no)
        length = _parse_float(fields[3], "length_m", line_no)
        speed = _parse_float(fields[4], "speed_limit_mps", line_no)
        capacity = _parse_float(fields[5], "capacity", line_no)
        sigma = DEFAULT_SIGMA
        beta = DEFAULT_BETA
        if len(fields) == 8:
            if fields[6]:
                sigma = _parse_float(fields[6], "sigma", line_no)
            if fields[7]:
                beta = _parse_float(fields[7], "beta", line_no)
        if u == v:
            raise NetworkFormatError(f"self-loop on vertex {u}", line_no)
        if (u, v) in edges:
            raise NetworkFormatError(f"duplicate edge ({u}, {v})", line_no)
        if declared is not None:
            for endpoint in (u, v):
                if endpoint not in declared:
                    raise NetworkFormatError(
                        f"dangling endpoint: vertex {endpoint} not in declared vertex list", line_no
                    )
        try:
            edges[(u, v)] = EdgeAttributes.build(edge_id, length, speed, capacity, sigma, beta)
        except ValueError as exc:
            raise NetworkFormatError(str(exc), line_no) from None

    if header is None:
        raise NetworkFormatError("empty input: header row required")
    return RoadNetwork(edges, declared or ())


def network_to_csv(network: RoadNetwork, header_comments: Iterable[str] = ()) -> str:
    """Serialize a network back to the CSV interchange format."""
    lines = [f"# {c}" for c in header_comments]
    lines.append("# vertices: " + ",".join(str(v) for v in sorted(network.vertices)))
    lines.append(NETWORK_CSV_HEADER)
    for (u, v) in sorted(network.edges):
        a = network.edges[(u, v)]
        lines.append(
            f"{a.edge_id},{u},{v},{a.length_m:g},{a.speed_limit_mps:g},{a.capacity_phi:g},{a.sigma:g},{a.beta:g}"
        )
    return "\n".join(lines) + "\n"
